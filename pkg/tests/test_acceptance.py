"""Acceptance suite: nine criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` (lines appear in the summary)
or ``python3 tests/test_acceptance.py``.
"""
import math
import time

import numpy as np

from balred.expr import Compiled, diff_expr, parse_expr, to_string
from balred.flow import GeneratorSpec
from balred.rng import Lcg64
from balred.solver import (SolverConfig, isentropic_vortex_field, pushforward_field,
                           riemann_initial_field, solve_balance_splitting, solve_conservation)
from balred.systems import (AnalyticField, Grid, build_euler_energy_system, build_euler_system,
                            ideal_gas_pressure)
from balred.transforms import (check_divergence_free, derive_closed_form, make_map,
                               rotating_gravity_system, select_centrifugal_signs)
from balred.verify import (closed_vs_flow, compare_fields, exact_riemann_euler,
                           group_law_check, identity_check, residual_convergence,
                           round_trip_check)

import conftest
from corpus import DIFF_CORPUS, DIVERGENCE_FREE, DIVERGENCE_VIOLATIONS, FAMILY_CORPUS

PRESSURE = ideal_gas_pressure(1.4)


def _record(num, title, ok, detail, elapsed, limit):
    ok = ok and elapsed < limit
    line = (f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {title}: {detail}; "
            f"{elapsed:.1f} s (limit {limit:g} s)")
    conftest.ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_group_axioms():
    t0 = time.perf_counter()
    worst, failures, n = 0.0, [], 0
    for fam, payloads in FAMILY_CORPUS.items():
        for pl in payloads:
            spec = GeneratorSpec(fam, pl, 0.3)
            for rep in (identity_check(spec), round_trip_check(spec),
                        group_law_check(spec, 0.3, 0.4)):
                n += 1
                worst = max(worst, rep.value)
                if not rep.passed:
                    failures.append(f"{rep.name} {pl}")
    el = time.perf_counter() - t0
    _record(1, "group axioms", not failures and worst < 1e-10,
            f"{n} checks, worst {worst:.2e} (tol 1e-10)", el, 10)


def test_criterion_2_closed_vs_flow():
    t0 = time.perf_counter()
    specs = [GeneratorSpec("XI1", {"f": f}, 0.3) for f in ("1", "x1", "x1^2")]
    specs.append(GeneratorSpec("EULER_COMPOSED", {"m1": "0", "m2": "0.7*a", "m3": "0"}, 0.3))
    reps = [closed_vs_flow(s, steps=256) for s in specs]
    worst = max(r.value for r in reps)
    el = time.perf_counter() - t0
    _record(2, "closed form vs Lie flow", all(r.passed for r in reps) and worst < 1e-8,
            f"worst {worst:.2e} (tol 1e-8)", el, 10)


def test_criterion_3_residual_transfer():
    t0 = time.perf_counter()
    P = build_euler_system(PRESSURE)
    vortex = isentropic_vortex_field(strength=5.0, velocity=(0.5, 0.3), p_inf=1.5)
    spec = GeneratorSpec("EULER_COMPOSED", {"m1": "0", "m2": "0.5*x1", "m3": "0",
                                            "x1_map": "x1", "x1_inverse": "x1"}, 0.0)
    t = make_map(spec)
    target = t.balance_system(P)
    pushed = pushforward_field(t, vortex)
    pts = Lcg64(5).box([0, -2, -2, -1], [1, 2, 2, 1], 200)
    rep = residual_convergence(target, pushed, pts, 4e-3, levels=3, window=(1.7, 2.3))
    el = time.perf_counter() - t0
    order = "exact" if rep.exact else f"{rep.order:.3f}"
    _record(3, "residual transfer", rep.passed and not rep.exact,
            f"order {order} in [1.7, 2.3], errors "
            + ", ".join(f"{e:.2e}" for e in rep.errors), el, 30)


def test_criterion_4_sign_resolution():
    t0 = time.perf_counter()
    omega = 1.0
    rep = select_centrifugal_signs(omega=omega, pressure=PRESSURE)
    sel = rep["selected"]
    res = rep["residuals"]
    r_sel = res[sel]
    r_other = min(v for k, v in res.items() if k != sel)
    el = time.perf_counter() - t0
    ok = r_sel < 1e-10 and r_other >= 0.5 * omega ** 2
    _record(4, "sign resolution", ok,
            f"selected {sel} residual {r_sel:.1e}, opposite signs >= {r_other:.2f}; "
            f"matches displayed system: {rep['matches_displayed_system']}, "
            f"matches general formula: {rep['matches_general_formula']}", el, 5)


def test_criterion_5_gravity():
    t0 = time.perf_counter()
    P = build_euler_system(PRESSURE)
    spec = GeneratorSpec("EULER_COMPOSED", {"m1": "0", "m2": "0", "m3": "g*x1^2/2",
                                            "x1_map": "x1", "x1_inverse": "x1"}, 0.0,
                         {"g": 9.81})
    B = derive_closed_form(P, spec)
    p15 = B.exprs[14]
    diff = Compiled([parse_expr(f"({to_string(p15)}) - g*u1", None)],
                    ("x1", "x2", "x3", "x4", "u1", "u2", "u3", "u4", "u5", "g"))
    g = Lcg64(11)
    X = g.box([0, -1, -1, -1], [1, 1, 1, 1], 1000)
    U = g.box([0.5, -0.5, -0.5, -0.5, 0.1], [1.5, 0.5, 0.5, 0.5, 0.9], 1000)
    vals = diff.array(*X, *U, np.full(1000, 9.81))[0]
    worst = float(np.max(np.abs(vals)))
    el = time.perf_counter() - t0
    _record(5, "gravity specialization", worst < 1e-12,
            f"p15 = {to_string(p15)}, max |p15 - g u1| = {worst:.1e}", el, 5)


def test_criterion_6_two_routes():
    t0 = time.perf_counter()
    P = build_euler_system(PRESSURE)
    vortex = isentropic_vortex_field(strength=5.0, velocity=(0.0, 0.0), p_inf=1.5)
    spec = GeneratorSpec("EULER_COMPOSED", {"m1": "0", "m2": "omega*x1", "m3": "0"}, 0.0,
                         {"omega": 0.5})
    t = make_map(spec)
    rot = rotating_gravity_system(0.5, 0.0, PRESSURE)
    ic_rot = pushforward_field(t, vortex)
    region = Grid((-2, -2, 0), (2, 2, 1), (64, 64, 1))
    diffs = []
    for n in (64, 128):
        cfg = SolverConfig(n=(n, n, 1), lo=(-4, -4, 0), hi=(4, 4, 1), t_end=1.0,
                           bc=("zero_gradient", "zero_gradient", "periodic"))
        route_a = pushforward_field(t, solve_conservation(P, vortex, cfg))
        route_b = solve_balance_splitting(rot, ic_rot, cfg)
        diffs.append(compare_fields(route_a, route_b, "L1", region, t=1.0, halo=0))
    ratio = diffs[0] / diffs[1]
    el = time.perf_counter() - t0
    _record(6, "two-route consistency", ratio >= 1.5,
            f"L1 difference {diffs[0]:.4f} (64^2) -> {diffs[1]:.4f} (128^2), "
            f"ratio {ratio:.3f} (need >= 1.5)", el, 300)


def test_criterion_7_solver_sanity():
    t0 = time.perf_counter()
    P = build_euler_system(PRESSURE)
    cfg = SolverConfig(n=(16, 12, 1), lo=(-1, -1, 0), hi=(1, 1, 1), t_end=0.3)
    F = solve_conservation(P, AnalyticField.constant((1.2, 0.3, -0.1, 0.0, 0.5)), cfg)
    const_err = float(np.max(np.abs(F.data[-1] - F.data[0])))

    vortex = isentropic_vortex_field(strength=5.0, velocity=(0.5, 0.3), p_inf=1.5)
    cfg = SolverConfig(n=(40, 40, 1), lo=(-5, -5, 0), hi=(5, 5, 1), t_end=0.5)
    F = solve_conservation(P, vortex, cfg)
    s0 = F.data[0].sum(axis=(1, 2, 3))
    s1 = F.data[-1].sum(axis=(1, 2, 3))
    cons_err = float(np.max(np.abs(s1 - s0) / np.maximum(np.abs(s0), 1.0)))

    E = build_euler_energy_system(1.4)
    cfg = SolverConfig(n=(400, 1, 1), lo=(0, 0, 0), hi=(1, 1, 1), t_end=0.2, cfl=0.8,
                       bc=("zero_gradient", "periodic", "periodic"))
    S = solve_conservation(E, riemann_initial_field((1, 0, 1), (0.125, 0, 0.1)), cfg)
    exact = exact_riemann_euler((1, 0, 1), (0.125, 0, 0.1))
    x = S.grid.axis_centers(0)
    rho, _, _ = exact.sample((x - 0.5) / 0.2)
    sod = float(np.sum(np.abs(S.data[-1, 0, :, 0, 0] - rho)) * S.grid.spacing[0])
    el = time.perf_counter() - t0
    _record(7, "solver sanity", const_err <= 1e-14 and cons_err < 1e-12 and sod < 0.02,
            f"constant {const_err:.1e}, conservation {cons_err:.1e}, Sod density L1 {sod:.4f}",
            el, 60)


def test_criterion_8_expression_layer():
    t0 = time.perf_counter()
    g = Lcg64(8)
    worst = 0.0
    roundtrip_ok = True
    for text, names in DIFF_CORPUS:
        e = parse_expr(text)
        roundtrip_ok &= parse_expr(to_string(e)) == e
        lo = [0.5 if v == "u1" else -1.0 for v in names]
        hi = [1.5 if v == "u1" else 1.0 for v in names]
        pts = g.box(lo, hi, 100)
        f = Compiled([e], names)
        for j, v in enumerate(names):
            d = diff_expr(e, v)
            roundtrip_ok &= parse_expr(to_string(d)) == d
            exact = Compiled([d], names).array(*pts)[0]
            h = 1e-5
            up, dn = pts.copy(), pts.copy()
            up[j] += h
            dn[j] -= h
            fd = (f.array(*up)[0] - f.array(*dn)[0]) / (2 * h)
            worst = max(worst, float(np.max(np.abs(fd - exact) / np.maximum(1.0, np.abs(exact)))))
    el = time.perf_counter() - t0
    _record(8, "expression layer", worst < 1e-6 and roundtrip_ok,
            f"{len(DIFF_CORPUS)} expressions, worst FD relative error {worst:.1e}, "
            f"round trip {'exact' if roundtrip_ok else 'broken'}", el, 5)


def test_criterion_9_divergence():
    t0 = time.perf_counter()
    accepted = [check_divergence_free(g) for g in DIVERGENCE_FREE]
    rejected = [check_divergence_free(g) for g in DIVERGENCE_VIOLATIONS]
    ok = all(r.passed for r in accepted) and all(
        (not r.passed) and r.max_abs > 0 for r in rejected)
    el = time.perf_counter() - t0
    _record(9, "constraint enforcement", ok,
            f"{sum(r.passed for r in accepted)}/{len(accepted)} accepted, "
            f"{sum(not r.passed for r in rejected)}/{len(rejected)} rejected "
            f"(min reported max-|div| {min(r.max_abs for r in rejected):.2f})", el, 5)


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion"):
            try:
                fn()
            except AssertionError:
                failed += 1
    raise SystemExit(1 if failed else 0)
