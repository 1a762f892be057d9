"""Command-line entry points.

Each run reads a JSON configuration (validated against
``schema/run_config.schema.json``), applies ``--set`` overrides, and writes
``resolved-config.json``, ``fields/`` and ``reports/`` under the output
directory.  Exit codes: 0 all enabled checks passed, 1 a check failed,
2 configuration error or refusal, 3 a run stage failed.
"""
from __future__ import annotations

import argparse
import copy
import json
import sys
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import verify as vf
from .expr import ExprError
from .flow import FAMILIES, GeneratorSpec, TransformError
from .rng import Lcg64
from .solver import (SolverConfig, SolverError, isentropic_vortex_field, pushforward_field,
                     riemann_initial_field, sample_field, solve_balance_splitting,
                     solve_conservation)
from .systems import (AnalyticField, ConservationSystem, DiscreteField, Grid,
                      SystemDefinitionError, build_euler_energy_system, build_euler_system,
                      ideal_gas_pressure)
from .transforms import (ClosedFormUnavailable, check_divergence_free, derive_closed_form,
                         invert, make_map, select_centrifugal_signs)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("derive-system", "solve", "transform", "verify", "compare", "pipeline")

DEFAULT_CHECKS = {"verify": ["identity", "round_trip", "group_law"],
                  "pipeline": ["residual", "compare"]}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, exc):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


def load_schema():
    text = resources.files("balred").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


# -- configuration -------------------------------------------------------------

def _defaults():
    return {
        "system": {"kind": "euler", "gamma": 1.4, "constants": {}, "tag": None},
        "transform": None,
        "solver": {"n": [64, 64, 1], "lo": [-5.0, -5.0, 0.0], "hi": [5.0, 5.0, 1.0],
                   "cfl": 0.4, "t_start": 0.0, "t_end": 0.5,
                   "bc": ["zero_gradient", "zero_gradient", "periodic"],
                   "integrator": "ssprk2", "snapshot_interval": None,
                   "wave_speed_bound": None, "power_iterations": 20, "max_steps": 1000000,
                   "route": "conservation", "initial_condition": {"kind": "vortex"}},
        "verify": {"seed": 0, "samples": 100, "group_b": 0.25,
                   "tolerances": {"identity": 1e-10, "round_trip": 1e-10, "group_law": 1e-10,
                                  "numeric": 1e-6, "closed_vs_flow": 1e-8,
                                  "rest_state": 1e-10, "compare": None},
                   "residual": {"h0": 4e-3, "levels": 3, "points": 200, "box": None,
                                "window": [1.7, 2.3]},
                   "compare": {"norm": "L1", "region": None, "halo": 2,
                               "components": [0, 1, 2, 3, 4]},
                   "rest_state": {"omega": 1.0, "state": [1.3, 0.0, 0.0, 0.0, 0.4]}},
        "output": {"directory": "run", "formats": ["json", "txt", "csv"]},
    }


_IC_DEFAULTS = {
    "constant": {"state": [1.0, 0.0, 0.0, 0.0, 0.0]},
    "vortex": {"center": [0.0, 0.0], "strength": 5.0, "velocity": [0.0, 0.0],
               "rho_inf": 1.0, "p_inf": 1.0},
    "sod": {"left": [1.0, 0.0, 1.0], "right": [0.125, 0.0, 0.1], "x0": 0.5},
    "riemann": {"left": [1.0, 0.0, 1.0], "right": [0.125, 0.0, 0.1], "x0": 0.5},
    "expr": {"constants": {}},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text):
    if "=" not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        val = json.loads(raw)
    except json.JSONDecodeError:
        val = raw
    return key.strip(), val


def apply_overrides(cfg, overrides):
    cfg = copy.deepcopy(cfg)
    for text in overrides:
        key, val = parse_override(text)
        parts = key.split(".")
        node = cfg
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = val
    return cfg


def _validate(cfg, schema):
    v = jsonschema.Draft202012Validator(schema)
    errs = sorted(v.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errs:
        e = errs[0]
        where = ".".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {e.message}")


def resolve_config(user: dict, command: str, schema=None) -> dict:
    """Validate, fill defaults, and validate again."""
    schema = schema or load_schema()
    _validate(user, schema)
    cfg = _merge(_defaults(), {k: v for k, v in user.items() if k != "transform"})
    if user.get("transform") is not None:
        cfg["transform"] = _merge({"a": 0.0, "payload": {}, "constants": {},
                                   "direction": "forward"}, user["transform"])
    sysc = cfg["system"]
    if sysc["kind"] == "euler":
        sysc.setdefault("pressure", ideal_gas_pressure(sysc["gamma"]))
    elif sysc["kind"] == "custom" and "fluxes" not in sysc:
        raise ConfigError("custom system needs 'fluxes' (12 expressions)")
    ic = cfg["solver"]["initial_condition"]
    ic_user = user.get("solver", {}).get("initial_condition", {})
    kind = ic.get("kind", "vortex")
    base = dict(_IC_DEFAULTS[kind])
    if kind in ("vortex", "sod", "riemann"):
        base["gamma"] = sysc["gamma"]
    if kind in ("sod", "riemann"):
        base["energy_form"] = sysc["kind"] == "euler_energy"
    cfg["solver"]["initial_condition"] = _merge(_merge(base, {"kind": kind}), ic_user)
    if kind == "expr" and "components" not in cfg["solver"]["initial_condition"]:
        raise ConfigError("expr initial condition needs 'components' (5 expressions)")
    if "checks" not in cfg["verify"]:
        cfg["verify"]["checks"] = list(DEFAULT_CHECKS.get(command, []))
    _validate(cfg, schema)
    return cfg


# -- builders ----------------------------------------------------------------------

def build_system(cfg) -> ConservationSystem:
    s = cfg["system"]
    if s["kind"] == "euler":
        P = build_euler_system(s["pressure"], s.get("constants") or None)
    elif s["kind"] == "euler_energy":
        P = build_euler_energy_system(s["gamma"])
    else:
        P = ConservationSystem(s["fluxes"], s.get("constants"), tag=s.get("tag"))
    if s.get("tag") is not None:
        P.tag = s["tag"]
    return P


def build_spec(cfg):
    t = cfg.get("transform")
    if t is None:
        return None
    consts = {**(cfg["system"].get("constants") or {}), **t["constants"]}
    return GeneratorSpec(t["family"], dict(t["payload"]), t["a"], consts)


def build_map(cfg):
    spec = build_spec(cfg)
    if spec is None:
        return None
    m = make_map(spec)
    return invert(m) if cfg["transform"]["direction"] == "reduce" else m


def build_ic(cfg):
    """Initial/exact field and whether it solves the autonomous system exactly."""
    ic = cfg["solver"]["initial_condition"]
    k = ic["kind"]
    if k == "constant":
        return AnalyticField.constant(ic["state"]), True
    if k == "vortex":
        return isentropic_vortex_field(ic["center"], ic["strength"], ic["velocity"], ic["gamma"],
                                       ic["rho_inf"], ic["p_inf"]), True
    if k in ("sod", "riemann"):
        return riemann_initial_field(ic["left"], ic["right"], ic["x0"], ic["gamma"],
                                     ic["energy_form"]), False
    return AnalyticField.from_exprs(ic["components"], ic.get("constants")), False


def build_solver_config(cfg) -> SolverConfig:
    s = cfg["solver"]
    bc = s["bc"] if isinstance(s["bc"], str) else tuple(s["bc"])
    return SolverConfig(n=tuple(s["n"]), lo=tuple(s["lo"]), hi=tuple(s["hi"]), cfl=s["cfl"],
                        t_start=s["t_start"], t_end=s["t_end"], bc=bc,
                        integrator=s["integrator"], snapshot_interval=s["snapshot_interval"],
                        wave_speed_bound=s["wave_speed_bound"],
                        power_iterations=s["power_iterations"], max_steps=s["max_steps"])


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ConfigError, ClosedFormUnavailable):
        raise
    except Exception as exc:  # noqa: BLE001 - relabelled for the user
        raise StageError(name, exc) from exc


# -- output helpers ------------------------------------------------------------------

class Run:
    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.root = Path(cfg["output"]["directory"])
        self.fields = self.root / "fields"
        self.reports = self.root / "reports"
        self.formats = set(cfg["output"]["formats"])
        self.results = []
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "resolved-config.json").write_text(
            json.dumps(cfg, indent=2, sort_keys=True) + "\n")

    def report(self, name, rep, passed=None):
        paths = vf.write_report(self.reports, name, rep)
        for fmt, p in paths.items():
            if fmt not in self.formats:
                Path(p).unlink(missing_ok=True)
        if passed is not None:
            self.results.append({"check": name, "passed": bool(passed)})
            print(f"{'PASS' if passed else 'FAIL'}  {name}")

    def field(self, name, fld: DiscreteField):
        return fld.write(self.fields / name)

    def finish(self):
        ok = all(r["passed"] for r in self.results)
        vf.write_report(self.reports, "summary", {"command": self.command, "checks": self.results,
                                                  "all_passed": ok})
        return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- commands ----------------------------------------------------------------------

def cmd_derive_system(cfg, run: Run):
    P = build_system(cfg)
    spec = build_spec(cfg)
    if spec is None:
        raise ConfigError("derive-system needs a transform section")
    B = derive_closed_form(P, spec)
    doc = B.to_json()
    doc["transform"] = spec.to_json()
    doc["kind"] = "conservation" if isinstance(B, ConservationSystem) else "balance"
    run.reports.mkdir(parents=True, exist_ok=True)
    (run.reports / "derived-system.json").write_text(json.dumps(doc, indent=2) + "\n")
    if isinstance(B, ConservationSystem):
        lines = [f"P{i + 1:<3}= {e}" for i, e in enumerate(B.fluxes)]
    else:
        lines = [f"p{i + 1:<3}= {e}" for i, e in enumerate(B.exprs)]
    (run.reports / "derived-system.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return run.finish()


def cmd_solve(cfg, run: Run):
    P = build_system(cfg)
    ic, _ = build_ic(cfg)
    scfg = build_solver_config(cfg)
    if cfg["solver"]["route"] == "splitting":
        t = build_map(cfg)
        if t is None:
            raise ConfigError("splitting route needs a transform (the induced system is solved)")
        B = _stage("derive", t.balance_system, P)
        F = _stage("solve_balance_splitting", solve_balance_splitting, B,
                   pushforward_field(t, ic), scfg)
    else:
        F = _stage("solve_conservation", solve_conservation, P, ic, scfg)
    run.field("solution", F)
    run.report("solve", F.meta)
    return run.finish()


def cmd_transform(cfg, run: Run):
    t = build_map(cfg)
    if t is None:
        raise ConfigError("transform command needs a transform section")
    ic, _ = build_ic(cfg)
    scfg = build_solver_config(cfg)
    fld = pushforward_field(t, ic)
    D = _stage("pushforward", sample_field, fld, scfg.grid, scfg.snapshot_times(),
               tuple(b == "periodic" for b in scfg.bcs))
    run.field("transformed", D)
    run.report("transform", {"transform": cfg["transform"], "symbolic": t.symbolic,
                             "times": list(D.times)})
    return run.finish()


def _residual_points(cfg, n, seed, t=None):
    v = cfg["verify"]["residual"]
    if v["box"] is not None:
        box = v["box"]
    else:
        s = cfg["solver"]
        t0, t1 = s["t_start"], s["t_end"]
        box = [[t0, t1 if t1 > t0 else t0 + 1.0]]
        for lo, hi in zip(s["lo"], s["hi"]):
            m = 0.1 * (hi - lo)
            box.append([lo + m, hi - m])
    lo = [b[0] for b in box]
    hi = [b[1] for b in box]
    return Lcg64(seed).box(lo, hi, n)


def run_checks(cfg, run: Run, checks):
    """Map-level and residual checks; returns nothing, records results."""
    v = cfg["verify"]
    seed, n = v["seed"], v["samples"]
    tol = v["tolerances"]
    spec = build_spec(cfg)
    needs_map = {"identity", "round_trip", "group_law", "closed_vs_flow"}
    if spec is None and needs_map & set(checks):
        raise ConfigError(f"checks {sorted(needs_map & set(checks))} need a transform section")
    t = make_map(spec) if spec is not None else None
    sym = t.symbolic if t is not None else True
    for name in checks:
        if name == "identity":
            r = _stage(name, vf.identity_check, spec, n, seed,
                       tol["identity"] if sym else tol["numeric"])
        elif name == "round_trip":
            r = _stage(name, vf.round_trip_check, spec, n, seed,
                       tol["round_trip"] if sym else tol["numeric"])
        elif name == "group_law":
            method = "closed" if sym else "flow"
            r = _stage(name, vf.group_law_check, spec, spec.a, v["group_b"], n, seed, method,
                       tol=tol["group_law"] if sym else tol["numeric"])
        elif name == "closed_vs_flow":
            r = _stage(name, vf.closed_vs_flow, spec, n, seed, tol=tol["closed_vs_flow"])
        elif name == "divergence":
            if spec is None or spec.family != "XI11":
                raise ConfigError("divergence check applies to XI11 transforms")
            r = _stage(name, check_divergence_free,
                       [spec.fn(f"g{k}") for k in range(1, 5)])
        elif name == "residual":
            P = build_system(cfg)
            ic, exact = build_ic(cfg)
            sysm = _stage("derive", t.balance_system, P) if t is not None else P
            fld = pushforward_field(t, ic) if t is not None else ic
            rv = v["residual"]
            pts = _residual_points(cfg, rv["points"], seed)
            r = _stage(name, vf.residual_convergence, sysm, fld, pts, rv["h0"], rv["levels"],
                       tuple(rv["window"]), seed=seed,
                       label="exact source solution" if exact else "non-exact initial data")
        elif name == "rest_state":
            rs = v["rest_state"]
            P = build_system(cfg)
            pressure = getattr(P, "pressure", None)
            res = _stage(name, select_centrifugal_signs, rs["omega"], pressure,
                         cfg["system"].get("constants") or None, tuple(rs["state"]), seed)
            r = {k: (v_ if k != "residuals" else {f"{a:+d},{b:+d}": x for (a, b), x in v_.items()})
                 for k, v_ in res.items()}
            r["selected"] = list(res["selected"])
            sel = res["residuals"][res["selected"]]
            r["passed"] = bool(sel < tol["rest_state"])
            run.report(name, r, r["passed"])
            continue
        elif name == "compare":
            continue
        else:  # pragma: no cover - schema guards
            raise ConfigError(f"unknown check {name}")
        run.report(name, r, r.passed)


def cmd_verify(cfg, run: Run):
    checks = cfg["verify"]["checks"]
    if "compare" in checks:
        print("note: 'compare' runs in the pipeline command; skipped here")
    run_checks(cfg, run, [c for c in checks if c != "compare"])
    return run.finish()


def _compare_region(cfg):
    r = cfg["verify"]["compare"]["region"]
    if r is not None:
        return Grid(r["lo"], r["hi"], r["n"])
    s = cfg["solver"]
    lo, hi, n = [], [], []
    for a, b, k in zip(s["lo"], s["hi"], s["n"]):
        if k > 1:
            q = 0.25 * (b - a)
            lo.append(a + q)
            hi.append(b - q)
            n.append(max(1, k // 2))
        else:
            lo.append(a)
            hi.append(b)
            n.append(1)
    return Grid(lo, hi, n)


def cmd_pipeline(cfg, run: Run):
    P = build_system(cfg)
    t = build_map(cfg)
    if t is None:
        raise ConfigError("pipeline needs a transform section")
    ic, _ = build_ic(cfg)
    scfg = build_solver_config(cfg)
    checks = cfg["verify"]["checks"]
    A = _stage("solve_conservation", solve_conservation, P, ic, scfg)
    run.field("route_a_source_frame", A)
    fa = pushforward_field(t, A)
    # the comparison region stays inside the pre-image of the source grid
    run.field("route_a_pushed", _stage("pushforward", sample_field, fa, _compare_region(cfg),
                                       list(A.times), (False, False, False)))
    run_checks(cfg, run, [c for c in checks if c != "compare"])
    if "compare" in checks:
        B = _stage("derive", t.balance_system, P)
        Fb = _stage("solve_balance_splitting", solve_balance_splitting, B,
                    pushforward_field(t, ic), scfg)
        run.field("route_b_splitting", Fb)
        c = cfg["verify"]["compare"]
        region = _compare_region(cfg)
        d = _stage("compare", vf.compare_fields, fa, Fb, c["norm"], region, scfg.t_end,
                   tuple(c["components"]), c["halo"])
        tol = cfg["verify"]["tolerances"]["compare"]
        passed = True if tol is None else d <= tol
        run.report("compare", {"norm": c["norm"], "difference": d, "tolerance": tol,
                               "time": scfg.t_end, "region": region.to_json(),
                               "halo": c["halo"], "passed": passed}, passed)
    return run.finish()


def cmd_compare(cfg, run: Run, a_path, b_path):
    fa = DiscreteField.read(a_path)
    fb = DiscreteField.read(b_path)
    c = cfg["verify"]["compare"]
    region = Grid(**c["region"]) if c["region"] else fa.grid
    times = sorted(set(float(t) for t in fa.times) & set(float(t) for t in fb.times))
    if not times:
        raise ConfigError("fields share no snapshot time")
    rows = {}
    for tt in times:
        rows[repr(tt)] = _stage("compare", vf.compare_fields, fa, fb, c["norm"], region, tt,
                                tuple(c["components"]), c["halo"])
    tol = cfg["verify"]["tolerances"]["compare"]
    final = rows[repr(times[-1])]
    passed = True if tol is None else final <= tol
    run.report("compare", {"norm": c["norm"], "by_time": rows, "final": final,
                           "tolerance": tol, "passed": passed}, passed)
    return run.finish()


# -- entry point -----------------------------------------------------------------------

def _parser():
    ap = argparse.ArgumentParser(prog="balred", description="Balance-law equivalence toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a dotted config key (value parsed as JSON if possible)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--seed", type=int, help="sampling seed")
        if name == "compare":
            p.add_argument("field_a", type=Path, help="sidecar JSON of the first field")
            p.add_argument("field_b", type=Path, help="sidecar JSON of the second field")
    return ap


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        user = json.loads(args.config.read_text()) if args.config else {}
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        user = apply_overrides(user, args.set)
        if args.out is not None:
            user.setdefault("output", {})["directory"] = str(args.out)
        if args.seed is not None:
            user.setdefault("verify", {})["seed"] = args.seed
        cfg = resolve_config(user, args.command)
        run = Run(cfg, args.command)
        cmd = {"derive-system": cmd_derive_system, "solve": cmd_solve,
               "transform": cmd_transform, "verify": cmd_verify,
               "pipeline": cmd_pipeline}.get(args.command)
        if cmd is None:
            return cmd_compare(cfg, run, args.field_a, args.field_b)
        return cmd(cfg, run)
    except ClosedFormUnavailable as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, json.JSONDecodeError, OSError, TransformError, ExprError,
            SystemDefinitionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
