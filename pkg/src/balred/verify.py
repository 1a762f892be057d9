"""Oracles and check harnesses.

Every sampled check draws its points from :class:`~balred.rng.Lcg64` with a
recorded seed, so reports are reproducible on any platform.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .flow import GeneratorSpec, lie_flow
from .rng import Lcg64
from .systems import Field, Grid, residual
from .transforms import invert, make_map

X_BOX = ((0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0))
U_BOX = ((0.5, 1.5), (-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5))


@dataclass
class CheckReport:
    name: str
    value: float
    tol: float
    passed: bool
    seed: int | None = None
    samples: int | None = None
    details: dict = field(default_factory=dict)

    def to_json(self):
        return asdict(self)

    def line(self):
        return (f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e}"
                f" (tol {self.tol:.1e})")


def sample_points(n, seed=0, x_box=X_BOX, u_box=U_BOX):
    """Seeded (X, U) samples of shape (4, n) and (5, n)."""
    g = Lcg64(seed)
    X = g.box([b[0] for b in x_box], [b[1] for b in x_box], n)
    U = g.box([b[0] for b in u_box], [b[1] for b in u_box], n)
    return X, U


def _err(a, b):
    """Max of |a - b| / max(1, |b|) over all entries."""
    a = np.asarray(a)
    b = np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0


def _apply(spec, X, U, method, steps):
    if method == "flow":
        x, u, _ = lie_flow(spec, X, U, steps=steps)
        return x, u
    return make_map(spec).forward(X, U)


def group_law_check(spec: GeneratorSpec, a: float, b: float, samples: int = 100, seed: int = 0,
                    method: str = "closed", steps: int = 256, tol: float = 1e-10,
                    x_box=X_BOX, u_box=U_BOX) -> CheckReport:
    """``map(a)(map(b)(X, U))`` against ``map(a + b)(X, U)``."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    X, U = sample_points(samples, seed, x_box, u_box)
    x1, u1 = _apply(spec.with_a(b), X, U, method, steps)
    x2, u2 = _apply(spec.with_a(a), x1, u1, method, steps)
    x3, u3 = _apply(spec.with_a(a + b), X, U, method, steps)
    e = max(_err(x2, x3), _err(u2, u3))
    return CheckReport(f"group law {spec.family} a={a} b={b} ({method})", e, tol, e < tol,
                       seed, samples)


def identity_check(spec: GeneratorSpec, samples=100, seed=0, tol=1e-10,
                   x_box=X_BOX, u_box=U_BOX) -> CheckReport:
    X, U = sample_points(samples, seed, x_box, u_box)
    x, u = make_map(spec.with_a(0.0)).forward(X, U)
    e = max(_err(x, X), _err(u, U))
    return CheckReport(f"identity at a=0 {spec.family}", e, tol, e < tol, seed, samples)


def round_trip_check(spec: GeneratorSpec, samples=100, seed=0, tol=1e-10,
                     x_box=X_BOX, u_box=U_BOX) -> CheckReport:
    X, U = sample_points(samples, seed, x_box, u_box)
    t = make_map(spec)
    x, u = t.forward(X, U)
    Xb, Ub = invert(t).forward(x, u)
    e = max(_err(Xb, X), _err(Ub, U))
    return CheckReport(f"round trip a={spec.a} {spec.family}", e, tol, e < tol, seed, samples)


def closed_vs_flow(spec: GeneratorSpec, samples=100, seed=0, steps=256, tol=1e-8,
                   x_box=X_BOX, u_box=U_BOX) -> CheckReport:
    X, U = sample_points(samples, seed, x_box, u_box)
    xc, uc = make_map(spec).forward(X, U)
    xf, uf, _ = lie_flow(spec, X, U, steps=steps)
    e = max(_err(xc, xf), _err(uc, uf))
    return CheckReport(f"closed form vs Lie flow {spec.family}", e, tol, e < tol, seed, samples,
                       {"steps": steps})


# -- residual convergence -------------------------------------------------------------

@dataclass
class ConvergenceReport:
    hs: list
    errors: list
    order: float | None
    window: tuple
    passed: bool
    exact: bool = False
    seed: int | None = None
    label: str = ""

    def to_json(self):
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    def table(self):
        rows = [f"{'h':>12} {'error':>14} {'rate':>8}"]
        for i, (h, e) in enumerate(zip(self.hs, self.errors)):
            rate = ""
            if i and e > 0 and self.errors[i - 1] > 0:
                rate = f"{math.log(self.errors[i - 1] / e) / math.log(self.hs[i - 1] / h):8.3f}"
            rows.append(f"{h:12.4e} {e:14.6e} {rate:>8}")
        o = "exact" if self.exact else f"{self.order:.3f}"
        rows.append(f"fitted order {o}; window {list(self.window)}; "
                    f"{'PASS' if self.passed else 'FAIL'}")
        return "\n".join(rows)


def fit_order(hs, errors):
    """Least-squares slope of log(error) against log(h)."""
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


def residual_convergence(system, fld: Field, points, h0: float, levels: int = 3,
                         window=(1.7, 2.3), exact_tol: float = 1e-11, seed=None,
                         label="") -> ConvergenceReport:
    """Max-norm residual at FD steps ``h0 / 2**k``, with a fitted order.

    Steps apply to all four directions.  A field whose residual vanishes at
    every level is reported as exact (and passes).
    """
    if levels < 3:
        raise ValueError("need at least three refinement levels")
    pts = np.asarray(points, dtype=float)
    hs = [h0 / 2 ** k for k in range(levels)]
    errs = [float(np.max(np.abs(residual(system, fld, pts, np.full(4, h))))) for h in hs]
    if max(errs) <= exact_tol:
        return ConvergenceReport(hs, errs, None, tuple(window), True, True, seed, label)
    if min(errs) <= 0:
        return ConvergenceReport(hs, errs, None, tuple(window), False, False, seed, label)
    order = fit_order(hs, errs)
    ok = window[0] <= order <= window[1]
    return ConvergenceReport(hs, errs, order, tuple(window), ok, False, seed, label)


# -- exact Riemann solver ---------------------------------------------------------------

@dataclass
class RiemannSolution:
    left: tuple
    right: tuple
    gamma: float
    p_star: float
    u_star: float
    iterations: int

    def _side(self, rho, p, c, left):
        g = self.gamma
        ps = self.p_star
        if ps > p:  # shock
            rho_s = rho * ((ps / p + (g - 1) / (g + 1)) / ((g - 1) / (g + 1) * ps / p + 1))
            return "shock", rho_s
        return "rarefaction", rho * (ps / p) ** (1.0 / g)

    def waves(self):
        rl, ul, pl = self.left
        rr, ur, pr = self.right
        g = self.gamma
        cl, cr = math.sqrt(g * pl / rl), math.sqrt(g * pr / rr)
        kl, rsl = self._side(rl, pl, cl, True)
        kr, rsr = self._side(rr, pr, cr, False)
        out = {"p_star": self.p_star, "u_star": self.u_star,
               "rho_star_left": rsl, "rho_star_right": rsr, "left_wave": kl, "right_wave": kr}
        if kl == "shock":
            out["left_shock_speed"] = ul - cl * math.sqrt((g + 1) / (2 * g) * self.p_star / pl
                                                         + (g - 1) / (2 * g))
        if kr == "shock":
            out["right_shock_speed"] = ur + cr * math.sqrt((g + 1) / (2 * g) * self.p_star / pr
                                                          + (g - 1) / (2 * g))
        return out

    def sample(self, xi):
        """Primitive ``(rho, u, p)`` at similarity coordinates ``xi = (x - x0) / t``."""
        xi = np.asarray(xi, dtype=float)
        g = self.gamma
        rl, ul, pl = self.left
        rr, ur, pr = self.right
        ps, us = self.p_star, self.u_star
        w = self.waves()
        rho = np.empty_like(xi)
        u = np.empty_like(xi)
        p = np.empty_like(xi)
        for side in ("L", "R"):
            if side == "L":
                r0, u0, p0, sgn, mask = rl, ul, pl, -1.0, xi < us
                kind, rs = w["left_wave"], w["rho_star_left"]
            else:
                r0, u0, p0, sgn, mask = rr, ur, pr, 1.0, xi >= us
                kind, rs = w["right_wave"], w["rho_star_right"]
            c0 = math.sqrt(g * p0 / r0)
            z = xi[mask]
            rr_ = np.full_like(z, rs)
            uu = np.full_like(z, us)
            pp = np.full_like(z, ps)
            if kind == "shock":
                S = w["left_shock_speed" if side == "L" else "right_shock_speed"]
                out = (z < S) if side == "L" else (z > S)
            else:
                cs = c0 * (ps / p0) ** ((g - 1) / (2 * g))
                head = u0 + sgn * c0
                tail = us + sgn * cs
                out = (z < head) if side == "L" else (z > head)
                fan = ~out & ((z < tail) if side == "L" else (z > tail))
                zf = z[fan]
                c = 2 / (g + 1) * (c0 - sgn * (g - 1) / 2 * (u0 - zf))
                uu[fan] = 2 / (g + 1) * (-sgn * c0 + (g - 1) / 2 * u0 + zf)
                rr_[fan] = r0 * (c / c0) ** (2 / (g - 1))
                pp[fan] = p0 * (c / c0) ** (2 * g / (g - 1))
            rr_[out], uu[out], pp[out] = r0, u0, p0
            rho[mask], u[mask], p[mask] = rr_, uu, pp
        return rho, u, p

    def rankine_hugoniot_defect(self):
        """Max relative jump-condition defect over the returned shocks (0 if none)."""
        g = self.gamma
        w = self.waves()
        worst = 0.0
        for side in ("left", "right"):
            if w[f"{side}_wave"] != "shock":
                continue
            S = w[f"{side}_shock_speed"]
            r0, u0, p0 = self.left if side == "left" else self.right
            r1, u1, p1 = w[f"rho_star_{side}"], self.u_star, self.p_star

            def flux(r, u, p):
                E = p / (g - 1) + 0.5 * r * u * u
                return np.array([r * u, r * u * u + p, u * (E + p)]), np.array([r, r * u, E])

            F0, Q0 = flux(r0, u0, p0)
            F1, Q1 = flux(r1, u1, p1)
            d = (F1 - F0) - S * (Q1 - Q0)
            worst = max(worst, float(np.max(np.abs(d) / np.maximum(1.0, np.abs(F0)))))
        return worst


def exact_riemann_euler(left, right, gamma: float = 1.4, tol: float = 1e-12,
                        max_iter: int = 100) -> RiemannSolution:
    """Exact ideal-gas Riemann solution from primitive states ``(rho, u, p)``.

    Newton iteration on the pressure function to relative change ``tol``.
    """
    rl, ul, pl = (float(v) for v in left)
    rr, ur, pr = (float(v) for v in right)
    if min(rl, rr, pl, pr) <= 0:
        raise ValueError("densities and pressures must be positive")
    g = gamma
    cl, cr = math.sqrt(g * pl / rl), math.sqrt(g * pr / rr)
    if 2 * (cl + cr) / (g - 1) <= ur - ul:
        raise ValueError("initial data generate vacuum")

    def fk(p, r, pk, c):
        if p > pk:
            A, B = 2 / ((g + 1) * r), (g - 1) / (g + 1) * pk
            q = math.sqrt(A / (p + B))
            return (p - pk) * q, q * (1 - 0.5 * (p - pk) / (p + B))
        f = 2 * c / (g - 1) * ((p / pk) ** ((g - 1) / (2 * g)) - 1)
        return f, (p / pk) ** (-(g + 1) / (2 * g)) / (r * c)

    # two-rarefaction starting guess
    z = (g - 1) / (2 * g)
    p = ((cl + cr - 0.5 * (g - 1) * (ur - ul)) / (cl / pl ** z + cr / pr ** z)) ** (1 / z)
    p = max(p, 1e-14)
    it = 0
    for it in range(1, max_iter + 1):
        f1, d1 = fk(p, rl, pl, cl)
        f2, d2 = fk(p, rr, pr, cr)
        pn = p - (f1 + f2 + ur - ul) / (d1 + d2)
        pn = max(pn, 1e-14)
        if abs(pn - p) <= tol * 0.5 * (pn + p):
            p = pn
            break
        p = pn
    else:
        raise ArithmeticError("Riemann pressure iteration did not converge")
    f1, _ = fk(p, rl, pl, cl)
    f2, _ = fk(p, rr, pr, cr)
    u = 0.5 * (ul + ur) + 0.5 * (f2 - f1)
    return RiemannSolution((rl, ul, pl), (rr, ur, pr), g, p, u, it)


# -- field comparison -----------------------------------------------------------------

def region_points(grid: Grid, t: float, halo: int = 2):
    """Cell centres of ``grid`` minus ``halo`` cells at each end of multi-cell axes."""
    axes = []
    for i in range(3):
        c = grid.axis_centers(i)
        if grid.n[i] > 2 * halo:
            c = c[halo:grid.n[i] - halo]
        axes.append(c)
    mesh = np.meshgrid(*axes, indexing="ij")
    x = np.empty((4,) + mesh[0].shape)
    x[0] = t
    x[1:] = mesh
    vol = float(np.prod([grid.spacing[i] for i in range(3) if grid.n[i] > 1] or [1.0]))
    return x, vol


def compare_fields(fa: Field, fb: Field, norm: str = "L1", region=None, t: float = 0.0,
                   components=(0, 1, 2, 3, 4), halo: int = 2) -> float:
    """Norm of ``fa - fb`` over a region.

    ``region`` is a :class:`Grid` (sampled at cell centres at time ``t``,
    excluding ``halo`` boundary cells; L1 is weighted by the cell volume) or
    an explicit (4, n) point array (L1 is then the mean).
    """
    if isinstance(region, Grid):
        x, vol = region_points(region, t, halo)
    else:
        x, vol = np.asarray(region, dtype=float), None
    comps = list(components)
    d = np.abs(fa(x)[comps] - fb(x)[comps])
    if norm == "Linf":
        return float(np.max(d)) if d.size else 0.0
    if norm != "L1":
        raise ValueError("norm must be L1 or Linf")
    if vol is None:
        return float(np.sum(d) / max(1, x[0].size))
    return float(np.sum(d) * vol)


# -- report output -----------------------------------------------------------------------

def _jsonable(o):
    if hasattr(o, "to_json"):
        return o.to_json()
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_report(directory, name: str, report) -> dict:
    """JSON plus aligned text; convergence reports also get a CSV curve."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    data = _jsonable(report)
    (d / f"{name}.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    paths = {"json": str(d / f"{name}.json")}
    if isinstance(report, ConvergenceReport):
        text = report.table()
        with open(d / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["h", "error"])
            for h, e in zip(report.hs, report.errors):
                w.writerow([repr(h), repr(e)])
        paths["csv"] = str(d / f"{name}.csv")
    elif isinstance(report, CheckReport):
        text = report.line()
    else:
        text = _text_table(data)
    (d / f"{name}.txt").write_text(text + "\n")
    paths["txt"] = str(d / f"{name}.txt")
    return paths


def _text_table(data, prefix=""):
    rows = []
    if isinstance(data, dict):
        for k, v in data.items():
            if isinstance(v, (dict, list)) and v and not all(isinstance(x, (int, float)) for x in
                                                             (v if isinstance(v, list) else [])):
                rows.append(_text_table(v, f"{prefix}{k}."))
            else:
                rows.append(f"{prefix + str(k):<40} {v}")
    elif isinstance(data, list):
        for i, v in enumerate(data):
            rows.append(_text_table(v, f"{prefix}{i}."))
    else:
        rows.append(f"{prefix:<40} {data}")
    return "\n".join(rows)
