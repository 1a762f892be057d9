"""Autonomous conservation systems, nonautonomous balance systems, fields.

Layout of the five-equation class (time is ``x1``)::

    d1 u1 + d2 u2  + d3 u3  + d4 u4  = 0
    d1 u2 + d2 p1  + d3 p2  + d4 p3  = p13
    d1 u3 + d2 p4  + d3 p5  + d4 p6  = p14
    d1 u4 + d2 p7  + d3 p8  + d4 p9  = p15
    d1 u5 + d2 p10 + d3 p11 + d4 p12 = p16

A conservation system is the same with ``P1..P12(U)`` and zero right-hand
sides.  Every row is handled through its *flux matrix* ``q[row, direction]``
with the density in direction 0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .expr import Compiled, Expr, as_expr, diff_expr, parse_expr, substitute

X_VARS = ("x1", "x2", "x3", "x4")
U_VARS = ("u1", "u2", "u3", "u4", "u5")
CAP_X_VARS = ("X1", "X2", "X3", "X4")
CAP_U_VARS = ("U1", "U2", "U3", "U4", "U5")


class SystemDefinitionError(ValueError):
    """Invalid system definition."""


class FieldDomainError(ValueError):
    """A field was sampled outside the region where it is defined."""


def _bind_constants(exprs, constants):
    if not constants:
        return list(exprs)
    return [substitute(e, constants) for e in exprs]


def _check_vars(exprs, allowed, what):
    for i, e in enumerate(exprs, 1):
        bad = e.variables - set(allowed)
        if bad:
            raise SystemDefinitionError(f"{what}{i} references {sorted(bad)}; "
                                        f"allowed {sorted(allowed)}")


class ConservationSystem:
    """Twelve autonomous fluxes ``P1..P12`` over ``U1..U5``.

    ``constants`` are named parameters (``gamma``, ``g``, ...) substituted
    at compile time; the stored expressions keep their names for printing.
    """

    def __init__(self, fluxes: Sequence, constants: Mapping[str, float] | None = None,
                 tag: str | None = None):
        if len(fluxes) != 12:
            raise SystemDefinitionError(f"expected 12 fluxes, got {len(fluxes)}")
        self.constants = dict(constants or {})
        allowed = set(CAP_U_VARS) | set(self.constants)
        self.fluxes = tuple(parse_expr(f, allowed) if isinstance(f, str) else as_expr(f)
                            for f in fluxes)
        _check_vars(self.fluxes, allowed, "P")
        self.tag = tag
        self._compiled = None
        self._jac = {}

    def __repr__(self):
        return f"ConservationSystem(tag={self.tag!r}, P1={self.fluxes[0]})"

    @property
    def bound_fluxes(self):
        return _bind_constants(self.fluxes, self.constants)

    def flux_values(self, U):
        """``P1..P12`` at states ``U`` of shape (5, ...)."""
        if self._compiled is None:
            self._compiled = Compiled(self.bound_fluxes, CAP_U_VARS)
        return self._compiled.array(*U)

    def flux_matrix(self, U):
        """Row/direction flux matrix, shape (5, 4, ...)."""
        U = np.asarray(U, dtype=float)
        P = self.flux_values(U)
        q = np.empty((5, 4) + U.shape[1:])
        q[:, 0] = U
        q[0, 1:] = U[1:4]
        q[1:, 1:] = P.reshape((4, 3) + U.shape[1:])
        return q

    def direction_flux(self, U, k):
        """Flux vector of all five rows in spatial direction k (1, 2 or 3)."""
        return self.flux_matrix(U)[:, k]

    def flux_jacobian(self, k):
        """Compiled 5x5 Jacobian dF_k/dU of the direction-k flux."""
        if k not in self._jac:
            col = [as_expr(0)] * 5
            col[0] = parse_expr(f"U{k + 1}")
            for r in range(4):
                col[r + 1] = self.bound_fluxes[3 * r + k - 1]
            entries = [diff_expr(col[i], CAP_U_VARS[j]) for i in range(5) for j in range(5)]
            self._jac[k] = Compiled(entries, CAP_U_VARS)
        return self._jac[k]

    def to_json(self):
        return {"fluxes": [str(f) for f in self.fluxes],
                "constants": self.constants, "tag": self.tag}


def build_euler_system(pressure, constants: Mapping[str, float] | None = None) -> ConservationSystem:
    """Euler equations with ``U = (rho, rho u, rho v, rho w, rho S)``.

    ``pressure`` is an expression in ``U1`` and ``U5`` only.
    """
    constants = dict(constants or {})
    allowed = {"U1", "U5"} | set(constants)
    p = parse_expr(pressure, allowed) if isinstance(pressure, str) else as_expr(pressure)
    bad = p.variables - allowed
    if bad:
        raise SystemDefinitionError(f"pressure may depend on U1, U5 only; got {sorted(bad)}")
    U1, U2, U3, U4, U5 = (parse_expr(n) for n in CAP_U_VARS)
    fl = [U2 ** 2 / U1 + p, U2 * U3 / U1, U2 * U4 / U1,
          U2 * U3 / U1, U3 ** 2 / U1 + p, U3 * U4 / U1,
          U2 * U4 / U1, U3 * U4 / U1, U4 ** 2 / U1 + p,
          U2 * U5 / U1, U3 * U5 / U1, U4 * U5 / U1]
    sysm = ConservationSystem(fl, constants, tag="euler")
    sysm.pressure = p
    return sysm


def ideal_gas_pressure(gamma: float = 1.4) -> str:
    """Isentropic-law pressure ``p = rho^gamma exp(S)`` with ``S = U5/U1``."""
    return f"U1^{gamma!r}*exp(U5/U1)"


def build_euler_energy_system(gamma: float = 1.4) -> ConservationSystem:
    """Euler equations in total-energy form (``U5 = E``).

    Fits the same row layout; used where shocks matter, since the entropy
    row of :func:`build_euler_system` is only valid for smooth flow.
    """
    g = repr(float(gamma))
    p = f"(({g} - 1)*(U5 - 0.5*(U2^2 + U3^2 + U4^2)/U1))"
    fl = [f"U2^2/U1 + {p}", "U2*U3/U1", "U2*U4/U1",
          "U2*U3/U1", f"U3^2/U1 + {p}", "U3*U4/U1",
          "U2*U4/U1", "U3*U4/U1", f"U4^2/U1 + {p}",
          f"U2*(U5 + {p})/U1", f"U3*(U5 + {p})/U1", f"U4*(U5 + {p})/U1"]
    return ConservationSystem(fl, tag="euler")


class BalanceSystem:
    """Sixteen elements ``p1..p16`` as functions of ``(x, u)``."""

    tag: str | None = None
    exprs: tuple | None = None

    def elements(self, x, u):  # pragma: no cover - interface
        """Values of p1..p16, shape (16, ...)."""
        raise NotImplementedError

    def flux_matrix(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        p = self.elements(x, u)
        shape = np.broadcast_shapes(x.shape[1:], u.shape[1:])
        q = np.empty((5, 4) + shape)
        q[:, 0] = u
        q[0, 1:] = u[1:4]
        q[1:, 1:] = p[:12].reshape((4, 3) + shape)
        return q, p[12:]


class ExprBalanceSystem(BalanceSystem):
    """Closed-form balance system; elements are expressions in ``x1..x4, u1..u5``."""

    def __init__(self, elements: Sequence, constants: Mapping[str, float] | None = None,
                 tag: str | None = None):
        if len(elements) != 16:
            raise SystemDefinitionError(f"expected 16 elements, got {len(elements)}")
        self.constants = dict(constants or {})
        allowed = set(X_VARS) | set(U_VARS) | set(self.constants)
        self.exprs = tuple(parse_expr(e, allowed) if isinstance(e, str) else as_expr(e)
                           for e in elements)
        _check_vars(self.exprs, allowed, "p")
        self.tag = tag
        self._compiled = None

    def elements(self, x, u):
        if self._compiled is None:
            self._compiled = Compiled(_bind_constants(self.exprs, self.constants),
                                      X_VARS + U_VARS)
        return self._compiled.array(*np.asarray(x, dtype=float), *np.asarray(u, dtype=float))

    def derivative_exprs(self):
        """d p_k / d u_j for the twelve flux elements (used for wave speeds)."""
        bound = _bind_constants(self.exprs, self.constants)
        return [[diff_expr(bound[k], v) for v in U_VARS] for k in range(12)]

    def to_json(self):
        return {"elements": {f"p{i + 1}": str(e) for i, e in enumerate(self.exprs)},
                "constants": self.constants, "tag": self.tag}


class NumericBalanceSystem(BalanceSystem):
    """Balance system given by an opaque evaluator ``fn(x, u) -> (16, ...)``."""

    def __init__(self, fn: Callable, tag: str | None = None):
        self._fn = fn
        self.tag = tag

    def elements(self, x, u):
        return np.asarray(self._fn(np.asarray(x, dtype=float), np.asarray(u, dtype=float)))


def balance_from_conservation(P: ConservationSystem) -> ExprBalanceSystem:
    """The conservation system viewed as a (source-free) balance system."""
    ren = dict(zip(CAP_U_VARS, (parse_expr(v) for v in U_VARS)))
    el = [substitute(f, ren) for f in P.fluxes] + [0, 0, 0, 0]
    return ExprBalanceSystem(el, P.constants, tag=P.tag)


# -- fields ------------------------------------------------------------------

class Field:
    """Space-time field ``x -> u(x)``; ``x`` has shape (4, ...)."""

    def __call__(self, x):  # pragma: no cover - interface
        raise NotImplementedError


class AnalyticField(Field):
    def __init__(self, fn: Callable, name: str = "analytic"):
        self._fn = fn
        self.name = name

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self._fn(x), dtype=float)
        return np.broadcast_to(out, (5,) + x.shape[1:]) if out.shape[1:] != x.shape[1:] else out

    @classmethod
    def from_exprs(cls, components: Sequence, constants: Mapping[str, float] | None = None):
        allowed = set(X_VARS) | set(constants or {})
        exprs = [parse_expr(c, allowed) if isinstance(c, str) else as_expr(c)
                 for c in components]
        comp = Compiled(_bind_constants(exprs, constants or {}), X_VARS)
        return cls(lambda x: comp.array(*x), name="expr")

    @classmethod
    def constant(cls, state):
        s = np.asarray(state, dtype=float).reshape(5)

        def fn(x):
            return np.broadcast_to(s.reshape((5,) + (1,) * (x.ndim - 1)), (5,) + x.shape[1:]).copy()
        return cls(fn, name="constant")


@dataclass
class Grid:
    """Uniform cell-centred grid over ``(x2, x3, x4)``."""

    lo: tuple
    hi: tuple
    n: tuple

    def __post_init__(self):
        self.lo = tuple(float(v) for v in self.lo)
        self.hi = tuple(float(v) for v in self.hi)
        self.n = tuple(int(v) for v in self.n)
        if len(self.lo) != 3 or len(self.hi) != 3 or len(self.n) != 3:
            raise ValueError("grid needs three axes (x2, x3, x4)")
        if any(k < 1 for k in self.n):
            raise ValueError("at least one cell per axis")
        if any(h <= 0 for h in self.spacing):
            raise ValueError("grid spacings must be strictly positive")

    @property
    def spacing(self):
        return tuple((b - a) / k for a, b, k in zip(self.lo, self.hi, self.n))

    def axis_centers(self, i):
        return self.lo[i] + (np.arange(self.n[i]) + 0.5) * self.spacing[i]

    def centers(self):
        """Cell centres, shape (3, n2, n3, n4)."""
        return np.stack(np.meshgrid(*(self.axis_centers(i) for i in range(3)),
                                    indexing="ij"))

    def to_json(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "n": list(self.n)}


@dataclass
class DiscreteField(Field):
    """Snapshots of cell averages, sampled by multilinear interpolation.

    ``data`` has shape (n_snapshots, 5, n2, n3, n4).  Axes flagged in
    ``periodic`` wrap; other axes clamp to the outermost cell centres and
    reject points outside the grid box.
    """

    grid: Grid
    times: np.ndarray
    data: np.ndarray
    periodic: tuple = (True, True, True)
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 5 or self.data.shape[1] != 5:
            raise ValueError("data must have shape (nt, 5, n2, n3, n4)")
        if len(self.times) != self.data.shape[0] or len(self.times) < 1:
            raise ValueError("need one time per snapshot and at least one snapshot")

    def snapshot(self, i):
        return self.data[i]

    def _axis_weights(self, coord, i):
        n = self.grid.n[i]
        h = self.grid.spacing[i]
        s = (coord - self.grid.lo[i]) / h - 0.5
        if n == 1:
            z = np.zeros(np.shape(coord), dtype=int)
            return z, z, np.zeros(np.shape(coord))
        if self.periodic[i]:
            i0 = np.floor(s).astype(int)
            w = s - i0
            return np.mod(i0, n), np.mod(i0 + 1, n), w
        tol = 1e-9 * (self.grid.hi[i] - self.grid.lo[i])
        if np.any(coord < self.grid.lo[i] - tol) or np.any(coord > self.grid.hi[i] + tol):
            raise FieldDomainError(f"x{i + 2} outside [{self.grid.lo[i]}, {self.grid.hi[i]}]")
        s = np.clip(s, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(s).astype(int), n - 2)
        return i0, i0 + 1, s - i0

    def _time_weights(self, t):
        ts = self.times
        if len(ts) == 1:
            z = np.zeros(np.shape(t), dtype=int)
            return z, z, np.zeros(np.shape(t))
        tol = 1e-12 * max(1.0, abs(ts[-1]))
        if np.any(t < ts[0] - tol) or np.any(t > ts[-1] + tol):
            raise FieldDomainError(f"time outside [{ts[0]}, {ts[-1]}]")
        j = np.clip(np.searchsorted(ts, t, side="right") - 1, 0, len(ts) - 2)
        w = (t - ts[j]) / (ts[j + 1] - ts[j])
        return j, j + 1, np.clip(w, 0.0, 1.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[1:]
        flat = x.reshape(4, -1)
        t0, t1, wt = self._time_weights(flat[0])
        ax = [self._axis_weights(flat[i + 1], i) for i in range(3)]
        out = np.zeros((5, flat.shape[1]))
        for ti, tw in ((t0, 1 - wt), (t1, wt)):
            for a in range(2):
                for b in range(2):
                    for c in range(2):
                        ia = ax[0][a]
                        ib = ax[1][b]
                        ic = ax[2][c]
                        w = (tw * (ax[0][2] if a else 1 - ax[0][2])
                             * (ax[1][2] if b else 1 - ax[1][2])
                             * (ax[2][2] if c else 1 - ax[2][2]))
                        out += w * self.data[ti, :, ia, ib, ic].T
        return out.reshape((5,) + shape)

    # -- I/O --
    def write(self, directory, prefix="snapshot"):
        """One CSV per snapshot (x2,x3,x4,u1..u5) plus a JSON sidecar."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        c = self.grid.centers().reshape(3, -1)
        files = []
        for i in range(len(self.times)):
            name = f"{prefix}_{i:04d}.csv"
            table = np.vstack([c, self.data[i].reshape(5, -1)]).T
            np.savetxt(d / name, table, delimiter=",", fmt="%.17g",
                       header="x2,x3,x4,u1,u2,u3,u4,u5", comments="")
            files.append(name)
        meta = {"grid": self.grid.to_json(), "times": [float(t) for t in self.times],
                "periodic": list(self.periodic), "files": files, **self.meta}
        (d / f"{prefix}.json").write_text(json.dumps(meta, indent=2))
        return d / f"{prefix}.json"

    @classmethod
    def read(cls, sidecar):
        sidecar = Path(sidecar)
        meta = json.loads(sidecar.read_text())
        g = Grid(**meta["grid"])
        data = []
        for name in meta["files"]:
            table = np.loadtxt(sidecar.parent / name, delimiter=",", skiprows=1, ndmin=2)
            data.append(table[:, 3:].T.reshape((5,) + g.n))
        extra = {k: v for k, v in meta.items() if k not in ("grid", "times", "periodic", "files")}
        return cls(g, meta["times"], np.array(data), tuple(meta["periodic"]), extra)


# -- residual ----------------------------------------------------------------

def residual(system, field: Field, point, h) -> np.ndarray:
    """Pointwise residual (LHS - RHS) of all five rows by centred differences.

    ``point`` has shape (4,) or (4, n); ``h`` holds one step per direction.
    Returns shape (5,) or (5, n).
    """
    pt = np.asarray(point, dtype=float)
    single = pt.ndim == 1
    if single:
        pt = pt[:, None]
    h = np.broadcast_to(np.asarray(h, dtype=float), (4,))
    is_balance = isinstance(system, BalanceSystem)

    def qmat(x):
        u = field(x)
        if is_balance:
            return system.flux_matrix(x, u)
        return system.flux_matrix(u), None

    res = np.zeros((5, pt.shape[1]))
    for k in range(4):
        if h[k] == 0:
            continue
        e = np.zeros((4, 1))
        e[k] = h[k]
        qp, _ = qmat(pt + e)
        qm, _ = qmat(pt - e)
        res += (qp[:, k] - qm[:, k]) / (2.0 * h[k])
    if is_balance:
        _, src = qmat(pt)
        res[1:] -= src
    return res[:, 0] if single else res
