"""Lie flows of projected generators and one-dimensional time maps.

``lie_flow`` integrates the Lie equations ``dX/da = xi, dU/da = eta`` with
classical RK4 together with the variational equations for the Jacobian.  It
is written directly from the generator list and serves as the numeric oracle
for every closed-form map in :mod:`balred.transforms`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate

from .expr import Compiled, Expr, as_expr, diff_expr, parse_expr, substitute

FAMILIES = ("XI1", "XI2", "XI3", "XI4", "XI5", "XI6", "XI7", "XI8",
            "XI9", "XI10", "XI11", "XI12", "EULER_COMPOSED")

FLOW_VARS = ("x1", "x2", "x3", "x4", "u1", "u2", "u3", "u4", "u5")
OVERFLOW_GUARD = 1e100


class TransformError(ValueError):
    """Invalid generator payload or parameter."""


class SingularMapError(TransformError):
    """The map (or its Jacobian) degenerates at an evaluation point."""


class FlowBlowupError(ArithmeticError):
    def __init__(self, a_reached):
        self.a_reached = a_reached
        super().__init__(f"Lie flow left the overflow guard at a = {a_reached:.6g}")


class QuadratureError(ArithmeticError):
    """Composite Simpson failed its Richardson self-check."""


@dataclass
class GeneratorSpec:
    """A generator family, its arbitrary-function payload and parameter ``a``.

    Payload strings are parsed into expressions over the variables the family
    allows (``x1`` only for XI1 and the EULER_COMPOSED profiles, ``x1..x4``
    otherwise), plus ``a`` for EULER_COMPOSED direct profiles and any names in
    ``constants``.
    """

    family: str
    payload: dict = field(default_factory=dict)
    a: float = 0.0
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise TransformError(f"unknown family {self.family!r}")
        self.a = float(self.a)
        self.constants = {k: float(v) for k, v in self.constants.items()}
        parsed = {}
        for key, val in self.payload.items():
            if key == "mode":
                parsed[key] = val
                continue
            allowed = set(self._allowed_vars(key)) | set(self.constants)
            e = parse_expr(val, allowed) if isinstance(val, str) else as_expr(val)
            bad = e.variables - allowed
            if bad:
                raise TransformError(f"payload {key!r} of {self.family} may not use {sorted(bad)}")
            parsed[key] = e
        self.payload = parsed
        self._validate_keys()

    # which payload keys, over which variables
    def _allowed_vars(self, key):
        if self.family == "XI1":
            return ("x1",)
        if self.family == "EULER_COMPOSED":
            if key in ("f1", "n1", "n2", "n3"):
                return ("x1",)
            return ("x1", "a")
        return ("x1", "x2", "x3", "x4")

    def _validate_keys(self):
        fam = self.family
        keys = set(self.payload) - {"mode"}
        if fam == "XI11":
            need = {"g1", "g2", "g3", "g4"}
        elif fam == "XI12":
            need = set()
        elif fam == "EULER_COMPOSED":
            mode = self.mode
            need = {"f1", "n1", "n2", "n3"} if mode == "B" else {"m1", "m2", "m3"}
            allowed = need | ({"x1_map", "x1_inverse"} if mode == "A" else set())
            if not need <= keys or not keys <= allowed:
                raise TransformError(f"EULER_COMPOSED mode {mode} needs {sorted(need)}"
                                     f" (optional {sorted(allowed - need)}), got {sorted(keys)}")
            return
        else:
            need = {"f"}
        if keys != need:
            raise TransformError(f"{fam} payload needs exactly {sorted(need)}, got {sorted(keys)}")

    @property
    def mode(self):
        if self.family != "EULER_COMPOSED":
            return None
        if "mode" in self.payload:
            return self.payload["mode"]
        return "B" if "f1" in self.payload else "A"

    @property
    def index(self):
        """i for XI2..XI4 (coordinate index) and XI5..XI8 (u index)."""
        n = int(self.family[2:]) if self.family.startswith("XI") else 0
        if 2 <= n <= 4:
            return n
        if 5 <= n <= 8:
            return n - 4
        return None

    def with_a(self, a):
        raw = {k: (v if k == "mode" else str(v)) for k, v in self.payload.items()}
        return GeneratorSpec(self.family, raw, a, dict(self.constants))

    def fn(self, key):
        """Payload expression with constants bound."""
        return substitute(self.payload[key], self.constants) if self.constants else self.payload[key]

    def to_json(self):
        return {"family": self.family, "a": self.a, "constants": self.constants,
                "payload": {k: (v if k == "mode" else str(v)) for k, v in self.payload.items()}}

    @classmethod
    def from_json(cls, d):
        return cls(d["family"], dict(d.get("payload", {})), d.get("a", 0.0),
                   dict(d.get("constants", {})))


# -- infinitesimals, transcribed from the generator list -----------------------

def infinitesimals(spec: GeneratorSpec):
    """(xi[4], eta[5]) expressions over x1..x4, u1..u5 for ``spec``."""
    x = [parse_expr(v) for v in FLOW_VARS[:4]]
    u = [parse_expr(v) for v in FLOW_VARS[4:]]
    xi = [as_expr(0)] * 4
    eta = [as_expr(0)] * 5
    fam = spec.family
    if fam == "XI1":
        f = spec.fn("f")
        xi[0] = f
        fp = diff_expr(f, "x1")
        for k in (1, 2, 3):
            eta[k] = -fp * u[k]
    elif fam in ("XI2", "XI3", "XI4"):
        _add_xi_i(xi, eta, spec.index, spec.fn("f"), u)
    elif fam in ("XI5", "XI6", "XI7", "XI8"):
        eta[4] = u[spec.index - 1] * spec.fn("f")
    elif fam == "XI9":
        eta[4] = u[4] * spec.fn("f")
    elif fam == "XI10":
        eta[4] = spec.fn("f")
    elif fam == "XI11":
        for k in range(4):
            eta[k] = spec.fn(f"g{k + 1}")
    elif fam == "XI12":
        for k in range(4):
            eta[k] = u[k]
    else:
        if spec.mode == "B":
            f1 = spec.fn("f1")
            n1, n2, n3 = (spec.fn(k) for k in ("n1", "n2", "n3"))
        else:
            # direct profiles: generator is the a-derivative at a = 0
            f1, n1, n2, n3 = (_a_derivative(spec, k, d) for k, d in
                              (("x1_map", "x1 + a"), ("m1", None), ("m2", None), ("m3", None)))
        xi[0] = f1
        fp = diff_expr(f1, "x1")
        for k in (1, 2, 3):
            eta[k] = -fp * u[k]
        _add_xi_i(xi, eta, 2, n1 * x[1] + n2 * x[2], u)
        _add_xi_i(xi, eta, 3, -n2 * x[1] + n1 * x[2], u)
        _add_xi_i(xi, eta, 4, n3, u)
    return xi, eta


def _a_derivative(spec, key, default):
    e = spec.payload[key] if key in spec.payload else parse_expr(default)
    e = substitute(e, spec.constants) if spec.constants else e
    return substitute(diff_expr(e, "a"), {"a": 0.0})


def _add_xi_i(xi, eta, i, f, u):
    # f d_{x_i} + sum_k (u_k d_k f d_{u_i} - u_k d_i f d_{u_k})
    xi[i - 1] = xi[i - 1] + f
    grads = [diff_expr(f, f"x{k}") for k in range(1, 5)]
    for k in range(4):
        eta[i - 1] = eta[i - 1] + u[k] * grads[k]
        eta[k] = eta[k] - u[k] * grads[i - 1]


class _Rk4Flow:
    """Vectorised RK4 for ``dy/da = F(y)`` with optional variational ``dJ/da = DF J``."""

    def __init__(self, rhs, argnames):
        self.n = len(rhs)
        self.f = Compiled(rhs, argnames)
        self.entries = [(i, j, diff_expr(rhs[i], argnames[j]))
                        for i in range(self.n) for j in range(self.n)]
        self.entries = [(i, j, e) for i, j, e in self.entries
                        if not (hasattr(e, "value") and e.value == 0.0)]
        self.df = Compiled([e for _, _, e in self.entries], argnames) if self.entries else None

    def _rhs(self, y):
        return self.f.array(*y)

    def _jac(self, y):
        J = np.zeros((self.n, self.n) + y.shape[1:])
        if self.df is not None:
            vals = self.df.array(*y)
            for (i, j, _), v in zip(self.entries, vals):
                J[i, j] = v
        return J

    def run(self, y0, a, steps, variational=False):
        y = np.array(y0, dtype=float)
        J = np.broadcast_to(np.eye(self.n).reshape((self.n, self.n) + (1,) * (y.ndim - 1)),
                            (self.n, self.n) + y.shape[1:]).copy() if variational else None
        if a == 0.0:
            return y, J
        h = a / steps
        for s in range(steps):
            k1 = self._rhs(y)
            k2 = self._rhs(y + 0.5 * h * k1)
            k3 = self._rhs(y + 0.5 * h * k2)
            k4 = self._rhs(y + h * k3)
            if variational:
                D1 = self._jac(y)
                D2 = self._jac(y + 0.5 * h * k1)
                D3 = self._jac(y + 0.5 * h * k2)
                D4 = self._jac(y + h * k3)
                L1 = np.einsum("ij...,jk...->ik...", D1, J)
                L2 = np.einsum("ij...,jk...->ik...", D2, J + 0.5 * h * L1)
                L3 = np.einsum("ij...,jk...->ik...", D3, J + 0.5 * h * L2)
                L4 = np.einsum("ij...,jk...->ik...", D4, J + h * L3)
                J = J + (h / 6.0) * (L1 + 2 * L2 + 2 * L3 + L4)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > OVERFLOW_GUARD:
                raise FlowBlowupError((s + 1) * h)
        return y, J


def _safe_flow(rhs, names):
    try:
        return _Rk4Flow(rhs, names)
    except Exception as exc:  # pragma: no cover - payload compile errors
        raise TransformError(str(exc)) from exc


_flow_cache: dict = {}


def _full_flow(spec):
    key = ("full", spec.family, tuple(sorted((k, str(v)) for k, v in spec.payload.items())),
           tuple(sorted(spec.constants.items())))
    if key not in _flow_cache:
        xi, eta = infinitesimals(spec)
        _flow_cache[key] = _safe_flow(xi + eta, FLOW_VARS)
    return _flow_cache[key]


def coordinate_flow(spec):
    """RK4 integrator of the coordinate part ``dX/da = xi(X)`` only.

    Valid for the families whose ``xi`` does not involve ``U`` (all of them).
    """
    key = ("coord", spec.family, tuple(sorted((k, str(v)) for k, v in spec.payload.items())),
           tuple(sorted(spec.constants.items())))
    if key not in _flow_cache:
        xi, _ = infinitesimals(spec)
        _flow_cache[key] = _safe_flow(xi, FLOW_VARS[:4])
    return _flow_cache[key]


def lie_flow(spec: GeneratorSpec, X, U, a: float | None = None, steps: int = 256):
    """Integrate the Lie equations of ``spec`` from ``(X, U)`` over ``[0, a]``.

    Returns ``(x, u, J)`` with ``J`` the 9x9 Jacobian d(x,u)/d(X,U) from the
    variational equations.  ``X`` is (4,) or (4, n); ``U`` likewise with 5 rows.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    a = spec.a if a is None else float(a)
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    y0 = np.concatenate([X, U], axis=0)
    y, J = _full_flow(spec).run(y0, a, steps, variational=True)
    return y[:4], y[4:], J


# -- one-dimensional time maps ---------------------------------------------------

class ExprTimeMap:
    """``x1 = forward(X1)`` given in closed form together with its inverse."""

    symbolic = True

    def __init__(self, forward: Expr, inverse: Expr, constants: Mapping[str, float] | None = None):
        # both expressions use the variable name x1 for their argument
        self.constants = dict(constants or {})
        self.fwd = forward
        self.inv = inverse
        self.d_expr = diff_expr(forward, "x1")
        self.dd_expr = diff_expr(self.d_expr, "x1")
        bound = [substitute(e, self.constants) for e in (forward, inverse, self.d_expr, self.dd_expr)]
        self._c = [Compiled([e], ("x1",)) for e in bound]

    def forward(self, X1):
        return self._c[0].array(X1)[0]

    def inverse(self, x1):
        return self._c[1].array(x1)[0]

    def d(self, X1):
        return self._c[2].array(X1)[0]

    def dd(self, X1):
        return self._c[3].array(X1)[0]


def affine_time_map(f: Expr, a: float):
    """Closed-form flow of ``dx/da = alpha + beta x``; None if f is not affine."""
    fpp = diff_expr(diff_expr(f, "x1"), "x1")
    probe = Compiled([f, diff_expr(f, "x1"), fpp], ("x1",))
    pts = np.linspace(-3.0, 3.0, 13)
    vals = probe.array(pts)
    if np.max(np.abs(vals[2])) > 0 or np.ptp(vals[1]) > 1e-14 * (1 + np.max(np.abs(vals[1]))):
        return None
    beta = float(vals[1][0])
    alpha = float(probe.scalar(0.0)[0])
    x = parse_expr("x1")
    if beta == 0.0:
        return ExprTimeMap(x + alpha * a, x - alpha * a)
    r = alpha / beta
    return ExprTimeMap((x + r) * math.exp(beta * a) - r, (x + r) * math.exp(-beta * a) - r)


class FlowTimeMap:
    """``x1`` solving ``int_{X1}^{x1} ds / f(s) = a`` (flow of ``dx/da = f``).

    Each point is solved by Newton iteration on adaptive quadrature.
    """

    symbolic = False

    def __init__(self, f: Expr, a: float, constants: Mapping[str, float] | None = None):
        f = substitute(f, dict(constants or {}))
        self.a = float(a)
        self._f = Compiled([f], ("x1",))
        self._fp = Compiled([diff_expr(f, "x1")], ("x1",))

    def f(self, x):
        return self._f.array(x)[0]

    def fprime(self, x):
        return self._fp.array(x)[0]

    def _solve_one(self, X1, a):
        if a == 0.0:
            return X1
        fs = lambda s: 1.0 / self._f.scalar(s)[0]
        f0 = self._f.scalar(X1)[0]
        if f0 == 0.0:
            raise SingularMapError(f"f vanishes at x1 = {X1}")
        # RK4 start, then Newton on the travel-time equation
        x, n = X1, 16
        h = a / n
        for _ in range(n):
            k1 = self._f.scalar(x)[0]
            k2 = self._f.scalar(x + 0.5 * h * k1)[0]
            k3 = self._f.scalar(x + 0.5 * h * k2)[0]
            k4 = self._f.scalar(x + h * k3)[0]
            x += h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
        for _ in range(60):
            fx = self._f.scalar(x)[0]
            if fx == 0.0 or np.sign(fx) != np.sign(f0):
                raise SingularMapError(f"f vanishes between {X1} and {x}")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                val, _ = integrate.quad(fs, X1, x, epsabs=1e-15, epsrel=1e-14, limit=200)
            step = (val - a) * fx
            x -= step
            if abs(step) <= 1e-14 * (1.0 + abs(x)) or abs(val - a) <= 1e-15 * (1.0 + abs(a)):
                return x
        raise SingularMapError(f"time map did not converge from X1 = {X1}")

    def _solve(self, X1, a):
        X1 = np.asarray(X1, dtype=float)
        flat = X1.reshape(-1)
        cache = {}
        out = np.empty_like(flat)
        for i, v in enumerate(flat):
            key = float(v)
            if key not in cache:
                cache[key] = self._solve_one(key, a)
            out[i] = cache[key]
        return out.reshape(X1.shape)

    def forward(self, X1):
        return self._solve(X1, self.a)

    def inverse(self, x1):
        return self._solve(x1, -self.a)

    def d(self, X1):
        return self.f(self.forward(X1)) / self.f(X1)

    def dd(self, X1):
        x1 = self.forward(X1)
        fX = self.f(X1)
        return self.f(x1) * (self.fprime(x1) - self.fprime(X1)) / fX ** 2


# -- rotation/dilation/shift profiles m1, m2, m3 ---------------------------------

class ExprProfiles:
    """Directly chosen profiles ``m_i(X1; a)`` (expressions in x1 and a)."""

    symbolic = True

    def __init__(self, m, a, constants=None):
        self.constants = {**dict(constants or {}), "a": float(a)}
        self.m = list(m)
        self.mp = [diff_expr(e, "x1") for e in self.m]
        self.mpp = [diff_expr(e, "x1") for e in self.mp]
        bound = [substitute(e, self.constants) for e in self.m + self.mp + self.mpp]
        self._c = Compiled(bound, ("x1",))

    def values(self, X1, time_map=None):
        v = self._c.array(X1)
        return v[0:3], v[3:6], v[6:9]


class QuadratureProfiles:
    """``m_i = int_{X1}^{x1} n_i(s)/f1(s) ds`` by composite Simpson (512 panels)."""

    symbolic = False

    def __init__(self, n, f1, constants=None, panels=512, rtol=1e-9):
        c = dict(constants or {})
        self.n = [substitute(e, c) for e in n]
        f1 = substitute(f1, c)
        self.panels = panels
        self.rtol = rtol
        self._n = Compiled(self.n, ("x1",))
        self._np = Compiled([diff_expr(e, "x1") for e in self.n], ("x1",))
        self._ratio = Compiled([e / f1 for e in self.n], ("x1",))
        self._f1 = Compiled([f1, diff_expr(f1, "x1")], ("x1",))

    def _simpson(self, lo, hi, panels):
        t = np.linspace(0.0, 1.0, panels + 1)
        w = np.ones(panels + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        s = lo[..., None] + (hi - lo)[..., None] * t
        vals = self._ratio.array(s)
        return (hi - lo) / (3.0 * panels) * np.tensordot(vals, w, axes=([-1], [0]))

    def values(self, X1, time_map):
        X1 = np.asarray(X1, dtype=float)
        x1 = time_map.forward(X1)
        fine = self._simpson(X1, x1, self.panels)
        coarse = self._simpson(X1, x1, self.panels // 2)
        err = np.max(np.abs(fine - coarse)) / 15.0 if fine.size else 0.0
        if not np.all(np.isfinite(fine)) or err > self.rtol * (1.0 + np.max(np.abs(fine))):
            raise QuadratureError(f"Simpson self-check failed (estimated error {err:.3g})")
        nX, nx = self._n.array(X1), self._n.array(x1)
        npX, npx = self._np.array(X1), self._np.array(x1)
        fX, fpX = self._f1.array(X1)
        d = time_map.d(X1)
        mp = (nx - nX) / fX
        mpp = (npx * d - npX) / fX - (nx - nX) * fpX / fX ** 2
        return fine, mp, mpp
