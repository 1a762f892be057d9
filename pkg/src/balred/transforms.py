"""Finite equivalence transformations and the balance systems they induce.

Every map is stored in the direction capital -> lower, ``x = phi(X)``,
``u = Phi(X, U)``: it carries a solution ``U(X)`` of an autonomous
conservation system to a solution ``u(x)`` of a balance system.

Induced elements are obtained from one transformation chain, shared by all
families.  Writing ``F[l][k]`` for the row-``l`` flux in direction ``k``
(``k = 0`` is the density), ``D = dphi/dX`` with ``D[0] = (d, 0, 0, 0)``,
and ``B`` the row-mixing matrix with ``u = (d / det D) B U + b``::

    q[m][j]   = sum_l B[m][l] (D F[l])_j / det D              (fluxes)
    src[m]    = sum_l sum_k d_{X_k} B[m][l] F[l][k] / det D    (sources)
              + d_{x1} b[m]

The same code runs on numpy arrays (numeric maps) and on expressions
(closed-form maps), so closed forms and numeric evaluators cannot drift.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from . import expr as ex
from .expr import Compiled, Const, Expr, as_expr, diff_expr, parse_expr, substitute
from .flow import (ExprProfiles, ExprTimeMap, FlowTimeMap, GeneratorSpec, QuadratureProfiles,
                   SingularMapError, TransformError, affine_time_map, coordinate_flow)
from .rng import Lcg64
from .systems import (CAP_U_VARS, U_VARS, X_VARS, AnalyticField, BalanceSystem,
                      ConservationSystem, ExprBalanceSystem, NumericBalanceSystem,
                      balance_from_conservation, build_euler_system, residual)


class ClosedFormUnavailable(TransformError):
    """The family/payload has no closed-form induced elements."""


# -- scalar helpers working on floats, arrays and Expr ---------------------------

def _zero(v):
    if isinstance(v, Expr):
        return isinstance(v, Const) and v.value == 0.0
    return isinstance(v, (int, float)) and v == 0


def _sum(terms):
    out = 0
    for t in terms:
        if _zero(t):
            continue
        out = t if _zero(out) else out + t
    return out


def _prod(a, b):
    if _zero(a) or _zero(b):
        return 0
    return a * b


def chain_elements(F, D, B, dB, b_dx1=None, det=None):
    """Induced ``p1..p16`` from flux rows ``F`` (5x4), ``D`` (4x4), ``B`` (5x5),
    ``dB[k][m][l]`` and the time derivative of the field offset ``b``.
    ``det`` may be supplied when a simpler form than the cofactor sum is known."""
    d = D[0][0]
    S = [[D[j][k] for k in (1, 2, 3)] for j in (1, 2, 3)]
    if det is None:
        det = _det(d, S)
    return _chain(F, D, B, dB, b_dx1, det)


def _det(d, S):
    return d * _sum([_prod(S[0][0], _sum([_prod(S[1][1], S[2][2]), -_prod(S[1][2], S[2][1])])
                          if not (_zero(S[1][1]) and _zero(S[1][2])) else 0),
                    -_prod(S[0][1], _sum([_prod(S[1][0], S[2][2]), -_prod(S[1][2], S[2][0])])),
                    _prod(S[0][2], _sum([_prod(S[1][0], S[2][1]), -_prod(S[1][1], S[2][0])]))])


def _chain(F, D, B, dB, b_dx1, det):
    # spatial components of D F_l
    DF = [[_sum([_prod(D[j][k], F[l][k]) for k in range(4)]) for j in (1, 2, 3)]
          for l in range(5)]
    fluxes = []
    for m in range(1, 5):
        for j in range(3):
            fluxes.append(_sum([_prod(B[m][l], DF[l][j]) for l in range(5)]) / det)
    sources = []
    for m in range(1, 5):
        s = _sum([_prod(dB[k][m][l], F[l][k]) for k in range(4) for l in range(5)])
        s = s / det if not _zero(s) else 0
        if b_dx1 is not None:
            s = _sum([s, b_dx1[m]])
        sources.append(s)
    return fluxes + sources, det


def _flux_rows_expr(P: ConservationSystem, U):
    """Flux rows F[l][k] as expressions after substituting ``U`` (list of Expr)."""
    sub = dict(zip(CAP_U_VARS, U))
    Pk = [substitute(f, sub) for f in P.fluxes]
    F = [[U[0], U[1], U[2], U[3]]]
    for r in range(4):
        F.append([U[r + 1]] + Pk[3 * r:3 * r + 3])
    return F


def _flux_rows_array(P: ConservationSystem, U):
    q = P.flux_matrix(U)
    return [[q[l, k] for k in range(4)] for l in range(5)]


# -- point maps ----------------------------------------------------------------

class PointMap:
    """Coordinate map ``x = phi(X)`` plus field map ``u = Phi(X, U)``."""

    spec: GeneratorSpec | None = None
    symbolic = False

    def coords(self, X):
        raise NotImplementedError

    def coords_inverse(self, x):
        raise NotImplementedError

    def jacobian(self, X):
        """``dx/dX``, shape (4, 4, ...)."""
        raise NotImplementedError

    def field(self, X, U):
        raise NotImplementedError

    def field_inverse(self, x, u):
        raise NotImplementedError

    def forward(self, X, U):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        return self.coords(X), self.field(X, U)

    def inverse(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.coords_inverse(x), self.field_inverse(x, u)

    def field_matrix(self, X):
        """``A = dPhi/dU`` at X, shape (5, 5, ...)."""
        X = np.asarray(X, dtype=float)
        cols = []
        zero = np.zeros((5,) + X.shape[1:])
        b = self.field(X, zero)
        for j in range(5):
            e = zero.copy()
            e[j] = 1.0
            cols.append(self.field(X, e) - b)
        return np.stack(cols, axis=1)

    def balance_system(self, P: ConservationSystem) -> BalanceSystem:
        raise NotImplementedError


class _PiolaMixin:
    """Field map ``u[:4] = D U[:4] / det D``, ``u5 = U5`` (XI1..XI4, composed)."""

    def field(self, X, U):
        X = np.asarray(X, dtype=float)
        U = np.asarray(U, dtype=float)
        D = self.jacobian(X)
        det = np.linalg.det(np.moveaxis(D, (0, 1), (-2, -1)))
        out = np.empty(np.broadcast_shapes(U.shape, (5,) + X.shape[1:]))
        out[:4] = np.einsum("ij...,j...->i...", D, U[:4]) / det
        out[4] = U[4]
        return out

    def field_inverse(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        X = self.coords_inverse(x)
        D = np.moveaxis(self.jacobian(X), (0, 1), (-2, -1))
        det = np.linalg.det(D)
        if np.any(det <= 0):
            raise SingularMapError("coordinate Jacobian is not orientation preserving")
        w = np.moveaxis(u[:4], 0, -1)[..., None]
        sol = np.linalg.solve(D, w)[..., 0]
        out = np.empty_like(u)
        out[:4] = np.moveaxis(sol, -1, 0) * det
        out[4] = u[4]
        return out


# -- time reparametrisation + rotation/dilation/shift --------------------------

class _ZeroProfiles:
    symbolic = True

    def __init__(self):
        self.m = self.mp = self.mpp = [as_expr(0)] * 3

    def values(self, X1, time_map=None):
        z = np.zeros((3,) + np.shape(X1))
        return z, z, z


def _frame_pieces(d, dd, m, mp, mpp, x, u):
    """Jacobian, inverse field map and row mixing for the composed map.

    Works on arrays or expressions; ``x``/``u`` are lower-case coordinates/states.
    """
    E = ex.exp(m[0]) if not _zero(m[0]) else 1
    c = ex.cos(m[1]) if not _zero(m[1]) else 1
    s = ex.sin(m[1]) if not _zero(m[1]) else 0
    Ec, Es = _prod(E, c), _prod(E, s)
    v2 = _sum([_prod(mp[0], x[1]), _prod(mp[1], x[2])])
    v3 = _sum([_prod(mp[0], x[2]), -_prod(mp[1], x[1])])
    v4 = mp[2]
    D = [[d, 0, 0, 0], [v2, Ec, Es, 0], [v3, -Es if not _zero(Es) else 0, Ec, 0], [v4, 0, 0, 1]]
    E2 = _prod(E, E)
    det = _prod(d, E2)
    U1 = _prod(E2, u[0])
    r = [_sum([_prod(det, u[j + 1]), -_prod([v2, v3, v4][j], U1)]) for j in range(3)]
    U2 = _sum([_prod(c, r[0]), -_prod(s, r[1])])
    U3 = _sum([_prod(s, r[0]), _prod(c, r[1])])
    if not (isinstance(E, int) and E == 1):
        U2, U3 = U2 / E, U3 / E
    U = [U1, U2, U3, r[2], u[4]]

    def q(g, dg):
        return _sum([dg / d if not _zero(dg) else 0, -(g * dd / (d * d)) if not (_zero(g) or _zero(dd)) else 0])

    B = [[1, 0, 0, 0, 0],
         [v2 / d if not _zero(v2) else 0, Ec / d, Es / d if not _zero(Es) else 0, 0, 0],
         [v3 / d if not _zero(v3) else 0, -(Es / d) if not _zero(Es) else 0, Ec / d, 0, 0],
         [v4 / d if not _zero(v4) else 0, 0, 0, 1 / d, 0],
         [0, 0, 0, 0, E2]]
    dv2 = _sum([_prod(mpp[0], x[1]), _prod(mpp[1], x[2]), _prod(mp[0], v2), _prod(mp[1], v3)])
    dv3 = _sum([_prod(mpp[0], x[2]), -_prod(mpp[1], x[1]), _prod(mp[0], v3), -_prod(mp[1], v2)])
    dEc = _sum([_prod(mp[0], Ec), -_prod(mp[1], Es)])
    dEs = _sum([_prod(mp[0], Es), _prod(mp[1], Ec)])
    z5 = [[0] * 5 for _ in range(5)]
    d1 = [[0] * 5 for _ in range(5)]
    d1[1][0], d1[1][1], d1[1][2] = q(v2, dv2), q(Ec, dEc), q(Es, dEs)
    d1[2][0], d1[2][1], d1[2][2] = q(v3, dv3), _sum([-q(Es, dEs)]) if not _zero(q(Es, dEs)) else 0, q(Ec, dEc)
    d1[3][0], d1[3][3] = q(v4, mpp[2]), q(1, 0)
    d1[4][4] = _prod(_prod(2, mp[0]), E2)
    d2 = [[0] * 5 for _ in range(5)]
    d2[1][0] = _sum([_prod(mp[0], Ec), -_prod(mp[1], Es)])
    d2[2][0] = _sum([-_prod(mp[0], Es), -_prod(mp[1], Ec)])
    d3 = [[0] * 5 for _ in range(5)]
    d3[1][0] = _sum([_prod(mp[0], Es), _prod(mp[1], Ec)])
    d3[2][0] = _sum([_prod(mp[0], Ec), -_prod(mp[1], Es)])
    for dk in (d2, d3):
        for mm in (1, 2):
            if not _zero(dk[mm][0]):
                dk[mm][0] = dk[mm][0] / d
    return D, B, [d1, d2, d3, z5], U, det


class FrameMap(_PiolaMixin, PointMap):
    """Time reparametrisation, rotation by ``m2``, dilation ``e^{m1}`` in the
    (x2, x3) plane and shift ``m3`` along x4, all profiles functions of X1.

    Covers XI1 (all profiles zero) and EULER_COMPOSED.
    """

    def __init__(self, time_map, profiles, spec=None, constants=None):
        self.time = time_map
        self.profiles = profiles
        self.spec = spec
        self.constants = dict(constants or {})
        self.symbolic = bool(time_map.symbolic and profiles.symbolic)

    def _vals(self, X1):
        m, mp, mpp = self.profiles.values(X1, self.time)
        return m, mp, mpp

    def coords(self, X):
        X = np.asarray(X, dtype=float)
        m, _, _ = self._vals(X[0])
        E, c, s = np.exp(m[0]), np.cos(m[1]), np.sin(m[1])
        return np.stack([self.time.forward(X[0]),
                         E * (c * X[1] + s * X[2]),
                         E * (-s * X[1] + c * X[2]),
                         X[3] + m[2]])

    def coords_inverse(self, x):
        x = np.asarray(x, dtype=float)
        X1 = self.time.inverse(x[0])
        m, _, _ = self._vals(X1)
        Ei, c, s = np.exp(-m[0]), np.cos(m[1]), np.sin(m[1])
        return np.stack([X1, Ei * (c * x[1] - s * x[2]), Ei * (s * x[1] + c * x[2]), x[3] - m[2]])

    def jacobian(self, X):
        X = np.asarray(X, dtype=float)
        m, mp, mpp = self._vals(X[0])
        x = self.coords(X)
        d = self.time.d(X[0])
        D, _, _, _, _ = _frame_pieces(d, self.time.dd(X[0]), list(m), list(mp), list(mpp),
                                   list(x), [0.0] * 5)
        out = np.zeros((4, 4) + X.shape[1:])
        for i in range(4):
            for j in range(4):
                out[i, j] = D[i][j]
        return out

    # closed-form pieces, expressions over lower x1..x4, u1..u5
    def _symbolic_pieces(self):
        X1 = self.time.inv
        sub = {"x1": X1}
        d = substitute(self.time.d_expr, sub)
        dd = substitute(self.time.dd_expr, sub)
        m = [substitute(e, sub) for e in self.profiles.m]
        mp = [substitute(e, sub) for e in self.profiles.mp]
        mpp = [substitute(e, sub) for e in self.profiles.mpp]
        x = [parse_expr(v) for v in X_VARS]
        u = [parse_expr(v) for v in U_VARS]
        return _frame_pieces(d, dd, m, mp, mpp, x, u)

    def balance_system(self, P: ConservationSystem) -> BalanceSystem:
        if self.symbolic:
            D, B, dB, U, det = self._symbolic_pieces()
            U = [as_expr(v) for v in U]
            F = _flux_rows_expr(P, U)
            el, _ = chain_elements(F, D, B, dB, det=det)
            consts = {**P.constants, **self.constants}
            return ExprBalanceSystem([as_expr(e) for e in el], consts, tag=P.tag)

        def fn(x, u):
            X1 = self.time.inverse(x[0])
            m, mp, mpp = self._vals(X1)
            D, B, dB, U, det = _frame_pieces(self.time.d(X1), self.time.dd(X1), list(m),
                                             list(mp), list(mpp), list(x), list(u))
            U = np.stack(np.broadcast_arrays(*U))
            F = _flux_rows_array(P, U)
            el, _ = chain_elements(F, D, B, dB, det=det)
            return np.stack(np.broadcast_arrays(*[np.asarray(e, dtype=float) for e in el]))

        return NumericBalanceSystem(fn, tag=P.tag)


# -- coordinate flow maps (XI2..XI4) -------------------------------------------

class FlowPiolaMap(_PiolaMixin, PointMap):
    """Coordinate map from RK4 of ``dX/da = xi(X)`` with variational Jacobian.

    Derivatives of the row-mixing matrix in X use centred differences with
    step ``fd_step``.
    """

    def __init__(self, spec: GeneratorSpec, steps: int = 256, fd_step: float = 1e-5):
        self.spec = spec
        self.steps = steps
        self.fd_step = fd_step
        self._flow = coordinate_flow(spec)
        f = spec.fn("f")
        self.symbolic = not f.variables

    def coords(self, X):
        return self._flow.run(np.asarray(X, dtype=float), self.spec.a, self.steps)[0]

    def coords_inverse(self, x):
        return self._flow.run(np.asarray(x, dtype=float), -self.spec.a, self.steps)[0]

    def jacobian(self, X):
        return self._flow.run(np.asarray(X, dtype=float), self.spec.a, self.steps,
                              variational=True)[1]

    def _mixing(self, D):
        d = D[0, 0]
        det = np.linalg.det(np.moveaxis(D, (0, 1), (-2, -1)))
        if np.any(det <= 0) or np.any(d == 0):
            raise SingularMapError("degenerate coordinate Jacobian")
        B = np.zeros((5, 5) + D.shape[2:])
        B[:4, :4] = D / d
        B[4, 4] = det / d
        return B

    def balance_system(self, P: ConservationSystem) -> BalanceSystem:
        if self.symbolic:
            return balance_from_conservation(P)

        def fn(x, u):
            shape = x.shape[1:]
            X = self.coords_inverse(x.reshape(4, -1))
            n = X.shape[1]
            h = self.fd_step
            pts = [X]
            for k in range(4):
                e = np.zeros((4, 1))
                e[k] = h
                pts += [X + e, X - e]
            D_all = self.jacobian(np.concatenate(pts, axis=1))
            D = D_all[..., :n]
            B = self._mixing(D)
            dB = []
            for k in range(4):
                Bp = self._mixing(D_all[..., (1 + 2 * k) * n:(2 + 2 * k) * n])
                Bm = self._mixing(D_all[..., (2 + 2 * k) * n:(3 + 2 * k) * n])
                dB.append((Bp - Bm) / (2 * h))
            det = np.linalg.det(np.moveaxis(D, (0, 1), (-2, -1)))
            uu = u.reshape(5, -1)
            sol = np.linalg.solve(np.moveaxis(D, (0, 1), (-2, -1)), uu[:4].T[..., None])[..., 0].T
            U = np.vstack([sol * det, uu[4:5]])
            F = _flux_rows_array(P, U)
            nest = lambda A: [[A[i, j] for j in range(A.shape[1])] for i in range(A.shape[0])]
            el, _ = chain_elements(F, nest(D), nest(B), [nest(a) for a in dB])
            out = np.stack(np.broadcast_arrays(*[np.asarray(e, dtype=float) for e in el]))
            return out.reshape((16,) + shape)

        return NumericBalanceSystem(fn, tag=P.tag)


# -- field-only maps (XI5..XI12) -----------------------------------------------

class FieldMap(PointMap):
    """``x = X`` and ``u = Phi(x, U)`` given by expressions (affine in U)."""

    symbolic = True

    def __init__(self, fwd, inv, spec=None, constants=None):
        # fwd: 5 exprs over x1..x4, U1..U5; inv: 5 exprs over x1..x4, u1..u5
        self.fwd = [as_expr(e) for e in fwd]
        self.inv = [as_expr(e) for e in inv]
        self.spec = spec
        self.constants = dict(constants or {})
        bf = [substitute(e, self.constants) for e in self.fwd]
        bi = [substitute(e, self.constants) for e in self.inv]
        self._fwd = Compiled(bf, X_VARS + CAP_U_VARS)
        self._inv = Compiled(bi, X_VARS + U_VARS)

    def coords(self, X):
        return np.array(X, dtype=float)

    def coords_inverse(self, x):
        return np.array(x, dtype=float)

    def jacobian(self, X):
        X = np.asarray(X, dtype=float)
        return np.broadcast_to(np.eye(4).reshape((4, 4) + (1,) * (X.ndim - 1)),
                               (4, 4) + X.shape[1:]).copy()

    def field(self, X, U):
        return self._fwd.array(*np.asarray(X, dtype=float), *np.asarray(U, dtype=float))

    def field_inverse(self, x, u):
        return self._inv.array(*np.asarray(x, dtype=float), *np.asarray(u, dtype=float))

    def _pieces(self):
        A = [[diff_expr(self.fwd[i], CAP_U_VARS[j]) for j in range(5)] for i in range(5)]
        b = [substitute(e, {v: 0 for v in CAP_U_VARS}) for e in self.fwd]
        dB = [[[diff_expr(A[i][j], X_VARS[k]) for j in range(5)] for i in range(5)]
              for k in range(4)]
        b_dx1 = [diff_expr(e, "x1") for e in b]
        D = [[1 if i == j else 0 for j in range(4)] for i in range(4)]
        return D, A, dB, b, b_dx1

    def row1_defect(self):
        """Source generated in the mass row; must vanish for a valid map."""
        _, A, dB, b, _ = self._pieces()
        terms = [diff_expr(b[k], X_VARS[k]) for k in range(4)]
        return _sum(terms)

    def induced_exprs(self, P: ConservationSystem):
        D, A, dB, _, b_dx1 = self._pieces()
        F = _flux_rows_expr(P, self.inv)
        el, _ = chain_elements(F, D, A, dB, b_dx1)
        return [as_expr(e) for e in el]

    def balance_system(self, P: ConservationSystem) -> BalanceSystem:
        return ExprBalanceSystem(self.induced_exprs(P), {**P.constants, **self.constants},
                                 tag=P.tag)


class InverseMap(PointMap):
    """Group inverse of a map (``a -> -a``)."""

    def __init__(self, base: PointMap):
        self.base = base
        self.spec = base.spec.with_a(-base.spec.a) if base.spec is not None else None

    def coords(self, X):
        return self.base.coords_inverse(X)

    def coords_inverse(self, x):
        return self.base.coords(x)

    def field(self, X, U):
        return self.base.field_inverse(X, U)

    def field_inverse(self, x, u):
        return self.base.field(x, u)

    def jacobian(self, X):
        x = self.coords(X)
        D = np.moveaxis(self.base.jacobian(x), (0, 1), (-2, -1))
        return np.moveaxis(np.linalg.inv(D), (-2, -1), (0, 1))


def invert(t: PointMap) -> PointMap:
    if isinstance(t, InverseMap):
        return t.base
    return InverseMap(t)


# -- family constructors -----------------------------------------------------------

def _a_var():
    return parse_expr("a")


def _consts(spec):
    return {**spec.constants, "a": spec.a}


def _x1_time_map(spec):
    f = spec.fn("f")
    tm = affine_time_map(f, spec.a)
    return tm if tm is not None else FlowTimeMap(f, spec.a)


def make_map(spec: GeneratorSpec, steps: int = 256, fd_step: float = 1e-5) -> PointMap:
    fam = spec.family
    x = [parse_expr(v) for v in X_VARS]
    U = [parse_expr(v) for v in CAP_U_VARS]
    u = [parse_expr(v) for v in U_VARS]
    a = _a_var()
    if fam == "XI1":
        return FrameMap(_x1_time_map(spec), _ZeroProfiles(), spec)
    if fam in ("XI2", "XI3", "XI4"):
        return FlowPiolaMap(spec, steps, fd_step)
    if fam in ("XI5", "XI6", "XI7", "XI8"):
        i = spec.index - 1
        f = spec.payload["f"]
        fwd = U[:4] + [U[4] + a * U[i] * f]
        inv = u[:4] + [u[4] - a * u[i] * f]
        return FieldMap(fwd, inv, spec, _consts(spec))
    if fam == "XI9":
        f = spec.payload["f"]
        return FieldMap(U[:4] + [U[4] * ex.exp(a * f)], u[:4] + [u[4] * ex.exp(-(a * f))],
                        spec, _consts(spec))
    if fam == "XI10":
        f = spec.payload["f"]
        return FieldMap(U[:4] + [U[4] + a * f], u[:4] + [u[4] - a * f], spec, _consts(spec))
    if fam == "XI11":
        g = [spec.payload[f"g{k}"] for k in range(1, 5)]
        rep = check_divergence_free([spec.fn(f"g{k}") for k in range(1, 5)])
        if not rep.passed:
            raise TransformError(f"XI11 payload violates the divergence condition "
                                 f"(max |sum d_k g_k| = {rep.max_abs:.3g})")
        fwd = [U[k] + a * g[k] for k in range(4)] + [U[4]]
        inv = [u[k] - a * g[k] for k in range(4)] + [u[4]]
        return FieldMap(fwd, inv, spec, _consts(spec))
    if fam == "XI12":
        ea = ex.exp(a)
        fwd = [ea * U[k] for k in range(4)] + [U[4]]
        inv = [ex.exp(-a) * u[k] for k in range(4)] + [u[4]]
        return FieldMap(fwd, inv, spec, _consts(spec))
    # EULER_COMPOSED
    if spec.mode == "B":
        tm = FlowTimeMap(spec.payload["f1"], spec.a, spec.constants)
        prof = QuadratureProfiles([spec.payload[k] for k in ("n1", "n2", "n3")],
                                  spec.payload["f1"], spec.constants)
        return FrameMap(tm, prof, spec, _consts(spec))
    consts = _consts(spec)
    fwd = spec.payload.get("x1_map", parse_expr("x1 + a"))
    inv = spec.payload.get("x1_inverse", parse_expr("x1 - a"))
    tm = ExprTimeMap(fwd, inv, consts)
    _check_time_inverse(tm)
    prof = ExprProfiles([spec.payload[k] for k in ("m1", "m2", "m3")], spec.a, spec.constants)
    return FrameMap(tm, prof, spec, consts)


def _check_time_inverse(tm):
    pts = np.linspace(-2.0, 2.0, 9)
    try:
        back = tm.inverse(tm.forward(pts))
    except ex.EvalError:
        return
    if np.max(np.abs(back - pts)) > 1e-9:
        raise TransformError("x1_inverse is not the inverse of x1_map")


def _transform(P, spec):
    t = make_map(spec)
    return t, t.balance_system(P)


def xi1_transform(P: ConservationSystem, f, a: float):
    return _transform(P, GeneratorSpec("XI1", {"f": f}, a))


def xi234_transform(P: ConservationSystem, f, i: int, a: float):
    if i not in (2, 3, 4):
        raise TransformError("i must be 2, 3 or 4")
    return _transform(P, GeneratorSpec(f"XI{i}", {"f": f}, a))


_KINDS = {"EXP_SCALE": "XI9", "ADD_FUNCTION": "XI10"}


def xi5to10_transform(P: ConservationSystem, kind: str, f, a: float, i: int | None = None):
    """``kind`` is ``ADD_SCALED_UI`` (with ``i`` in 1..4), ``EXP_SCALE`` or ``ADD_FUNCTION``."""
    if kind == "ADD_SCALED_UI":
        if i not in (1, 2, 3, 4):
            raise TransformError("ADD_SCALED_UI needs i in 1..4")
        fam = f"XI{4 + i}"
    elif kind in _KINDS:
        fam = _KINDS[kind]
    else:
        raise TransformError(f"unknown kind {kind!r}")
    return _transform(P, GeneratorSpec(fam, {"f": f}, a))


def xi11_transform(P: ConservationSystem, g, a: float):
    g = list(g)
    return _transform(P, GeneratorSpec("XI11", {f"g{k + 1}": g[k] for k in range(4)}, a))


def xi12_transform(P: ConservationSystem, a: float):
    """Uniform scaling of u1..u4; returns the rescaled autonomous system."""
    t = make_map(GeneratorSpec("XI12", {}, a))
    el = t.induced_exprs(P)
    ren = dict(zip(U_VARS, (parse_expr(v) for v in CAP_U_VARS)))
    fl = [substitute(e, ren) for e in el[:12]]
    return t, ConservationSystem(fl, {**P.constants, "a": a}, tag=None)


def euler_composed_transform(P: ConservationSystem, profiles: dict, a: float,
                             constants: dict | None = None):
    return _transform(P, GeneratorSpec("EULER_COMPOSED", dict(profiles), a, dict(constants or {})))


def derive_closed_form(P: ConservationSystem, spec: GeneratorSpec):
    """Closed-form induced system, or :class:`ClosedFormUnavailable`."""
    if spec.family == "XI12":
        return xi12_transform(P, spec.a)[1]
    t = make_map(spec)
    if not t.symbolic:
        why = {"XI1": "f is not affine in x1, so the time map has no closed form",
               "EULER_COMPOSED": "mode B profiles are defined by quadrature"}.get(
            spec.family, "the coordinate flow of a nonconstant f has no closed form")
        raise ClosedFormUnavailable(f"{spec.family}: {why}; use the numeric evaluator "
                                    f"(transform/pipeline commands) instead")
    return t.balance_system(P)


# -- divergence condition ------------------------------------------------------------

@dataclass
class DivergenceReport:
    passed: bool
    max_abs: float
    n_points: int
    worst_point: list

    def to_json(self):
        return {"passed": self.passed, "max_abs": self.max_abs,
                "n_points": self.n_points, "worst_point": self.worst_point}


def check_divergence_free(g, box=((-1, 1),) * 4, n: int = 1000, tol: float = 1e-8,
                          constants=None) -> DivergenceReport:
    """Test ``sum_k d_{x_k} g_k = 0`` at ``n`` Halton points in ``box``."""
    allowed = set(X_VARS) | set(constants or {})
    gs = [parse_expr(e, allowed) if isinstance(e, str) else as_expr(e) for e in g]
    if len(gs) != 4:
        raise TransformError("need four functions g1..g4")
    div = _sum([diff_expr(gs[k], X_VARS[k]) for k in range(4)])
    div = substitute(as_expr(div), dict(constants or {}))
    pts = qmc.Halton(d=4, scramble=False).random(n + 1)[1:].T
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    pts = lo[:, None] + (hi - lo)[:, None] * pts
    vals = np.abs(Compiled([div], X_VARS).array(*pts)[0])
    k = int(np.argmax(vals))
    mx = float(vals[k])
    return DivergenceReport(mx <= tol, mx, n, pts[:, k].tolist())


# -- rotating frame with gravity -------------------------------------------------------

DISPLAYED_SYSTEM_SIGNS = (-1, +1)
GENERAL_FORMULA_SIGNS = (+1, +1)


def rotating_gravity_system(omega: float, g: float, pressure, signs=None,
                            constants=None) -> ExprBalanceSystem:
    """Euler balance system in a frame rotating about x4 with gravity along x4.

    Sources: ``(2w u3 + s1 w^2 x2 u1, -2w u2 + s2 w^2 x3 u1, g u1, 0)``.
    ``signs=(s1, s2)`` defaults to the choice selected by
    :func:`select_centrifugal_signs`.
    """
    if signs is None:
        signs = select_centrifugal_signs(pressure=pressure, constants=constants)["selected"]
    s1, s2 = signs
    consts = {**dict(constants or {}), "omega": float(omega), "g": float(g)}
    P = build_euler_system(pressure, constants)
    base = balance_from_conservation(P).exprs[:12]
    w, gv = parse_expr("omega"), parse_expr("g")
    x = [parse_expr(v) for v in X_VARS]
    u = [parse_expr(v) for v in U_VARS]
    src = [2 * w * u[2] + s1 * w ** 2 * x[1] * u[0],
           -2 * w * u[1] + s2 * w ** 2 * x[2] * u[0],
           gv * u[0], 0]
    return ExprBalanceSystem(list(base) + src, consts, tag="euler")


def pushforward(t: PointMap, src):
    """Field ``u(x) = Phi(X, U(X))`` with ``X = phi^{-1}(x)``."""

    def fn(x):
        X = t.coords_inverse(x)
        return t.field(X, src(X))

    return AnalyticField(fn, name="pushforward")


def select_centrifugal_signs(omega: float = 1.0, pressure=None, constants=None,
                             rest_state=(1.3, 0.0, 0.0, 0.0, 0.4), seed: int = 7,
                             n_points: int = 64, tol: float = 1e-10):
    """Pick the w^2 signs by the rest-state oracle.

    A fluid at rest in the inertial frame, seen from the rotating frame,
    must satisfy the rotating-frame system exactly.  Returns the residual of
    every sign combination and the one whose residual vanishes.
    """
    from .systems import ideal_gas_pressure
    pressure = pressure if pressure is not None else ideal_gas_pressure(1.4)
    spec = GeneratorSpec("EULER_COMPOSED", {"m1": "0", "m2": "omega*x1", "m3": "0",
                                            "x1_map": "x1", "x1_inverse": "x1"},
                         0.0, {**dict(constants or {}), "omega": omega})
    t = make_map(spec)
    field = pushforward(t, AnalyticField.constant(rest_state))
    pts = Lcg64(seed).box([0.0, -1.0, -1.0, -1.0], [1.0, 1.0, 1.0, 1.0], n_points)
    h = np.full(4, 1e-3)
    results = {}
    for s1 in (+1, -1):
        for s2 in (+1, -1):
            sysm = rotating_gravity_system(omega, 0.0, pressure, (s1, s2), constants)
            r = residual(sysm, field, pts, h)
            results[(s1, s2)] = float(np.max(np.abs(r)))
    ok = [k for k, v in results.items() if v < tol]
    if len(ok) != 1:
        raise RuntimeError(f"rest-state oracle is ambiguous: {results}")
    sel = ok[0]
    return {"selected": sel, "residuals": results, "omega": omega,
            "matches_displayed_system": sel == DISPLAYED_SYSTEM_SIGNS,
            "matches_general_formula": sel == GENERAL_FORMULA_SIGNS}
