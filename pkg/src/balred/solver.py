"""First-order finite-volume solver for conservation and balance systems.

The first independent variable ``x1`` is time; cells live on a uniform grid
over ``(x2, x3, x4)``.  Fluxes are combined with the Rusanov (local
Lax-Friedrichs) face flux, summed over directions (unsplit).  Balance
systems are advanced with Strang splitting: a half step of the source ODE,
a full transport step and another half step of the source ODE.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .expr import Compiled, as_expr
from .systems import (U_VARS, X_VARS, AnalyticField, BalanceSystem, ConservationSystem,
                      DiscreteField, ExprBalanceSystem, Field, Grid)
from .transforms import pushforward

BOUNDARY_CONDITIONS = ("periodic", "zero_gradient")
INTEGRATORS = ("euler", "ssprk2")
SAFETY = 1.1


class SolverError(RuntimeError):
    """Run aborted; ``step`` and ``time`` locate the failure."""

    def __init__(self, message, step=None, time=None):
        super().__init__(f"{message} (step {step}, x1 = {time})" if step is not None else message)
        self.step = step
        self.time = time


@dataclass
class SolverConfig:
    n: tuple = (64, 1, 1)
    lo: tuple = (0.0, 0.0, 0.0)
    hi: tuple = (1.0, 1.0, 1.0)
    cfl: float = 0.4
    t_start: float = 0.0
    t_end: float = 0.1
    bc: object = "periodic"
    integrator: str = "ssprk2"
    snapshot_interval: float | None = None
    wave_speed_bound: float | None = None
    power_iterations: int = 20
    max_steps: int = 1_000_000

    def __post_init__(self):
        if not 0.0 < self.cfl <= 0.9:
            raise ValueError("CFL number must lie in (0, 0.9]")
        if self.t_end < self.t_start:
            raise ValueError("t_end precedes t_start")
        if self.integrator not in INTEGRATORS:
            raise ValueError(f"integrator must be one of {INTEGRATORS}")
        bcs = (self.bc,) * 3 if isinstance(self.bc, str) else tuple(self.bc)
        if len(bcs) != 3 or any(b not in BOUNDARY_CONDITIONS for b in bcs):
            raise ValueError(f"bc must be one of {BOUNDARY_CONDITIONS} (or three of them)")
        if self.snapshot_interval is not None and self.snapshot_interval <= 0:
            raise ValueError("snapshot_interval must be positive")
        self.grid  # validates the box

    @property
    def grid(self) -> Grid:
        return Grid(self.lo, self.hi, self.n)

    @property
    def bcs(self):
        return (self.bc,) * 3 if isinstance(self.bc, str) else tuple(self.bc)

    def snapshot_times(self):
        t0, t1 = self.t_start, self.t_end
        if self.snapshot_interval is None or t1 == t0:
            return [t0, t1] if t1 > t0 else [t0]
        k = int(math.floor((t1 - t0) / self.snapshot_interval + 1e-9))
        ts = [t0 + i * self.snapshot_interval for i in range(k + 1)]
        if t1 - ts[-1] > 1e-12 * max(1.0, abs(t1)):
            ts.append(t1)
        return ts

    def to_json(self):
        d = asdict(self)
        d["n"], d["lo"], d["hi"] = list(self.n), list(self.lo), list(self.hi)
        if not isinstance(self.bc, str):
            d["bc"] = list(self.bc)
        return d


# -- flux and wave-speed evaluators ----------------------------------------------------

class _Physics:
    """Uniform view of a conservation or balance system for the scheme."""

    def __init__(self, system, bound=None, iters=20):
        self.system = system
        self.balance = isinstance(system, BalanceSystem)
        self.bound = bound
        self.iters = iters
        self.tag = system.tag
        self._jac = {}

    def flux(self, x, u, k):
        if self.balance:
            q, _ = self.system.flux_matrix(x, u)
        else:
            q = self.system.flux_matrix(u)
        return q[:, k]

    def sources(self, x, u):
        return self.system.flux_matrix(x, u)[1]

    def _jacobian(self, x, u, k):
        """dF_k/du as (N, 5, 5) for flattened points."""
        s = self.system
        if not self.balance:
            vals = s.flux_jacobian(k).array(*u)
            return np.moveaxis(vals.reshape((5, 5, -1)), -1, 0)
        if isinstance(s, ExprBalanceSystem):
            if k not in self._jac:
                der = s.derivative_exprs()
                rows = [[as_expr(1.0 if j == k else 0.0) for j in range(5)]]
                rows += [der[3 * r + k - 1] for r in range(4)]
                self._jac[k] = Compiled([e for row in rows for e in row], X_VARS + U_VARS)
            vals = self._jac[k].array(*x, *u)
            return np.moveaxis(vals.reshape((5, 5, -1)), -1, 0)
        # opaque evaluator: centred differences in u
        base = np.abs(u) + 1.0
        cols = []
        for j in range(5):
            e = np.zeros_like(u)
            e[j] = 1e-6 * base[j]
            cols.append((self.flux(x, u + e, k) - self.flux(x, u - e, k)) / (2 * e[j]))
        return np.moveaxis(np.stack(cols, axis=1), -1, 0)

    def speed(self, x, u, k):
        """Spectral-radius bound of the direction-k flux Jacobian, shape u.shape[1:]."""
        shape = u.shape[1:]
        if self.bound is not None:
            return np.full(shape, float(self.bound))
        xf = x.reshape(4, -1)
        uf = u.reshape(5, -1)
        J = self._jacobian(xf, uf, k)
        if not np.all(np.isfinite(J)):
            raise FloatingPointError("non-finite flux Jacobian")
        return (SAFETY * kernels.spectral_radius(J, self.iters)).reshape(shape)


def _pad(a, axis, bc):
    """One ghost cell on each side of ``axis`` (array axis index)."""
    mode = "wrap" if bc == "periodic" else "edge"
    widths = [(0, 0)] * a.ndim
    widths[axis] = (1, 1)
    return np.pad(a, widths, mode=mode)


class _Scheme:
    def __init__(self, phys: _Physics, cfg: SolverConfig):
        self.phys = phys
        self.cfg = cfg
        self.grid = cfg.grid
        self.h = self.grid.spacing
        self.centers = self.grid.centers()
        self.active = [i for i in range(3) if self.grid.n[i] > 1]

    def cell_x(self, t):
        x = np.empty((4,) + self.grid.n)
        x[0] = t
        x[1:] = self.centers
        return x

    def face_x(self, t, i):
        """Coordinates of the n_i + 1 faces normal to axis i."""
        g = self.grid
        axes = [g.axis_centers(j) for j in range(3)]
        axes[i] = g.lo[i] + np.arange(g.n[i] + 1) * self.h[i]
        mesh = np.meshgrid(*axes, indexing="ij")
        x = np.empty((4,) + mesh[0].shape)
        x[0] = t
        x[1:] = mesh
        return x

    def speeds(self, t, u):
        x = self.cell_x(t)
        return {i: self.phys.speed(x, u, i + 1) for i in self.active}

    def stable_dt(self, t, u):
        s = self.speeds(t, u)
        if not s:
            return math.inf, s
        rate = sum(s[i] / self.h[i] for i in self.active)
        m = float(np.max(rate))
        return (self.cfg.cfl / m if m > 0 else math.inf), s

    def rhs(self, t, u, speeds=None):
        """Minus the flux divergence."""
        out = np.zeros_like(u)
        if speeds is None:
            speeds = self.speeds(t, u)
        xc = self.cell_x(t) if not self.phys.balance else None
        for i in self.active:
            ax = i + 1
            bc = self.cfg.bcs[i]
            up = _pad(u, ax, bc)
            sp = _pad(speeds[i], i, bc)
            uL = np.take(up, np.arange(0, up.shape[ax] - 1), axis=ax)
            uR = np.take(up, np.arange(1, up.shape[ax]), axis=ax)
            if self.phys.balance:
                xf = self.face_x(t, i)
                fL = self.phys.flux(xf, uL, i + 1)
                fR = self.phys.flux(xf, uR, i + 1)
            else:
                fp = _pad(self.phys.flux(xc, u, i + 1), ax, bc)
                fL = np.take(fp, np.arange(0, fp.shape[ax] - 1), axis=ax)
                fR = np.take(fp, np.arange(1, fp.shape[ax]), axis=ax)
            sL = np.take(sp, np.arange(0, sp.shape[i] - 1), axis=i)
            sR = np.take(sp, np.arange(1, sp.shape[i]), axis=i)
            lead = lambda a, nd: np.moveaxis(a, ax if nd == 5 else i, -1)
            shp = lead(uL, 5).shape
            r = lambda a: lead(a, 5).reshape(5, -1, shp[-1])
            rs = lambda a: lead(a, 3).reshape(-1, shp[-1])
            div = kernels.rusanov_divergence(r(uL), r(uR), r(fL), r(fR), rs(sL), rs(sR),
                                             1.0 / self.h[i])
            div = np.moveaxis(div.reshape(shp[:-1] + (shp[-1] - 1,)), -1, ax)
            out -= div
        return out

    def transport(self, t, u, dt, speeds=None):
        k1 = self.rhs(t, u, speeds)
        u1 = u + dt * k1
        if self.cfg.integrator == "euler":
            return u1
        self.check(u1, None, t + dt)
        return 0.5 * u + 0.5 * (u1 + dt * self.rhs(t + dt, u1))

    def source_step(self, t, u, dt):
        """RK4 on du/dx1 = sources at fixed cell centres over [t, t + dt]."""
        def f(tt, v):
            s = np.zeros_like(v)
            s[1:] = self.phys.sources(self.cell_x(tt), v)
            return s
        k1 = f(t, u)
        k2 = f(t + 0.5 * dt, u + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, u + 0.5 * dt * k2)
        k4 = f(t + dt, u + dt * k3)
        return u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def check(self, u, step, t):
        if not np.all(np.isfinite(u)):
            raise SolverError("non-finite state", step, t)
        if self.phys.tag == "euler" and np.any(u[0] <= 0):
            raise SolverError("nonpositive density (vacuum guard)", step, t)


def _initial_state(ic, grid, t0):
    x = np.empty((4,) + grid.n)
    x[0] = t0
    x[1:] = grid.centers()
    return np.array(ic(x), dtype=float).reshape((5,) + grid.n)


def _run(system, ic, cfg: SolverConfig, split: bool, stats=None):
    phys = _Physics(system, cfg.wave_speed_bound, cfg.power_iterations)
    sch = _Scheme(phys, cfg)
    t = cfg.t_start
    u = _initial_state(ic, sch.grid, t)
    sch.check(u, 0, t)
    targets = cfg.snapshot_times()
    snaps = [u.copy()]
    times = [t]
    step = 0
    max_courant = 0.0
    has_sources = split and phys.balance
    for target in targets[1:]:
        while t < target:
            if step >= cfg.max_steps:
                raise SolverError("step limit reached", step, t)
            try:
                dt, speeds = sch.stable_dt(t, u)
            except FloatingPointError as exc:
                raise SolverError(f"wave-speed evaluation failed: {exc}", step, t) from exc
            last = False
            if dt >= target - t:
                dt = target - t
                last = True
            elif not math.isfinite(dt):
                dt, last = target - t, True
            if speeds:
                rate = sum(speeds[i] / sch.h[i] for i in sch.active)
                max_courant = max(max_courant, float(np.max(rate)) * dt)
            try:
                if has_sources:
                    u = sch.source_step(t, u, 0.5 * dt)
                    u = sch.transport(t, u, dt)
                    u = sch.source_step(t + 0.5 * dt, u, 0.5 * dt)
                else:
                    u = sch.transport(t, u, dt, speeds)
            except (FloatingPointError, ArithmeticError) as exc:
                raise SolverError(f"evaluation failed: {exc}", step, t) from exc
            step += 1
            t = target if last else t + dt
            sch.check(u, step, t)
        snaps.append(u.copy())
        times.append(t)
    if stats is not None:
        stats.update(steps=step, max_courant=max_courant, backend=kernels.BACKEND)
    meta = {"steps": step, "max_courant": max_courant, "kernel_backend": kernels.BACKEND,
            "solver": cfg.to_json(), "method": "strang" if has_sources else "unsplit"}
    return DiscreteField(sch.grid, times, np.array(snaps),
                         tuple(b == "periodic" for b in cfg.bcs), meta)


def solve_conservation(system: ConservationSystem, ic: Field, cfg: SolverConfig,
                       stats: dict | None = None) -> DiscreteField:
    """Rusanov solution of an autonomous conservation system."""
    return _run(system, ic, cfg, split=False, stats=stats)


def solve_balance_splitting(system, ic: Field, cfg: SolverConfig,
                            stats: dict | None = None) -> DiscreteField:
    """Strang-split solution of a balance system (plain transport if autonomous)."""
    return _run(system, ic, cfg, split=True, stats=stats)


# -- initial data ----------------------------------------------------------------------

def isentropic_vortex_field(center=(0.0, 0.0), strength: float = 5.0,
                            velocity=(1.0, 0.0), gamma: float = 1.4,
                            rho_inf: float = 1.0, p_inf: float = 1.0) -> AnalyticField:
    """Exact isentropic vortex in the (x2, x3) plane, advected by ``velocity``.

    States are ``(rho, rho v2, rho v3, 0, rho S)`` with ``p = rho^gamma e^S``.
    """
    if gamma <= 1.0:
        raise ValueError("gamma must exceed 1")
    K = p_inf / rho_inf ** gamma
    S0 = math.log(K)
    T_inf = p_inf / rho_inf
    amp = (gamma - 1.0) * strength ** 2 / (8.0 * gamma * math.pi ** 2)
    c2, c3 = (float(c) for c in center)
    v2, v3 = (float(v) for v in velocity)

    def fn(x):
        dx = x[1] - c2 - v2 * x[0]
        dy = x[2] - c3 - v3 * x[0]
        r2 = dx * dx + dy * dy
        T = T_inf - amp * np.exp(1.0 - r2)
        rho = (T / K) ** (1.0 / (gamma - 1.0))
        w = strength / (2.0 * math.pi) * np.exp(0.5 * (1.0 - r2))
        a = v2 - w * dy
        b = v3 + w * dx
        return np.stack([rho, rho * a, rho * b, np.zeros_like(rho), rho * S0])

    return AnalyticField(fn, name="isentropic_vortex")


def riemann_initial_field(left, right, x0: float = 0.5, gamma: float = 1.4,
                          energy_form: bool = True) -> AnalyticField:
    """Piecewise-constant data along x2 from primitive ``(rho, v, p)`` states."""

    def cons(s):
        rho, v, p = (float(c) for c in s)
        if energy_form:
            return np.array([rho, rho * v, 0.0, 0.0, p / (gamma - 1.0) + 0.5 * rho * v * v])
        return np.array([rho, rho * v, 0.0, 0.0, rho * math.log(p / rho ** gamma)])

    L, R = cons(left), cons(right)

    def fn(x):
        side = (x[1] < x0)[None]
        return np.where(side, L.reshape((5,) + (1,) * (x.ndim - 1)),
                        R.reshape((5,) + (1,) * (x.ndim - 1)))

    return AnalyticField(fn, name="riemann")


def sample_field(src: Field, grid: Grid, times, periodic=(True, True, True)) -> DiscreteField:
    """Point samples of ``src`` at cell centres, one snapshot per time."""
    data = [_initial_state(src, grid, t) for t in times]
    return DiscreteField(grid, list(times), np.array(data), tuple(periodic))


def pushforward_field(t, src: Field) -> Field:
    """``u(x) = Phi(X, U(X))`` with ``X`` the pre-image of ``x``."""
    return pushforward(t, src)
