import math
import os
import subprocess
import sys

import numpy as np
import pytest

from balred import kernels
from balred import _kernels_py
from balred.solver import (SolverConfig, SolverError, isentropic_vortex_field,
                           riemann_initial_field, sample_field, solve_balance_splitting,
                           solve_conservation)
from balred.systems import (AnalyticField, ExprBalanceSystem, balance_from_conservation,
                            build_euler_energy_system, build_euler_system, ideal_gas_pressure)
from balred.verify import exact_riemann_euler

P = build_euler_system(ideal_gas_pressure(1.4))
VORTEX = isentropic_vortex_field(strength=5.0, velocity=(0.5, 0.3), p_inf=1.5)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(cfl=0.95)
    with pytest.raises(ValueError):
        SolverConfig(cfl=0.0)
    with pytest.raises(ValueError):
        SolverConfig(bc="reflective")
    with pytest.raises(ValueError):
        SolverConfig(t_end=-1.0)
    c = SolverConfig(t_end=1.0, snapshot_interval=0.3)
    assert np.allclose(c.snapshot_times(), [0, 0.3, 0.6, 0.9, 1.0])


@pytest.mark.parametrize("integrator", ["euler", "ssprk2"])
def test_constant_state_preserved(integrator):
    cfg = SolverConfig(n=(10, 8, 1), lo=(0, 0, 0), hi=(1, 1, 1), t_end=0.2,
                       integrator=integrator)
    F = solve_conservation(P, AnalyticField.constant((1.2, 0.3, -0.1, 0.05, 0.5)), cfg)
    assert F.meta["steps"] > 5
    assert np.max(np.abs(F.data[-1] - F.data[0])) <= 1e-14


def test_periodic_conservation():
    cfg = SolverConfig(n=(24, 24, 1), lo=(-5, -5, 0), hi=(5, 5, 1), t_end=0.3)
    F = solve_conservation(P, VORTEX, cfg)
    s0 = F.data[0].sum(axis=(1, 2, 3))
    s1 = F.data[-1].sum(axis=(1, 2, 3))
    assert np.all(np.abs(s1 - s0) <= 1e-12 * np.maximum(np.abs(s0), 1.0))
    assert F.meta["max_courant"] <= cfg.cfl + 1e-12


def test_zero_source_splitting_matches_conservation():
    cfg = SolverConfig(n=(16, 16, 1), lo=(-5, -5, 0), hi=(5, 5, 1), t_end=0.2)
    A = solve_conservation(P, VORTEX, cfg)
    B = solve_balance_splitting(balance_from_conservation(P), VORTEX, cfg)
    assert A.meta["steps"] == B.meta["steps"]
    assert np.array_equal(A.data, B.data)


def test_coriolis_ode_preserves_kinetic_energy():
    w = 1.0
    sysm = ExprBalanceSystem(["0"] * 12 + [f"{2 * w}*u3", f"-{2 * w}*u2", "0", "0"])
    cfg = SolverConfig(n=(4, 1, 1), t_end=math.pi / w, cfl=0.5, wave_speed_bound=50.0)
    F = solve_balance_splitting(sysm, AnalyticField.constant((1.0, 0.6, -0.2, 0.0, 0.0)), cfg)
    u = F.data[-1]
    e0 = 0.6 ** 2 + 0.2 ** 2
    assert np.max(np.abs(u[1] ** 2 + u[2] ** 2 - e0)) < 1e-10
    # full turn of the (u2, u3) vector
    assert np.allclose(u[1], 0.6, atol=1e-9) and np.allclose(u[2], -0.2, atol=1e-9)


def test_vacuum_guard_reports_step():
    E = build_euler_energy_system(1.4)
    ic = AnalyticField(lambda x: np.stack([np.where(x[1] < 0.5, 1.0, -0.1), 0 * x[1],
                                           0 * x[1], 0 * x[1], 2.5 + 0 * x[1]]))
    cfg = SolverConfig(n=(20, 1, 1), t_end=0.1, bc=("zero_gradient", "periodic", "periodic"))
    with pytest.raises(SolverError) as err:
        solve_conservation(E, ic, cfg)
    assert err.value.step == 0 and "density" in str(err.value)


def test_vortex_strength_zero_is_uniform():
    f = isentropic_vortex_field(strength=0.0, velocity=(0.2, 0.1))
    x = np.random.default_rng(0).uniform(-2, 2, (4, 30))
    u = f(x)
    assert np.allclose(u, u[:, :1])


def test_vortex_translates():
    f = isentropic_vortex_field(strength=5.0, velocity=(0.5, 0.3))
    x = np.array([[0.0], [0.2], [0.1], [0.0]])
    y = x + np.array([[2.0], [1.0], [0.6], [0.0]])
    assert np.allclose(f(x), f(y))


def test_sod_shock_tube():
    E = build_euler_energy_system(1.4)
    cfg = SolverConfig(n=(200, 1, 1), t_end=0.2, cfl=0.8,
                       bc=("zero_gradient", "periodic", "periodic"))
    S = solve_conservation(E, riemann_initial_field((1, 0, 1), (0.125, 0, 0.1)), cfg)
    rho, _, _ = exact_riemann_euler((1, 0, 1), (0.125, 0, 0.1)).sample(
        (S.grid.axis_centers(0) - 0.5) / 0.2)
    assert np.sum(np.abs(S.data[-1, 0, :, 0, 0] - rho)) / 200 < 0.03


def test_sample_field_matches_source():
    g = SolverConfig(n=(8, 8, 1), lo=(-1, -1, 0), hi=(1, 1, 1)).grid
    D = sample_field(VORTEX, g, [0.0, 0.5])
    x = np.empty((4, 8, 8, 1))
    x[0] = 0.5
    x[1:] = g.centers()
    assert np.allclose(D.data[1], VORTEX(x))


def test_kernel_backends_agree():
    rng = np.random.default_rng(1)
    M, nf = 7, 9
    args = [rng.normal(size=(5, M, nf)) for _ in range(4)]
    sL, sR = rng.uniform(0.1, 2, (M, nf)), rng.uniform(0.1, 2, (M, nf))
    a = kernels.rusanov_divergence(*args, sL, sR, 3.0)
    b = _kernels_py.rusanov_divergence(*args, sL, sR, 3.0)
    assert np.allclose(a, b, atol=1e-13)
    J = rng.normal(size=(20, 5, 5))
    sr = kernels.spectral_radius(J, 40)
    assert np.allclose(sr, _kernels_py.spectral_radius(J, 40), atol=1e-12)


def test_spectral_radius_of_euler_jacobian():
    U = np.array([1.2, 0.3, -0.2, 0.1, 0.4])
    J = np.array(P.flux_jacobian(1).scalar(*U)).reshape(1, 5, 5)
    rho = U[0]
    v = U[1] / rho
    p = rho ** 1.4 * math.exp(U[4] / rho)
    c = math.sqrt(1.4 * p / rho)
    assert kernels.spectral_radius(J, 60)[0] == pytest.approx(abs(v) + c, rel=1e-6)


def test_pure_python_switch():
    env = dict(os.environ, BALRED_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from balred import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
