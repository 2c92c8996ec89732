import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eulerdmv import initial
from eulerdmv.domain import Grid
from eulerdmv.exact_riemann import solve_star
from eulerdmv.solver import (SchemeConfig, SimulationError, StepFailure, cfl_dt, checkpoint_times,
                             exact_flux, numerical_flux, simulate, step, to_conserved,
                             to_entropy_state)
from eulerdmv.thermo import GasModel

CFGS = [SchemeConfig("rusanov"), SchemeConfig("hll")]


def conserved(rho, u, p, gamma=1.4):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.r_[rho, rho * u, 0.5 * rho * u @ u + p / (gamma - 1)]


def smooth_random(gas, grid, rng, amp=0.2):
    """Random low-mode perturbation of a rest state, as conserved cells."""
    x = grid.mesh()
    rho = np.ones(grid.n)
    p = np.ones(grid.n)
    u = np.zeros(grid.n + (grid.dim,))
    for k in (1, 2):
        for a in range(grid.dim):
            ph = rng.uniform(0, 2 * np.pi, 3)
            arg = 2 * np.pi * k * x[..., a] / grid.extent[a]
            rho += amp / k * np.sin(arg + ph[0])
            p += amp / k * np.cos(arg + ph[1])
            u[..., a] += amp / k * np.sin(arg + ph[2])
    return to_conserved(gas, initial.from_primitive(gas, grid, rho, u, p).data)


def test_config_validation():
    with pytest.raises(ValueError):
        SchemeConfig("roe")
    with pytest.raises(ValueError):
        SchemeConfig(cfl=0.95)
    with pytest.raises(ValueError):
        SchemeConfig(viscosity_eps=-1.0)
    assert SchemeConfig(viscosity_eps=0.01).scheme_id == "rusanov-cfl0.4-visc0.01"


@pytest.mark.parametrize("cfg", CFGS, ids=lambda c: c.flux)
def test_flux_of_rest_state(gas, cfg):
    a = np.array([1.0, 0.0, 2.5])
    np.testing.assert_allclose(numerical_flux(gas, a, a, cfg), [0.0, 1.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("cfg", CFGS, ids=lambda c: c.flux)
def test_flux_consistency_random(gas, rng, cfg):
    for axis in (0, 1):
        U = np.stack([conserved(rng.uniform(0.1, 3), rng.normal(size=2), rng.uniform(0.1, 3))
                      for _ in range(100)])
        F = numerical_flux(gas, U, U, cfg, axis)
        np.testing.assert_allclose(F, exact_flux(gas, U, axis), rtol=1e-14, atol=1e-14)


@given(st.floats(0.1, 5), st.floats(-2, 2), st.floats(0.1, 5),
       st.floats(0.1, 5), st.floats(-2, 2), st.floats(0.1, 5))
@settings(max_examples=200, deadline=None)
def test_rusanov_mirror_symmetry(rl, ul, pl, rr, ur, pr):
    gas = GasModel(1.4)
    cfg = SchemeConfig("rusanov")
    L, R = conserved(rl, ul, pl), conserved(rr, ur, pr)
    F = numerical_flux(gas, L, R, cfg)
    # mirror x -> -x: swap sides and flip momenta
    Lm, Rm = R.copy(), L.copy()
    Lm[1] *= -1
    Rm[1] *= -1
    Fm = numerical_flux(gas, Lm, Rm, cfg)
    assert Fm[0] == pytest.approx(-F[0], rel=1e-12, abs=1e-12)
    assert Fm[1] == pytest.approx(F[1], rel=1e-12, abs=1e-12)
    assert Fm[2] == pytest.approx(-F[2], rel=1e-12, abs=1e-12)


def test_flux_rejects_nonfinite_speed(gas):
    bad = np.array([1.0, 0.0, -1.0])
    with pytest.raises(StepFailure):
        numerical_flux(gas, bad, bad, CFGS[0])


def test_cfl_dt_reference(gas):
    g = Grid((100,), (1.0,))
    U = to_conserved(gas, initial.uniform(gas, g).data)
    dt = cfl_dt(gas, g, U, SchemeConfig(cfl=0.4))
    assert dt == pytest.approx(0.4 * 0.01 / math.sqrt(1.4), rel=1e-14)
    assert dt == pytest.approx(0.003381, abs=5e-7)
    assert cfl_dt(gas, g, U, SchemeConfig(cfl=0.8)) == pytest.approx(2 * dt, rel=1e-14)
    moving = to_conserved(gas, initial.uniform(gas, g, u=[0.7]).data)
    speed = 0.4 * 0.01 / cfl_dt(gas, g, moving, SchemeConfig(cfl=0.4))
    assert speed == pytest.approx(math.sqrt(1.4) + 0.7, rel=1e-14)


def test_viscosity_limits_dt(gas):
    g = Grid((100,), (1.0,))
    U = to_conserved(gas, initial.uniform(gas, g).data)
    eps = 0.1
    dt = cfl_dt(gas, g, U, SchemeConfig(viscosity_eps=eps))
    assert dt == pytest.approx(0.5 * 0.01**2 / (2 * eps))


@pytest.mark.parametrize("topology", ["periodic", "strip"])
@pytest.mark.parametrize("cfg", CFGS, ids=lambda c: c.flux)
def test_uniform_state_is_fixed_point(gas, topology, cfg):
    g = Grid((16, 8), (1.0, 1.0), topology=topology)
    U = to_conserved(gas, initial.uniform(gas, g, rho=1.3, u=[0.0, 0.4], p=0.7).data)
    if topology == "periodic":
        U = to_conserved(gas, initial.uniform(gas, g, rho=1.3, u=[0.5, -0.4], p=0.7).data)
    out = step(gas, g, U, cfl_dt(gas, g, U, cfg), cfg)
    np.testing.assert_allclose(out, U, rtol=1e-14, atol=1e-14)


@pytest.mark.parametrize("cfg", CFGS + [SchemeConfig(viscosity_eps=1e-3)],
                         ids=["rusanov", "hll", "viscous"])
def test_conservation_over_1000_steps(gas, rng, cfg):
    g = Grid((32, 16), (1.0, 1.0))
    U = smooth_random(gas, g, rng)
    M0, E0 = U[..., 0].sum(), U[..., -1].sum()
    for _ in range(1000):
        U = step(gas, g, U, cfl_dt(gas, g, U, cfg), cfg)
    assert abs(U[..., 0].sum() - M0) / M0 < 1e-11
    assert abs(U[..., -1].sum() - E0) / E0 < 1e-11


def test_walls_conserve_and_block_mass(gas, rng):
    g = Grid((64,), (1.0,), (-0.5,), "strip")
    cfg = SchemeConfig("rusanov")
    x = g.centers(0)
    rho = 1 + 0.3 * np.cos(2 * np.pi * x)
    U = to_conserved(gas, initial.from_primitive(gas, g, rho, np.full((64, 1), 0.5), 1.0).data)
    M0, E0 = U[..., 0].sum(), U[..., -1].sum()
    for _ in range(500):
        U = step(gas, g, U, cfl_dt(gas, g, U, cfg), cfg)
    assert abs(U[..., 0].sum() - M0) / M0 < 1e-12
    assert abs(U[..., -1].sum() - E0) / E0 < 1e-12
    # mirror ghost gives a wall flux with zero mass component
    wall = U[0].copy()
    ghost = wall.copy()
    ghost[1] *= -1
    for c in CFGS:
        assert numerical_flux(gas, ghost, wall, c)[0] == 0.0


def test_step_failure_reports_cell(gas):
    g = Grid((8,), (1.0,))
    U = to_conserved(gas, initial.uniform(gas, g).data)
    U[3, -1] = -0.1  # negative pressure
    with pytest.raises(StepFailure) as info:
        step(gas, g, U, 1e-3, SchemeConfig())
    assert info.value.cell is not None


def test_simulation_error_keeps_partial(gas):
    g = Grid((32,), (1.0,))
    cfg = SchemeConfig(checkpoint_dt=0.01, max_steps=5)
    with pytest.raises(SimulationError) as info:
        simulate(gas, initial.uniform(gas, g), 1.0, cfg)
    assert info.value.partial is not None and len(info.value.partial) >= 1


def test_checkpoint_times():
    np.testing.assert_allclose(checkpoint_times(0.2, 0.05), [0, 0.05, 0.1, 0.15, 0.2])
    np.testing.assert_allclose(checkpoint_times(0.25, 0.1), [0, 0.1, 0.2, 0.25])


def test_entropy_state_round_trip(gas, rng):
    g = Grid((16, 16), (1.0, 1.0))
    U = smooth_random(gas, g, rng)
    np.testing.assert_allclose(to_conserved(gas, to_entropy_state(gas, U)), U, rtol=1e-13)


def test_smooth_advection_convergence(gas):
    errs = []
    for n in (128, 256, 512):
        g = initial.advection_grid(n)
        cfg = SchemeConfig("rusanov", checkpoint_dt=0.5)
        traj = simulate(gas, initial.smooth_advection(gas, g), 0.5, cfg)
        exact = initial.smooth_advection(gas, g, 0.5)
        errs.append(np.sum(np.abs(traj.states[-1, :, 0] - exact.rho)) * g.h[0])
    order = math.log(errs[0] / errs[2]) / math.log(4)
    assert errs[0] > errs[1] > errs[2]
    assert order >= 0.8


@pytest.mark.parametrize("cfg", CFGS, ids=lambda c: c.flux)
def test_minimum_entropy_principle_on_sod(gas, cfg):
    g = initial.sod_grid(200)
    traj = simulate(gas, initial.sod(g), 0.2, SchemeConfig(cfg.flux, checkpoint_dt=0.05))
    stats = traj.meta["stats"]
    assert stats["max_min_entropy_drop"] <= 1e-9
    assert stats["clamp_count"] == 0
    assert traj.entropy_drop() <= 1e-12
    assert traj.entropies()[-1] > traj.entropies()[0]


def test_rest_stays_at_rest(gas):
    g = Grid((12, 12), (1.0, 1.0), topology="strip")
    init = initial.uniform(gas, g, rho=0.8, p=1.3)
    traj = simulate(gas, init, 2.0, SchemeConfig(checkpoint_dt=0.5))
    np.testing.assert_allclose(traj.states, np.broadcast_to(init.data, traj.states.shape),
                               rtol=1e-14, atol=1e-14)


def test_sod_converges_to_exact(gas):
    errs = []
    data = initial.SOD
    sol = solve_star(data)
    for n in (256, 1024):
        g = initial.sod_grid(n)
        traj = simulate(gas, initial.sod(g), 0.2, SchemeConfig(checkpoint_dt=0.2))
        exact = initial.riemann(g, data, 0.2)
        errs.append(np.sum(np.abs(traj.states[-1, :, 0] - exact.rho)) * g.h[0])
    assert sol.lam * 0.2 < 0.5
    assert math.log(errs[0] / errs[1]) / math.log(4) >= 0.5


def test_dt_scale_changes_steps_not_physics(gas):
    g = initial.sod_grid(64)
    cfg = SchemeConfig(checkpoint_dt=0.1)
    a = simulate(gas, initial.sod(g), 0.2, cfg)
    b = simulate(gas, initial.sod(g), 0.2, cfg, dt_scale=0.95)
    assert b.meta["stats"]["steps"] > a.meta["stats"]["steps"]
    np.testing.assert_array_equal(a.times, b.times)
    assert np.max(np.abs(a.states - b.states)) < 0.05
