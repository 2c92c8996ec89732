import numpy as np
import pytest

from eulerdmv import initial
from eulerdmv.dmv import (Ensemble, EnsembleError, barycenter, cesaro_average, diagnostics_table,
                          energy_defect, energy_gap, flux_defect, r_coefficient,
                          r_coefficient_reciprocal, restrict, young_measure)
from eulerdmv.domain import Grid, Trajectory
from eulerdmv.solver import SchemeConfig, simulate
from eulerdmv.thermo import state, total_energy


def single(gas, grid, data, E0=None, times=(0.0,)):
    data = np.broadcast_to(data, (len(times),) + grid.n + (grid.dim + 2,))
    E = float(np.max([total_energy(gas, d).sum() for d in data])) * grid.cell_volume
    return Trajectory(grid, np.array(times), data, gas, E if E0 is None else E0)


def oscillation_ensemble(gas, grid, a):
    members = []
    for sgn in (1.0, -1.0):
        m = np.zeros(grid.dim)
        m[0] = sgn * a
        members.append(single(gas, grid, state(1.0, m, 0.0)))
    return Ensemble(members)


def test_restrict_averages_blocks():
    a = np.arange(16.0).reshape(4, 4, 1)
    out = restrict(a, (2, 2))
    np.testing.assert_array_equal(out[..., 0], [[2.5, 4.5], [10.5, 12.5]])
    np.testing.assert_array_equal(restrict(a, (1, 1)), a)


def test_ensemble_checks(gas):
    g = Grid((8,), (1.0,))
    a = single(gas, g, state(1.0, [0.0], 0.0))
    with pytest.raises(EnsembleError):
        Ensemble([])
    with pytest.raises(EnsembleError):
        Ensemble([a, single(gas, g, state(1.1, [0.0], 0.0))])  # different M0 and E0
    with pytest.raises(EnsembleError):
        Ensemble([a, single(gas, Grid((8,), (2.0,)), state(0.5, [0.0], 0.0), E0=a.E0)])
    with pytest.raises(EnsembleError):
        Ensemble([a, single(gas, Grid((12,), (1.0,)), state(1.0, [0.0], 0.0))])


def test_singleton_ensemble(gas, rng):
    g = Grid((8, 8), (1.0, 1.0))
    rho = rng.uniform(0.5, 1.5, g.n)
    data = np.stack([rho, 0.1 * rho, -0.2 * rho, rng.normal(size=g.n) * 0.1], axis=-1)
    e = Ensemble([single(gas, g, data)])
    np.testing.assert_array_equal(barycenter(e, 0).data, data)
    assert energy_gap(e, 0) == pytest.approx(0.0, abs=1e-15)
    fd = flux_defect(e, 0)
    np.testing.assert_allclose(fd.matrices, 0.0, atol=1e-15)


def test_barycenter_of_two_uniform_members(gas):
    g = Grid((8,), (1.0,))
    a = state(1.0, [0.3], 0.1)
    b = state(1.0, [-0.3], 0.1)
    e = Ensemble([single(gas, g, a), single(gas, g, b)])
    np.testing.assert_allclose(barycenter(e, 0).data, np.broadcast_to((a + b) / 2, (8, 3)),
                               rtol=0, atol=0)


def test_barycenter_matches_direct_mean(gas, rng):
    g = Grid((8,), (1.0,))
    members, raw = [], []
    for _ in range(7):
        rho = 1 + 0.2 * rng.uniform(-1, 1, 8)
        rho *= 8 / rho.sum()  # shared mass
        d = np.stack([rho, rng.normal(size=8) * 0.1, rng.normal(size=8) * 0.1], axis=-1)
        raw.append(d)
        members.append(single(gas, g, d, E0=10.0))
    e = Ensemble(members)
    np.testing.assert_allclose(barycenter(e, 0).data, np.mean(raw, axis=0), rtol=0, atol=1e-14)
    ym = young_measure(e, 0)
    assert ym.weights.sum() == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(ym.barycenter(), barycenter(e, 0).data, atol=1e-14)
    # last Cesaro partial average is the barycenter
    np.testing.assert_allclose(cesaro_average(raw)[-1], barycenter(e, 0).data, atol=1e-14)


@pytest.mark.parametrize("dim", [1, 2])
def test_oscillation_ensemble_closed_form(gas, dim):
    g = Grid((8,) * dim, (1.0,) * dim)
    a = 0.7
    e = oscillation_ensemble(gas, g, a)
    gap = energy_gap(e, 0)
    assert gap == pytest.approx(a * a * g.volume / 2, abs=1e-12)
    fd = flux_defect(e, 0)
    np.testing.assert_allclose(fd.trace, a * a, rtol=1e-12)
    assert fd.integrated_trace == pytest.approx(a * a * g.volume, rel=1e-12)
    assert fd.r == 0.5
    assert fd.compatible and fd.compatible_reciprocal
    assert gap == pytest.approx(fd.integrated_trace / 2, rel=1e-12)


def test_r_coefficient_values():
    assert r_coefficient(3, 1.4) == 0.5
    assert r_coefficient(1, 5 / 3) == 0.5
    assert r_coefficient_reciprocal(3, 1.4) == 0.5
    assert r_coefficient_reciprocal(2, 2.5) == pytest.approx(1 / 3)


def test_energy_gap_nonnegative_sweep(gas, rng):
    g = Grid((4,), (1.0,))
    worst = np.inf
    for _ in range(10_000):
        rho = rng.uniform(0.1, 3.0, (2, 4))
        rho[1] *= rho[0].sum() / rho[1].sum()
        d = np.stack([rho, rng.normal(size=(2, 4)), rng.normal(size=(2, 4))], axis=-1)
        E = max(total_energy(gas, x).sum() for x in d) * g.cell_volume
        e = Ensemble([single(gas, g, x, E0=E) for x in d])
        worst = min(worst, energy_gap(e, 0))
    assert worst >= -1e-12


def test_infinite_member_energy(gas):
    g = Grid((4,), (1.0,))
    hot = np.broadcast_to(state(1.0, [0.0], 0.0), (4, 3)).copy()
    hot[0, -1] = 1e4  # temperature overflows
    t = Trajectory(g, np.array([0.0]), hot[None], gas, np.inf)
    assert energy_gap(Ensemble([t, t]), 0) == np.inf


def test_cesaro_constant_and_alternating(rng):
    a = rng.normal(size=(5, 3))
    b = rng.normal(size=(5, 3))
    const = cesaro_average([a] * 6)
    np.testing.assert_allclose(const, np.broadcast_to(a, const.shape), rtol=1e-15)
    alt = cesaro_average([a, b] * 20)
    mean = (a + b) / 2
    np.testing.assert_allclose(alt[1::2], np.broadcast_to(mean, alt[1::2].shape), rtol=1e-14)
    dist = np.linalg.norm(a - b)
    for N in range(1, 41):
        assert np.linalg.norm(alt[N - 1] - mean) <= dist / (2 * N) + 1e-14


def test_cesaro_empty():
    with pytest.raises(EnsembleError):
        cesaro_average([])


def test_energy_defect(gas):
    g = initial.sod_grid(64)
    traj = simulate(gas, initial.sod(g), 0.1, SchemeConfig(checkpoint_dt=0.025))
    assert all(abs(energy_defect(traj, k)) <= 1e-11 * traj.E0 for k in range(len(traj)))
    boosted = traj.replace(E0=1.1 * traj.E0)
    assert energy_defect(boosted, 0) == pytest.approx(0.1 * traj.E0, rel=1e-12)


def test_diagnostics_table_on_scheme_ensemble(gas):
    members = []
    for flux, n in (("rusanov", 64), ("hll", 128)):
        g = initial.sod_grid(n)
        members.append(simulate(gas, initial.sod(g), 0.1, SchemeConfig(flux, checkpoint_dt=0.025)))
    E0 = max(m.E0 for m in members)
    e = Ensemble([m.replace(E0=E0) for m in members])
    assert e.grid.n == (64,)
    rows = diagnostics_table(e)
    assert [r["t"] for r in rows] == list(e.times)
    for r in rows:
        assert r["energy_gap"] >= -1e-12
        assert r["members"] == 2
        assert r["mean_energy_defect"] >= -1e-10 * E0
