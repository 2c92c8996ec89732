"""Ensemble diagnostics for measure-valued limits.

An ensemble of trajectories sharing data, mass and energy budget is read as
an empirical Young measure on a common coarse grid.  From it we get
barycenters, the turbulent energy gap, the flux (concentration) defect with
its energy-compatibility check, and Cesaro averages.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import Field, Grid, Trajectory
from .thermo import RHO_EPS, GasModel, pressure, total_energy


class EnsembleError(ValueError):
    pass


def restrict(data: np.ndarray, factors: tuple[int, ...]) -> np.ndarray:
    """Cell-average restriction by integer ``factors`` per axis."""
    d = len(factors)
    if all(f == 1 for f in factors):
        return np.array(data)
    shape = []
    for a, f in enumerate(factors):
        shape += [data.shape[a] // f, f]
    out = data.reshape(tuple(shape) + data.shape[d:])
    return out.mean(axis=tuple(range(1, 2 * d, 2)))


@dataclass
class Ensemble:
    """Trajectories with common times, ``E0`` and ``M0``, compared on the coarsest grid."""

    members: list
    provenance: list = field(default_factory=list)
    rtol: float = 1e-10

    def __post_init__(self):
        if not self.members:
            raise EnsembleError("empty ensemble")
        first = self.members[0]
        if not self.provenance:
            self.provenance = [{"index": i, "scheme": t.scheme, "resolution": list(t.grid.n)}
                               for i, t in enumerate(self.members)]
        if len(self.provenance) != len(self.members):
            raise EnsembleError("one provenance record per member")
        for t in self.members[1:]:
            if t.times.shape != first.times.shape or not np.allclose(t.times, first.times,
                                                                     rtol=0, atol=1e-12):
                raise EnsembleError("members must share checkpoint times")
            if t.gas != first.gas:
                raise EnsembleError("members must share the gas model")
            if abs(t.E0 - first.E0) > self.rtol * abs(first.E0):
                raise EnsembleError("members must share E0")
            if abs(t.M0 - first.M0) > self.rtol * abs(first.M0):
                raise EnsembleError("members must share M0")
            if (t.grid.extent != first.grid.extent or t.grid.origin != first.grid.origin
                    or t.grid.topology != first.grid.topology):
                raise EnsembleError("members must live on the same domain")
        n = tuple(min(t.grid.n[a] for t in self.members) for a in range(first.grid.dim))
        for t in self.members:
            if any(m % c for m, c in zip(t.grid.n, n)):
                raise EnsembleError(f"grid {t.grid.n} does not nest over coarse grid {n}")
        self.grid = first.grid.with_n(n)
        self._cache = {}

    def __len__(self) -> int:
        return len(self.members)

    @property
    def times(self) -> np.ndarray:
        return self.members[0].times

    @property
    def gas(self) -> GasModel:
        return self.members[0].gas

    @property
    def E0(self) -> float:
        return self.members[0].E0

    @property
    def M0(self) -> float:
        return self.members[0].M0

    def atoms(self, k: int) -> np.ndarray:
        """Member states at checkpoint ``k`` on the coarse grid, shape ``(N, *n, d+2)``."""
        if k not in self._cache:
            out = []
            for t in self.members:
                f = tuple(m // c for m, c in zip(t.grid.n, self.grid.n))
                out.append(restrict(t.states[k], f))
            self._cache[k] = np.stack(out)
        return self._cache[k]


@dataclass(frozen=True)
class EmpiricalYoungMeasure:
    atoms: np.ndarray
    weights: np.ndarray

    def barycenter(self) -> np.ndarray:
        return np.tensordot(self.weights, self.atoms, axes=(0, 0))


def young_measure(e: Ensemble, k: int) -> EmpiricalYoungMeasure:
    n = len(e)
    return EmpiricalYoungMeasure(e.atoms(k), np.full(n, 1.0 / n))


def barycenter(e: Ensemble, k: int) -> Field:
    """Cell-wise mean of the member states at checkpoint ``k``."""
    return Field(e.grid, np.mean(e.atoms(k), axis=0))


def _integral(grid: Grid, values: np.ndarray) -> float:
    if np.any(np.isposinf(values)):
        return math.inf
    return float(np.sum(values) * grid.cell_volume)


def energy_gap(e: Ensemble, k: int) -> float:
    """Mean member energy minus the energy of the barycenter (``>= 0`` by convexity)."""
    atoms = e.atoms(k)
    member = [_integral(e.grid, total_energy(e.gas, a)) for a in atoms]
    if any(math.isinf(v) for v in member):
        return math.inf
    return float(np.mean(member) - _integral(e.grid, total_energy(e.gas, atoms.mean(axis=0))))


def r_coefficient(dim: int, gamma: float) -> float:
    """Compatibility constant ``min(1/2, d gamma / (gamma - 1))`` as printed.

    Note the second entry exceeds 1/2 for every admissible ``gamma`` and
    ``dim``; :func:`r_coefficient_reciprocal` gives the bound that the
    energy split actually supports.
    """
    return min(0.5, dim * gamma / (gamma - 1.0))


def r_coefficient_reciprocal(dim: int, gamma: float) -> float:
    """``min(1/2, 1 / (d (gamma - 1)))``: kinetic trace counts 1/2, pressure trace ``1/(d(gamma-1))``."""
    return min(0.5, 1.0 / (dim * (gamma - 1.0)))


def _flux_tensor(gas: GasModel, q: np.ndarray) -> np.ndarray:
    rho, m, S = q[..., 0], q[..., 1:-1], q[..., -1]
    live = rho > RHO_EPS
    safe = np.where(live, rho, 1.0)
    d = m.shape[-1]
    out = np.where(live[..., None, None], m[..., :, None] * m[..., None, :] / safe[..., None, None], 0.0)
    p = np.where(live, pressure(gas, np.where(live, rho, 1.0), np.where(live, S, 0.0)), 0.0)
    return out + p[..., None, None] * np.eye(d)


@dataclass(frozen=True)
class FluxDefect:
    matrices: np.ndarray
    trace: np.ndarray
    integrated_trace: float
    energy_gap: float
    r: float
    compatible: bool
    r_reciprocal: float
    compatible_reciprocal: bool

    @property
    def note(self) -> str:
        if self.r != self.r_reciprocal:
            return (f"printed r={self.r:g} differs from the energy-split bound "
                    f"{self.r_reciprocal:g}; suspected reciprocal")
        return ""


def flux_defect(e: Ensemble, k: int, tol: float = 1e-10) -> FluxDefect:
    """Oscillation part of the concentration defect and the compatibility check.

    ``matrices[cell] = mean(m m / rho + p I) - (m m / rho + p I)(barycenter)``.
    The check is ``r * int trace <= energy_gap + tol``.
    """
    atoms = e.atoms(k)
    mean_flux = np.mean([_flux_tensor(e.gas, a) for a in atoms], axis=0)
    mats = mean_flux - _flux_tensor(e.gas, atoms.mean(axis=0))
    tr = np.trace(mats, axis1=-2, axis2=-1)
    itr = float(np.sum(tr) * e.grid.cell_volume)
    gap = energy_gap(e, k)
    d, g = e.grid.dim, e.gas.gamma
    r, rr = r_coefficient(d, g), r_coefficient_reciprocal(d, g)
    return FluxDefect(mats, tr, itr, gap, r, r * itr <= gap + tol, rr, rr * itr <= gap + tol)


def cesaro_average(seq) -> np.ndarray:
    """Partial means ``A_N = (1/N) sum_{n<=N} x_n`` of a sequence of equal-shape arrays.

    Returns an array with a leading axis of length ``len(seq)``.
    """
    arr = np.asarray([np.asarray(x, dtype=float) for x in seq])
    if arr.shape[0] == 0:
        raise EnsembleError("Cesaro average of an empty sequence")
    counts = np.arange(1, arr.shape[0] + 1, dtype=float).reshape((-1,) + (1,) * (arr.ndim - 1))
    return np.cumsum(arr, axis=0) / counts


def energy_defect(traj: Trajectory, k: int, side: str = "-") -> float:
    """``E0 - int E`` at checkpoint ``k`` (right limit for ``side="+"``)."""
    f = traj.right_field(k) if side == "+" else traj.field(k)
    return float(traj.E0 - f.energy(traj.gas))


def diagnostics_table(e: Ensemble) -> list[dict]:
    """Per-checkpoint gap, integrated defect trace, compatibility and energy defects."""
    rows = []
    for k, t in enumerate(e.times):
        fd = flux_defect(e, k)
        bar = barycenter(e, k)
        defects = [energy_defect(m, k) for m in e.members]
        rows.append({"t": float(t), "members": len(e), "energy_gap": fd.energy_gap,
                     "defect_trace": fd.integrated_trace, "r": fd.r,
                     "compatible": fd.compatible, "r_reciprocal": fd.r_reciprocal,
                     "compatible_reciprocal": fd.compatible_reciprocal,
                     "mean_energy_defect": float(np.mean(defects)),
                     "barycenter_energy_defect": float(e.E0 - bar.energy(e.gas))})
    return rows
