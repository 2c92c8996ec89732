"""First-order finite-volume schemes for the complete Euler system.

The schemes evolve conserved cells ``(rho, m, E)`` (trailing axis of length
``dim + 2``); total entropy is a diagnosed quantity written to the
trajectory checkpoints.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .domain import Field, Grid, Trajectory
from .thermo import GasModel, entropy_from_primitive, total_energy

log = logging.getLogger(__name__)

FLUXES = ("rusanov", "hll")


class StepFailure(RuntimeError):
    def __init__(self, msg, cell=None):
        super().__init__(msg if cell is None else f"{msg} at cell {cell}")
        self.cell = cell


class SimulationError(RuntimeError):
    """Aborted run; ``partial`` holds the checkpoints written so far."""

    def __init__(self, msg, partial=None, stats=None):
        super().__init__(msg)
        self.partial = partial
        self.stats = stats or {}


@dataclass(frozen=True)
class SchemeConfig:
    flux: str = "rusanov"
    cfl: float = 0.4
    rho_floor: float = 1e-10
    viscosity_eps: float = 0.0
    checkpoint_dt: float = 0.1
    p_floor: float = 1e-12
    max_steps: int = 10_000_000

    def __post_init__(self):
        if self.flux not in FLUXES:
            raise ValueError(f"unknown flux {self.flux!r}")
        if not 0 < self.cfl <= 0.9:
            raise ValueError("cfl must lie in (0, 0.9]")
        if self.viscosity_eps < 0:
            raise ValueError("viscosity_eps must be nonnegative")
        if not self.checkpoint_dt > 0:
            raise ValueError("checkpoint_dt must be positive")

    @property
    def scheme_id(self) -> str:
        sid = f"{self.flux}-cfl{self.cfl:g}"
        return sid + (f"-visc{self.viscosity_eps:g}" if self.viscosity_eps else "")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# conversions

def primitives(gas: GasModel, U: np.ndarray):
    """Density, velocity ``(..., d)``, pressure and sound speed of conserved cells."""
    rho = U[..., 0]
    u = U[..., 1:-1] / rho[..., None]
    p = (gas.gamma - 1.0) * (U[..., -1] - 0.5 * np.sum(U[..., 1:-1] * u, axis=-1))
    with np.errstate(invalid="ignore"):
        c = np.sqrt(gas.gamma * p / rho)
    return rho, u, p, c


def to_conserved(gas: GasModel, q: np.ndarray) -> np.ndarray:
    """``(rho, m, S)`` -> ``(rho, m, E)``."""
    U = np.array(q, dtype=float, copy=True)
    U[..., -1] = total_energy(gas, q)
    return U


def to_entropy_state(gas: GasModel, U: np.ndarray) -> np.ndarray:
    """``(rho, m, E)`` -> ``(rho, m, S)`` via ``S = rho s(rho, theta)``."""
    rho, u, p, _ = primitives(gas, U)
    q = np.array(U, dtype=float, copy=True)
    q[..., -1] = entropy_from_primitive(gas, rho, p / rho)
    return q


def exact_flux(gas: GasModel, U: np.ndarray, axis: int) -> np.ndarray:
    """Euler flux ``(m_a, m_a u + p e_a, (E + p) u_a)`` along ``axis``."""
    rho, u, p, _ = primitives(gas, U)
    return _cell_flux(U, u, p, axis)


def _cell_flux(U, u, p, axis):
    un = u[..., axis]
    F = U * un[..., None]
    F[..., 1 + axis] += p
    F[..., -1] += p * un
    return F


def _interface_flux(flux, UL, UR, FL, FR, unL, unR, cL, cR):
    if flux == "rusanov":
        alpha = np.maximum(np.abs(unL) + cL, np.abs(unR) + cR)
        return 0.5 * (FL + FR) - 0.5 * alpha[..., None] * (UR - UL)
    # HLL with Davis wave-speed bounds
    sL = np.minimum(unL - cL, unR - cR)[..., None]
    sR = np.maximum(unL + cL, unR + cR)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        mid = (sR * FL - sL * FR + sL * sR * (UR - UL)) / (sR - sL)
    return np.where(sL >= 0, FL, np.where(sR <= 0, FR, mid))


def numerical_flux(gas: GasModel, UL: np.ndarray, UR: np.ndarray, cfg: SchemeConfig,
                   axis: int = 0) -> np.ndarray:
    """Interface flux between conserved states ``UL`` and ``UR`` along ``axis``."""
    UL = np.asarray(UL, dtype=float)
    UR = np.asarray(UR, dtype=float)
    _, uL, pL, cL = primitives(gas, UL)
    _, uR, pR, cR = primitives(gas, UR)
    if not (np.all(np.isfinite(cL)) and np.all(np.isfinite(cR))):
        raise StepFailure("non-finite wave speed in flux evaluation")
    FL = _cell_flux(UL, uL, pL, axis)
    FR = _cell_flux(UR, uR, pR, axis)
    return _interface_flux(cfg.flux, UL, UR, FL, FR, uL[..., axis], uR[..., axis], cL, cR)


# ---------------------------------------------------------------------------
# time stepping

def cfl_dt(gas: GasModel, grid: Grid, U: np.ndarray, cfg: SchemeConfig) -> float:
    """Largest stable step ``cfl * h / max(|u_a| + c)``, tightened for viscosity."""
    _, u, _, c = primitives(gas, U)
    rate = 0.0
    for a in range(grid.dim):
        rate = max(rate, float(np.max(np.abs(u[..., a]) + c)) / grid.h[a])
    if not math.isfinite(rate) or rate <= 0:
        raise StepFailure("non-finite or vanishing wave speed")
    dt = cfg.cfl / rate
    if cfg.viscosity_eps > 0:
        dt = min(dt, 0.5 * min(grid.h) ** 2 / (2 * grid.dim * cfg.viscosity_eps))
    return dt


def _ghost(U, axis, side):
    idx = [slice(None)] * U.ndim
    idx[axis] = slice(0, 1) if side == "left" else slice(-1, None)
    g = U[tuple(idx)].copy()
    g[..., 1 + axis] *= -1.0
    return g


def _extended(U, axis):
    return np.concatenate([_ghost(U, axis, "left"), U, _ghost(U, axis, "right")], axis=axis)


def _shifted(dim, axis):
    lo = [slice(None)] * dim
    hi = [slice(None)] * dim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return tuple(lo), tuple(hi)


def step(gas: GasModel, grid: Grid, U: np.ndarray, dt: float, cfg: SchemeConfig,
         stats: dict | None = None) -> np.ndarray:
    """One explicit dimension-unsplit update; returns the new conserved array."""
    rho, u, p, c = primitives(gas, U)
    if not np.all(np.isfinite(c)):
        raise StepFailure("non-finite sound speed", np.argwhere(~np.isfinite(c))[0].tolist())
    out = U.copy()
    for a in range(grid.dim):
        F = _cell_flux(U, u, p, a)
        lam = dt / grid.h[a]
        if grid.periodic_axis(a):
            UR = np.roll(U, -1, axis=a)
            G = _interface_flux(cfg.flux, U, UR, F, np.roll(F, -1, axis=a), u[..., a],
                                np.roll(u[..., a], -1, axis=a), c, np.roll(c, -1, axis=a))
            out -= lam * (G - np.roll(G, 1, axis=a))
            if cfg.viscosity_eps:
                out += cfg.viscosity_eps * dt / grid.h[a] ** 2 * (UR - 2 * U + np.roll(U, 1, axis=a))
        else:
            E = _extended(U, a)
            _, ue, pe, ce = primitives(gas, E)
            Fe = _cell_flux(E, ue, pe, a)
            lo, hi = _shifted(grid.dim, a)
            G = _interface_flux(cfg.flux, E[lo], E[hi], Fe[lo], Fe[hi], ue[lo][..., a],
                                ue[hi][..., a], ce[lo], ce[hi])
            if cfg.viscosity_eps:
                G -= cfg.viscosity_eps / grid.h[a] * (E[hi] - E[lo])
            out -= lam * (G[hi] - G[lo])
    _enforce_admissible(gas, out, cfg, stats)
    return out


def _enforce_admissible(gas, U, cfg, stats):
    rho = U[..., 0]
    if np.any(~np.isfinite(U)):
        raise StepFailure("non-finite state after update", np.argwhere(~np.isfinite(U))[0].tolist())
    bad = rho < cfg.rho_floor
    if np.any(bad):
        raise StepFailure("density below floor", np.argwhere(bad)[0].tolist())
    kin = 0.5 * np.sum(U[..., 1:-1] ** 2, axis=-1) / rho
    eint = U[..., -1] - kin
    bad = eint <= 0
    if np.any(bad):
        raise StepFailure("nonpositive internal energy", np.argwhere(bad)[0].tolist())
    low = (gas.gamma - 1.0) * eint < cfg.p_floor
    if np.any(low):
        U[..., -1] = np.where(low, kin + cfg.p_floor / (gas.gamma - 1.0), U[..., -1])
        if stats is not None:
            stats["clamp_count"] = stats.get("clamp_count", 0) + int(np.count_nonzero(low))


def _min_specific_entropy(gas, U):
    rho, _, p, _ = primitives(gas, U)
    return float(np.min(gas.cv * np.log(p / rho) - np.log(rho)))


def checkpoint_times(t_end: float, checkpoint_dt: float) -> np.ndarray:
    """Multiples of ``checkpoint_dt`` up to ``t_end`` (which is always included)."""
    n = int(math.floor(t_end / checkpoint_dt + 1e-9))
    times = [k * checkpoint_dt for k in range(n + 1)]
    if t_end - times[-1] > 1e-9 * checkpoint_dt:
        times.append(t_end)
    else:
        times[-1] = t_end
    return np.array(times)


def simulate(gas: GasModel, init: Field, t_end: float, cfg: SchemeConfig,
             E0: float | None = None, dt_scale: float = 1.0) -> Trajectory:
    """Run the scheme from ``init`` to ``t_end`` writing checkpoints every ``checkpoint_dt``.

    ``E0`` defaults to the energy of the initial field.  ``dt_scale`` (<= 1)
    shrinks every step, which ensemble runs use to perturb the step sequence.

    Raises
    ------
    SimulationError
        On a step failure; the partial trajectory is attached.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    grid = init.grid
    times = checkpoint_times(t_end, cfg.checkpoint_dt)
    U = to_conserved(gas, init.data)
    E_init = init.energy(gas)
    E0 = E_init if E0 is None else float(E0)
    M_init = float(np.sum(U[..., 0]) * grid.cell_volume)
    stats = {"steps": 0, "clamp_count": 0, "max_min_entropy_drop": 0.0,
             "max_total_entropy_drop": 0.0}
    states = [np.array(init.data)]
    s_min = _min_specific_entropy(gas, U)
    S_tot = float(np.sum(init.S))
    t = 0.0

    def partial():
        return Trajectory(grid, times[:len(states)], np.stack(states), gas, E0,
                          scheme=cfg.scheme_id, meta={"stats": dict(stats)})

    for target in times[1:]:
        while t < target:
            try:
                dt = cfl_dt(gas, grid, U, cfg) * dt_scale
                last = t + dt >= target * (1 - 1e-14)
                if last:
                    dt = target - t
                U = step(gas, grid, U, dt, cfg, stats)
            except StepFailure as exc:
                raise SimulationError(f"t={t:.6g}: {exc}", partial(), stats) from exc
            t = target if last else t + dt
            stats["steps"] += 1
            if stats["steps"] > cfg.max_steps:
                raise SimulationError("step limit exceeded", partial(), stats)
            q = to_entropy_state(gas, U)
            s_new = float(np.min(q[..., -1] / q[..., 0]))
            S_new = float(np.sum(q[..., -1]))
            stats["max_min_entropy_drop"] = max(stats["max_min_entropy_drop"], s_min - s_new)
            stats["max_total_entropy_drop"] = max(stats["max_total_entropy_drop"],
                                                  (S_tot - S_new) * grid.cell_volume)
            s_min, S_tot = s_new, S_new
        states.append(to_entropy_state(gas, U))

    M_end = float(np.sum(U[..., 0]) * grid.cell_volume)
    E_end = float(np.sum(U[..., -1]) * grid.cell_volume)
    stats["mass_drift"] = abs(M_end - M_init) / M_init
    stats["energy_drift"] = abs(E_end - E_init) / E_init
    log.debug("simulate %s: %d steps, mass drift %.3e", cfg.scheme_id, stats["steps"],
              stats["mass_drift"])
    return Trajectory(grid, times, np.stack(states), gas, E0, scheme=cfg.scheme_id,
                      meta={"stats": stats, "scheme": cfg.to_dict()})
