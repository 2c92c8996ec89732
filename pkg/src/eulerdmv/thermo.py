"""Thermodynamic closure of the complete Euler system for a Boyle-Mariotte gas.

States are packed numpy arrays whose trailing axis holds ``(rho, m_1..m_d, S)``
with ``S = rho * s`` the total entropy.  Every function here is vectorised
over the leading axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

#: Densities below this are treated as vacuum.
RHO_EPS = 1e-12
#: The energy gradient is refused below this density.
RHO_GRAD_MIN = 1e-8


class DomainError(ValueError):
    """Raised when a thermodynamic function is evaluated outside its domain."""


@dataclass(frozen=True)
class GasModel:
    """Polytropic gas with ``p = rho * theta`` and ``e = cv * theta``.

    ``cv`` is derived from ``gamma`` and never stored separately.
    ``entropy_floor`` is the lower bound on specific entropy used by the
    minimum principle; ``None`` disables the check.
    """

    gamma: float = 1.4
    entropy_floor: float | None = None

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 1.0:
            raise DomainError(f"adiabatic exponent must exceed 1, got {self.gamma}")

    @property
    def cv(self) -> float:
        return 1.0 / (self.gamma - 1.0)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "entropy_floor": self.entropy_floor}

    @classmethod
    def from_dict(cls, d: dict) -> "GasModel":
        return cls(gamma=float(d["gamma"]), entropy_floor=d.get("entropy_floor"))


def state(rho, m, S) -> np.ndarray:
    """Pack ``(rho, m, S)`` into a single state array."""
    rho = np.asarray(rho, dtype=float)
    S = np.asarray(S, dtype=float)
    m = np.asarray(m, dtype=float)
    if m.ndim == 0:
        m = m[None]
    shape = np.broadcast_shapes(rho.shape, S.shape, m.shape[:-1])
    d = m.shape[-1]
    out = np.empty(shape + (d + 2,))
    out[..., 0] = rho
    out[..., 1:-1] = m
    out[..., -1] = S
    return out


def unpack(q):
    q = np.asarray(q, dtype=float)
    return q[..., 0], q[..., 1:-1], q[..., -1]


def _internal_energy_positive(gas: GasModel, rho, S):
    # rho * e = cv * rho^gamma * exp(S / (cv rho)); overflow means infinite energy
    with np.errstate(over="ignore"):
        return gas.cv * rho**gas.gamma * np.exp(S / (gas.cv * rho))


def pressure(gas: GasModel, rho, S):
    """Pressure ``p(rho, S)`` with the lower semicontinuous vacuum extension.

    Raises
    ------
    DomainError
        For negative density, or vacuum carrying positive entropy.
    """
    rho = np.asarray(rho, dtype=float)
    S = np.asarray(S, dtype=float)
    rho, S = np.broadcast_arrays(rho, S)
    if np.any(rho < 0):
        raise DomainError("negative density")
    vac = rho < RHO_EPS
    if np.any(vac & (S > 0)):
        raise DomainError("vacuum with positive entropy has infinite energy")
    safe = np.where(vac, 1.0, rho)
    with np.errstate(over="ignore"):
        p = safe**gas.gamma * np.exp(np.where(vac, 0.0, S) / (gas.cv * safe))
    p = np.where(vac, 0.0, p)
    return p[()] if p.ndim == 0 else p


def internal_energy(gas: GasModel, rho, S):
    """``rho * e`` as a function of density and total entropy (extended reals)."""
    rho = np.asarray(rho, dtype=float)
    S = np.asarray(S, dtype=float)
    rho, S = np.broadcast_arrays(rho, S)
    vac = rho < RHO_EPS
    safe = np.where(vac, 1.0, rho)
    out = _internal_energy_positive(gas, safe, np.where(vac, 0.0, S))
    out = np.where(vac, np.where((rho >= 0) & (S <= 0), 0.0, np.inf), out)
    return out[()] if out.ndim == 0 else out


def total_energy(gas: GasModel, q):
    """Total energy ``|m|^2 / (2 rho) + rho e`` on the packed state ``q``.

    Outside the energy domain the value is ``+inf``, never an exception.
    """
    rho, m, S = unpack(q)
    vac = rho < RHO_EPS
    m2 = np.sum(m * m, axis=-1)
    safe = np.where(vac, 1.0, rho)
    kin = 0.5 * m2 / safe
    out = kin + _internal_energy_positive(gas, safe, np.where(vac, 0.0, S))
    vac_ok = (rho >= 0) & (m2 == 0) & (S <= 0)
    out = np.where(vac, np.where(vac_ok, 0.0, np.inf), out)
    return out[()] if out.ndim == 0 else out


def temperature(gas: GasModel, rho, S):
    """Invert ``S = rho (cv log theta - log rho)`` for the temperature."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0):
        raise DomainError("temperature needs positive density")
    with np.errstate(over="ignore"):
        return np.exp((np.asarray(S) / rho + np.log(rho)) / gas.cv)


def entropy_from_primitive(gas: GasModel, rho, theta):
    """Total entropy ``rho * (cv log theta - log rho)``."""
    rho = np.asarray(rho, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any(rho <= 0) or np.any(theta <= 0):
        raise DomainError("entropy needs positive density and temperature")
    return rho * (gas.cv * np.log(theta) - np.log(rho))


def specific_entropy(gas: GasModel, rho, theta):
    return gas.cv * np.log(theta) - np.log(rho)


def energy_gradient(gas: GasModel, q):
    """Gradient of the total energy with respect to ``(rho, m, S)``.

    Returns an array shaped like ``q``: ``dE/drho``, ``dE/dm = u``,
    ``dE/dS = theta``.
    """
    rho, m, S = unpack(q)
    if np.any(rho < RHO_GRAD_MIN):
        raise DomainError("energy gradient refused near vacuum")
    u = m / rho[..., None]
    theta = temperature(gas, rho, S)
    s = S / rho
    out = np.empty(np.shape(q))
    # d(rho e)/d rho at fixed S equals theta * (cv + 1 - s)
    out[..., 0] = -0.5 * np.sum(u * u, axis=-1) + theta * (gas.cv + 1.0 - s)
    out[..., 1:-1] = u
    out[..., -1] = theta
    return out


def bregman(gas: GasModel, q, ref):
    """Bregman divergence of the total energy, ``E(q|ref)``.

    ``ref`` must lie strictly inside the energy domain.  States outside the
    domain give ``+inf``.
    """
    q = np.asarray(q, dtype=float)
    ref = np.asarray(ref, dtype=float)
    grad = energy_gradient(gas, ref)
    Eq = total_energy(gas, q)
    lin = np.sum(grad * (q - ref), axis=-1)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isinf(Eq), np.inf, Eq - total_energy(gas, ref) - lin)
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class EquilibriumState:
    rho_bar: float
    theta_bar: float
    S_bar: float
    M0: float
    E0: float
    vol: float

    def state(self, dim: int) -> np.ndarray:
        return state(self.rho_bar, np.zeros(dim), self.S_bar)


def equilibrium(gas: GasModel, M0: float, E0: float, vol: float) -> EquilibriumState:
    """Constant state carrying total mass ``M0`` and energy ``E0`` at rest."""
    if M0 <= 0 or E0 <= 0 or vol <= 0:
        raise DomainError("equilibrium needs positive mass, energy and volume")
    rho_bar = M0 / vol
    theta_bar = E0 / (gas.cv * M0)
    S_bar = float(entropy_from_primitive(gas, rho_bar, theta_bar))
    return EquilibriumState(rho_bar, theta_bar, S_bar, M0, E0, vol)


def gibbs_residual(gas: GasModel, rho: float, theta: float, step: float = 1e-6) -> float:
    """Finite-difference check of ``theta Ds = De + p D(1/rho)``.

    Derivatives are taken along ``log rho`` and ``log theta`` by central
    differences with the given step; the residual is divided by ``theta`` so
    it is scale free.  Returns the larger of the two directional residuals.
    """
    if rho <= 0 or theta <= 0:
        raise DomainError("Gibbs residual needs positive density and temperature")
    cv = gas.cv

    def e(lr, lt):
        return cv * np.exp(lt)

    def s(lr, lt):
        return cv * lt - lr

    def vol(lr, lt):
        return np.exp(-lr)

    lr0, lt0 = np.log(rho), np.log(theta)
    p = rho * theta
    worst = 0.0
    for dr, dt in ((step, 0.0), (0.0, step)):
        def diff(f):
            return (f(lr0 + dr, lt0 + dt) - f(lr0 - dr, lt0 - dt)) / (2.0 * step)

        r = abs(diff(s) - (diff(e) + p * diff(vol)) / theta)
        worst = max(worst, float(r))
    return worst


def relative_energy_to_equilibrium(gas: GasModel, int_E: float, int_S: float,
                                   eq: EquilibriumState, mass: float | None = None,
                                   mass_rtol: float = 1e-10) -> float:
    """Integrated Bregman distance to the equilibrium from field integrals.

    ``int_E - theta_bar * int_S + theta_bar * M0 * s(rho_bar, theta_bar) - E0``.
    If ``mass`` is given it must match ``eq.M0``.
    """
    if mass is not None and abs(mass - eq.M0) > mass_rtol * eq.M0:
        raise ValueError(f"field mass {mass} differs from equilibrium mass {eq.M0}")
    s_bar = eq.S_bar / eq.rho_bar
    return int_E - eq.theta_bar * int_S + eq.theta_bar * eq.M0 * s_bar - eq.E0
