"""Initial-data presets: uniform, smooth advection, Sod and general Riemann data."""
from __future__ import annotations

import numpy as np

from .domain import PERIODIC, STRIP, Field, Grid, Trajectory
from .exact_riemann import PrimitiveState, RiemannData, riemann_field, solve_star
from .thermo import GasModel, entropy_from_primitive, temperature

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)

SOD = RiemannData(PrimitiveState(1.0, 0.0, 1.0), PrimitiveState(0.125, 0.0, 0.1))


def from_primitive(gas: GasModel, grid: Grid, rho, u, p) -> Field:
    """Pointwise primitive arrays (``u`` with trailing velocity axis) to a Field."""
    rho = np.broadcast_to(np.asarray(rho, dtype=float), grid.n)
    u = np.broadcast_to(np.asarray(u, dtype=float), grid.n + (grid.dim,))
    p = np.broadcast_to(np.asarray(p, dtype=float), grid.n)
    data = np.empty(grid.n + (grid.dim + 2,))
    data[..., 0] = rho
    data[..., 1:-1] = rho[..., None] * u
    data[..., -1] = entropy_from_primitive(gas, rho, p / rho)
    return Field(grid, data)


def uniform(gas: GasModel, grid: Grid, rho=1.0, u=None, p=1.0) -> Field:
    u = np.zeros(grid.dim) if u is None else np.asarray(u, dtype=float)
    return from_primitive(gas, grid, rho, u, p)


def sod_grid(n: int, dim: int = 1, transverse: int = 4) -> Grid:
    """Strip ``[-1/2, 1/2]`` (times a periodic unit interval in 2-D)."""
    if dim == 1:
        return Grid((n,), (1.0,), (-0.5,), STRIP)
    return Grid((n, transverse), (1.0, 1.0), (-0.5, 0.0), STRIP)


def advection_grid(n: int, dim: int = 1) -> Grid:
    return Grid((n,) * dim, (1.0,) * dim, topology=PERIODIC)


def smooth_advection(gas: GasModel, grid: Grid, t: float = 0.0, amplitude: float = 0.2,
                     velocity: float = 1.0, pressure: float = 1.0) -> Field:
    """Exact density wave ``1 + a sin(2 pi (x - v t))`` at uniform velocity and pressure.

    Values are cell averages of ``(rho, m, S)`` by 4-point Gauss-Legendre per
    cell along axis 0.
    """
    h = grid.h[0]
    left = grid.origin[0] + h * np.arange(grid.n[0])
    x = left[:, None] + 0.5 * h * (1 + _GL_NODES[None, :])
    rho = 1.0 + amplitude * np.sin(2 * np.pi * (x - velocity * t))
    S = entropy_from_primitive(gas, rho, pressure / rho)
    w = 0.5 * _GL_WEIGHTS
    cols = np.stack([rho @ w, velocity * (rho @ w), S @ w], axis=-1)
    data = np.zeros(grid.n + (grid.dim + 2,))
    shape = (grid.n[0],) + (1,) * (grid.dim - 1)
    data[..., 0] = cols[:, 0].reshape(shape)
    data[..., 1] = cols[:, 1].reshape(shape)
    data[..., -1] = cols[:, 2].reshape(shape)
    return Field(grid, data)


def riemann(grid: Grid, data: RiemannData, t: float = 0.0) -> Field:
    return riemann_field(solve_star(data), data, grid, t)


def sod(grid: Grid) -> Field:
    return riemann(grid, SOD)


def perturbed(gas: GasModel, base: Field, seed: int, amplitude: float = 1e-3) -> Field:
    """Mass-preserving random density perturbation at fixed velocity and pressure."""
    rng = np.random.default_rng(seed)
    rho = base.rho
    u = base.m / rho[..., None]
    p = rho * temperature(gas, rho, base.S)
    r = amplitude * rng.standard_normal(rho.shape)
    r -= np.sum(rho * r) / np.sum(rho)
    return from_primitive(gas, base.grid, rho * (1 + r), u, p)


def advection_energy(gas: GasModel, grid: Grid, velocity: float = 1.0,
                     pressure: float = 1.0) -> float:
    """Energy of the pointwise smooth advection solution (the mean density is 1)."""
    return grid.volume * (0.5 * velocity**2 + gas.cv * pressure)


def riemann_energy(grid: Grid, data: RiemannData) -> float:
    """Energy of the pointwise Riemann initial data on the strip."""
    cv = 1.0 / (data.gamma - 1.0)
    width = grid.volume / grid.extent[0]
    out = 0.0
    for W, length in ((data.left, -grid.origin[0]), (data.right, grid.origin[0] + grid.extent[0])):
        out += length * width * (0.5 * W.rho * (W.u**2 + W.v**2) + cv * W.p)
    return out


def exact_advection_trajectory(gas: GasModel, grid: Grid, times, **kw) -> Trajectory:
    """Cell averages of the exact smooth advection solution at ``times``."""
    states = np.stack([smooth_advection(gas, grid, t, **kw).data for t in times])
    E0 = advection_energy(gas, grid, kw.get("velocity", 1.0), kw.get("pressure", 1.0))
    return Trajectory(grid, times, states, gas, E0, scheme="exact")


def exact_riemann_trajectory(grid: Grid, data: RiemannData, times,
                             reverse: bool = False) -> Trajectory:
    """Cell averages of the exact Riemann solution at ``times``.

    With ``reverse=True`` the fields are played backwards (``t -> T - t`` with
    momentum negated), which turns the shock into an inadmissible
    entropy-destroying jump.
    """
    sol = solve_star(data)
    times = np.asarray(times, dtype=float)
    T = times[-1]
    fields = []
    for t in times:
        q = np.array(riemann_field(sol, data, grid, T - t if reverse else t).data)
        if reverse:
            q[..., 1:-1] *= -1.0
        fields.append(q)
    return Trajectory(grid, times, np.stack(fields), GasModel(data.gamma),
                      riemann_energy(grid, data), scheme="exact-reversed" if reverse else "exact")
