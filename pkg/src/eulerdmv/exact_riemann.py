"""Exact solver for the one-dimensional gamma-law Riemann problem.

Star-state iteration on the pressure function, self-similar sampling and
exact cell averages on a strip grid.  A transverse velocity component is
carried passively across the contact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import STRIP, Field, Grid
from .thermo import GasModel, entropy_from_primitive

MAX_ITER = 200
P_MIN = 1e-12


class VacuumError(ValueError):
    """The data generate vacuum (pressure-positivity condition violated)."""


class RiemannError(RuntimeError):
    """The star-pressure iteration failed to converge."""


class TruncationError(ValueError):
    """A wave has reached the end of the truncated domain."""


@dataclass(frozen=True)
class PrimitiveState:
    rho: float
    u: float
    p: float
    v: float = 0.0

    def __post_init__(self):
        if not (self.rho > 0 and self.p > 0):
            raise ValueError(f"need positive density and pressure, got {self}")

    @classmethod
    def from_temperature(cls, rho, u, theta, v=0.0) -> "PrimitiveState":
        return cls(rho, u, rho * theta, v)

    @property
    def theta(self) -> float:
        return self.p / self.rho

    def sound_speed(self, gamma: float) -> float:
        return math.sqrt(gamma * self.p / self.rho)


@dataclass(frozen=True)
class RiemannData:
    left: PrimitiveState
    right: PrimitiveState
    gamma: float = 1.4

    def __post_init__(self):
        g = self.gamma
        cl, cr = self.left.sound_speed(g), self.right.sound_speed(g)
        if 2 * (cl + cr) / (g - 1) <= self.right.u - self.left.u:
            raise VacuumError("data generate vacuum")

    @property
    def gas(self) -> GasModel:
        return GasModel(self.gamma)

    def mirrored(self) -> "RiemannData":
        """Swap the sides and reflect the normal velocity."""
        L, R = self.left, self.right
        return RiemannData(PrimitiveState(R.rho, -R.u, R.p, R.v),
                           PrimitiveState(L.rho, -L.u, L.p, L.v), self.gamma)


@dataclass(frozen=True)
class Shock:
    side: str
    speed: float
    left: tuple[float, float, float]
    right: tuple[float, float, float]


@dataclass(frozen=True)
class RiemannSolution:
    p_star: float
    u_star: float
    rho_star_left: float
    rho_star_right: float
    left_wave: str
    right_wave: str
    #: (slowest, fastest) speed of each nonlinear wave
    left_speeds: tuple[float, float]
    right_speeds: tuple[float, float]
    lam: float
    residual: float
    iterations: int
    shocks: tuple[Shock, ...] = field(default_factory=tuple)

    @property
    def wave_positions(self) -> tuple[float, ...]:
        """Speeds of every wave front (fan edges, contact, shocks); absent waves are skipped."""
        fronts = (self.u_star,)
        if self.left_wave != "none":
            fronts += self.left_speeds
        if self.right_wave != "none":
            fronts += self.right_speeds
        return tuple(sorted(set(fronts)))

    def to_dict(self) -> dict:
        return {"p_star": self.p_star, "u_star": self.u_star,
                "rho_star_left": self.rho_star_left, "rho_star_right": self.rho_star_right,
                "left_wave": self.left_wave, "right_wave": self.right_wave,
                "lambda": self.lam, "residual": self.residual, "iterations": self.iterations,
                "shock_speeds": [s.speed for s in self.shocks]}


def _side_function(p, W: PrimitiveState, g: float):
    """Velocity jump across one nonlinear wave and its derivative in ``p``."""
    c = W.sound_speed(g)
    if p > W.p:
        A = 2.0 / ((g + 1) * W.rho)
        B = (g - 1) / (g + 1) * W.p
        root = math.sqrt(A / (p + B))
        return (p - W.p) * root, root * (1 - 0.5 * (p - W.p) / (p + B))
    z = (g - 1) / (2 * g)
    ratio = p / W.p
    return 2 * c / (g - 1) * (ratio**z - 1), ratio ** (-(g + 1) / (2 * g)) / (W.rho * c)


def pressure_function(d: RiemannData, p: float) -> float:
    """``f_l(p) + f_r(p) + u_r - u_l``; its root is the star pressure."""
    fl, _ = _side_function(p, d.left, d.gamma)
    fr, _ = _side_function(p, d.right, d.gamma)
    return fl + fr + d.right.u - d.left.u


def solve_star(d: RiemannData, tol: float = 1e-14) -> RiemannSolution:
    """Star pressure and velocity by Newton iteration inside a bisection bracket.

    Raises
    ------
    VacuumError
        When the data create vacuum.
    RiemannError
        When the iteration does not converge within 200 iterations.
    """
    g = d.gamma
    L, R = d.left, d.right
    cl, cr = L.sound_speed(g), R.sound_speed(g)
    du = R.u - L.u

    def f(p):
        fl, dl = _side_function(p, L, g)
        fr, dr = _side_function(p, R, g)
        return fl + fr + du, dl + dr

    lo, hi = P_MIN, 10.0 * max(L.p, R.p)
    if f(lo)[0] > 0:
        raise VacuumError("star pressure below the positivity floor")
    while f(hi)[0] < 0:
        hi *= 10.0
    # two-rarefaction guess
    z = (g - 1) / (2 * g)
    p = ((cl + cr - 0.5 * (g - 1) * du) / (cl / L.p**z + cr / R.p**z)) ** (1 / z)
    p = min(max(p, lo), hi)
    for it in range(1, MAX_ITER + 1):
        val, der = f(p)
        if val == 0.0:
            break
        if val < 0:
            lo = p
        else:
            hi = p
        step = p - val / der
        p_new = step if lo < step < hi else 0.5 * (lo + hi)
        if abs(p_new - p) <= tol * p:
            p = p_new
            break
        p = p_new
    else:
        raise RiemannError(f"star pressure did not converge in {MAX_ITER} iterations")
    residual = abs(f(p)[0])

    fl, _ = _side_function(p, L, g)
    fr, _ = _side_function(p, R, g)
    u = 0.5 * (L.u + R.u) + 0.5 * (fr - fl)
    gm = (g - 1) / (g + 1)
    shocks = []
    waves, speeds, rhos = {}, {}, {}
    for side, W, sgn in (("left", L, -1.0), ("right", R, 1.0)):
        c = W.sound_speed(g)
        ratio = p / W.p
        if abs(ratio - 1.0) <= 1e-12:
            waves[side] = "none"
            rhos[side] = W.rho
            speeds[side] = (W.u + sgn * c,) * 2
        elif ratio > 1.0:
            waves[side] = "shock"
            rhos[side] = W.rho * (ratio + gm) / (gm * ratio + 1)
            s = W.u + sgn * c * math.sqrt((g + 1) / (2 * g) * ratio + (g - 1) / (2 * g))
            speeds[side] = (s, s)
            star = (rhos[side], u, p)
            pre = (W.rho, W.u, W.p)
            shocks.append(Shock(side, s, star if side == "right" else pre,
                                pre if side == "right" else star))
        else:
            waves[side] = "rarefaction"
            rhos[side] = W.rho * ratio ** (1 / g)
            c_star = c * ratio**z
            head, tail = W.u + sgn * c, u + sgn * c_star
            speeds[side] = (min(head, tail), max(head, tail))
    lam = max(abs(x) for x in speeds["left"] + speeds["right"] + (u,))
    return RiemannSolution(p, u, rhos["left"], rhos["right"], waves["left"], waves["right"],
                           speeds["left"], speeds["right"], lam, residual, it, tuple(shocks))


def sample(sol: RiemannSolution, d: RiemannData, xi):
    """Primitive state ``(rho, u, p, v)`` at similarity coordinate ``xi = x / t``.

    Accepts scalars or arrays; ``xi = -inf`` and ``+inf`` give the data.
    """
    g = d.gamma
    xi = np.asarray(xi, dtype=float)
    L, R = d.left, d.right
    rho = np.empty_like(xi)
    u = np.empty_like(xi)
    p = np.empty_like(xi)
    left_side = xi < sol.u_star
    for side, W, sgn, mask in (("left", L, -1.0, left_side), ("right", R, 1.0, ~left_side)):
        wave = sol.left_wave if side == "left" else sol.right_wave
        rho_star = sol.rho_star_left if side == "left" else sol.rho_star_right
        lo, hi = sol.left_speeds if side == "left" else sol.right_speeds
        # outer: untouched data; inner: star region
        if side == "left":
            outer, inner = xi < lo, xi >= hi
        else:
            outer, inner = xi > hi, xi <= lo
        fan = mask & ~outer & ~inner
        for arr, a, b in ((rho, W.rho, rho_star), (u, W.u, sol.u_star), (p, W.p, sol.p_star)):
            arr[mask & outer] = a
            arr[mask & inner] = b
        if wave == "rarefaction" and np.any(fan):
            c = W.sound_speed(g)
            x = xi[fan]
            base = 2 / (g + 1) - sgn * (g - 1) / ((g + 1) * c) * (W.u - x)
            rho[fan] = W.rho * base ** (2 / (g - 1))
            u[fan] = 2 / (g + 1) * (-sgn * c + 0.5 * (g - 1) * W.u + x)
            p[fan] = W.p * base ** (2 * g / (g - 1))
        elif np.any(fan):
            # degenerate fan of zero width
            rho[fan], u[fan], p[fan] = rho_star, sol.u_star, sol.p_star
    v = np.where(left_side, L.v, R.v)
    if xi.ndim == 0:
        return float(rho), float(u), float(p), float(v)
    return rho, u, p, v


def rankine_hugoniot_residual(shock: Shock, gamma: float) -> float:
    """Largest relative violation of the three jump conditions across ``shock``."""

    def cons(w):
        r, u, p = w
        return np.array([r, r * u, p / (gamma - 1) + 0.5 * r * u * u])

    def flux(w):
        r, u, p = w
        E = p / (gamma - 1) + 0.5 * r * u * u
        return np.array([r * u, r * u * u + p, (E + p) * u])

    jump = flux(shock.right) - flux(shock.left) - shock.speed * (cons(shock.right) - cons(shock.left))
    scale = max(np.max(np.abs(flux(shock.left))), np.max(np.abs(cons(shock.left))), 1.0)
    return float(np.max(np.abs(jump)) / scale)


@dataclass(frozen=True)
class ShockEntropy:
    side: str
    speed: float
    production: float
    admissible: bool


def jump_entropy_production(gamma: float, left, right, speed: float) -> float:
    """Entropy production ``[S (u - speed)]`` of a jump moving at ``speed``."""
    gas = GasModel(gamma)
    out = 0.0
    for w, sgn in ((right, 1.0), (left, -1.0)):
        r, u, p = w
        S = float(entropy_from_primitive(gas, r, p / r))
        out += sgn * S * (u - speed)
    return out


def shock_entropy_check(sol: RiemannSolution, d: RiemannData,
                        tol: float = 1e-12) -> list[ShockEntropy]:
    """Entropy production of every shock in ``sol``; empty for shock-free solutions."""
    out = []
    for s in sol.shocks:
        prod = jump_entropy_production(d.gamma, s.left, s.right, s.speed)
        out.append(ShockEntropy(s.side, s.speed, prod, prod >= -tol))
    return out


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


def riemann_field(sol: RiemannSolution, d: RiemannData, grid: Grid, t: float) -> Field:
    """Exact cell averages of the solution at time ``t`` on a strip grid.

    The discontinuity sits at ``x_1 = 0``.  Cells are split at every wave
    front and each piece is integrated with 4-point Gauss-Legendre, so the
    averages of ``rho``, ``m`` and ``S`` are exact up to round-off.

    Raises
    ------
    TruncationError
        If a wave has left the grid by time ``t``.
    """
    if grid.topology != STRIP:
        raise ValueError("riemann_field needs a strip grid")
    if t < 0:
        raise ValueError("time must be nonnegative")
    x0 = grid.origin[0]
    x1 = x0 + grid.extent[0]
    fronts = np.array(sol.wave_positions) * t
    if t > 0 and (fronts[0] <= x0 or fronts[-1] >= x1):
        raise TruncationError(f"wave reached the boundary by t={t}")
    if not x0 < 0 < x1:
        raise ValueError("the initial discontinuity must lie inside the grid")
    n = grid.n[0]
    edges = x0 + grid.h[0] * np.arange(n + 1)
    edges[-1] = x1
    inner = fronts if t > 0 else np.array([0.0])
    pts = np.unique(np.concatenate([edges, inner[(inner > x0) & (inner < x1)]]))
    a, b = pts[:-1], pts[1:]
    cell = np.clip(np.searchsorted(edges, 0.5 * (a + b)) - 1, 0, n - 1)
    half = 0.5 * (b - a)
    x = 0.5 * (a + b)[:, None] + half[:, None] * _GL_NODES[None, :]
    xi = x / t if t > 0 else np.where(x < 0, -np.inf, np.inf)
    rho, u, p, v = sample(sol, d, xi)
    S = entropy_from_primitive(GasModel(d.gamma), rho, p / rho)
    w = half[:, None] * _GL_WEIGHTS[None, :]
    avg = np.empty((n, 4))
    for j, q in enumerate((rho, rho * u, rho * v, S)):
        avg[:, j] = np.bincount(cell, weights=np.sum(w * q, axis=1), minlength=n) / grid.h[0]
    if grid.dim == 1:
        data = avg[:, [0, 1, 3]]
    else:
        data = np.repeat(avg[:, None, :], grid.n[1], axis=1)
    return Field(grid, data)


def profile_rows(sol: RiemannSolution, d: RiemannData, x: np.ndarray, t: float) -> list[dict]:
    """Pointwise samples for CSV export, with both pressure and temperature."""
    xi = x / t if t > 0 else np.where(x < 0, -np.inf, np.inf)
    rho, u, p, v = sample(sol, d, np.asarray(xi, dtype=float))
    return [{"x": float(a), "rho": float(r), "u": float(b), "v": float(c), "p": float(q),
             "theta": float(q / r)} for a, r, b, c, q in zip(x, rho, u, v, p)]
