"""Grids, fields, trajectories, test functions and trajectory persistence."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .thermo import RHO_EPS, GasModel, total_energy

FORMAT_VERSION = "1"

PERIODIC = "periodic"
STRIP = "strip"


class TrajectoryError(ValueError):
    """A trajectory violates mass or energy-budget invariants."""


class LoadError(ValueError):
    """A trajectory directory could not be read back."""


@dataclass(frozen=True)
class Grid:
    """Uniform Cartesian grid.

    ``topology`` is either ``"periodic"`` (torus in every axis) or ``"strip"``
    (reflective walls at both ends of axis 0, remaining axes periodic).
    """

    n: tuple[int, ...]
    extent: tuple[float, ...]
    origin: tuple[float, ...] | None = None
    topology: str = PERIODIC

    def __post_init__(self):
        n = tuple(int(k) for k in self.n)
        extent = tuple(float(x) for x in self.extent)
        origin = (tuple(float(x) for x in self.origin) if self.origin is not None
                  else (0.0,) * len(n))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "extent", extent)
        object.__setattr__(self, "origin", origin)
        if len(n) not in (1, 2) or len(extent) != len(n) or len(origin) != len(n):
            raise ValueError("grid must be 1-D or 2-D with matching n/extent/origin")
        if min(n) < 4:
            raise ValueError("need at least 4 cells per axis")
        if any(not (x > 0 and math.isfinite(x)) for x in extent):
            raise ValueError("extent must be positive and finite")
        if self.topology not in (PERIODIC, STRIP):
            raise ValueError(f"unknown topology {self.topology!r}")

    @property
    def dim(self) -> int:
        return len(self.n)

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / k for L, k in zip(self.extent, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.n[axis]) + 0.5) * self.h[axis]

    def mesh(self) -> np.ndarray:
        """Cell-centre coordinates, shape ``(*n, dim)``."""
        axes = np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij")
        return np.stack(axes, axis=-1)

    def periodic_axis(self, axis: int) -> bool:
        return self.topology == PERIODIC or axis > 0

    def refine(self, factor: int) -> "Grid":
        return Grid(tuple(k * factor for k in self.n), self.extent, self.origin, self.topology)

    def with_n(self, n: Sequence[int]) -> "Grid":
        return Grid(tuple(n), self.extent, self.origin, self.topology)

    def to_dict(self) -> dict:
        return {"n": list(self.n), "extent": list(self.extent),
                "origin": list(self.origin), "topology": self.topology}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["n"]), tuple(d["extent"]), tuple(d.get("origin") or [0.0] * len(d["n"])),
                   d.get("topology", PERIODIC))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def check_states(data: np.ndarray, where: str = "field") -> None:
    rho = data[..., 0]
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{where}: non-finite state")
    if np.any(rho < 0):
        raise ValueError(f"{where}: negative density")
    vac = rho < RHO_EPS
    if np.any(vac):
        if np.any(data[vac][:, 1:-1] != 0) or np.any(data[vac][:, -1] > 0):
            raise ValueError(f"{where}: vacuum cell with momentum or positive entropy")


@dataclass(frozen=True)
class Field:
    """Cell states ``(rho, m, S)`` on a grid; ``data`` has shape ``(*n, dim + 2)``."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data)
        if data.shape != self.grid.n + (self.grid.dim + 2,):
            raise ValueError(f"field shape {data.shape} does not match grid {self.grid.n}")
        check_states(data)
        object.__setattr__(self, "data", data)

    @property
    def rho(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def m(self) -> np.ndarray:
        return self.data[..., 1:-1]

    @property
    def S(self) -> np.ndarray:
        return self.data[..., -1]

    def mass(self) -> float:
        return integrate(self, self.rho)

    def energy(self, gas: GasModel) -> float:
        return integrate(self, total_energy(gas, self.data))

    def entropy(self) -> float:
        return integrate(self, self.S)


def integrate(f: Field, observable) -> float:
    """Midpoint quadrature ``sum(obs) * cell volume``.

    ``observable`` is a per-cell array or a callable taking the field.  Any
    infinite cell value makes the integral ``+inf``.
    """
    obs = observable(f) if callable(observable) else observable
    obs = np.asarray(obs, dtype=float)
    if np.any(np.isposinf(obs)):
        return math.inf
    return float(np.sum(obs) * f.grid.cell_volume)


@dataclass(frozen=True)
class Trajectory:
    """Checkpointed fields of one candidate solution.

    The field at index ``k`` is the left limit at ``times[k]``.  Upward entropy
    jumps at gluing instants are kept in ``right_limits`` (index -> state
    array holding the right limit).
    """

    grid: Grid
    times: np.ndarray
    states: np.ndarray
    gas: GasModel
    E0: float
    M0: float | None = None
    scheme: str = "unknown"
    right_limits: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    mass_rtol: float = 1e-10
    energy_rtol: float = 1e-10

    def __post_init__(self):
        times = _frozen(np.asarray(self.times, dtype=float).reshape(-1))
        states = _frozen(self.states)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        if times.size == 0 or times[0] != 0.0 or np.any(np.diff(times) <= 0):
            raise TrajectoryError("times must start at 0 and increase strictly")
        if states.shape != (times.size,) + self.grid.n + (self.grid.dim + 2,):
            raise TrajectoryError(f"states shape {states.shape} inconsistent with grid/times")
        rl = {int(k): _frozen(v) for k, v in self.right_limits.items()}
        for k, v in rl.items():
            if not 0 <= k < times.size or v.shape != states.shape[1:]:
                raise TrajectoryError(f"bad right limit at index {k}")
        object.__setattr__(self, "right_limits", rl)
        object.__setattr__(self, "meta", dict(self.meta))
        if self.M0 is None:
            object.__setattr__(self, "M0", self.masses()[0])
        object.__setattr__(self, "E0", float(self.E0))
        object.__setattr__(self, "M0", float(self.M0))
        self.validate()

    def validate(self) -> None:
        for k in range(len(self)):
            check_states(self.states[k], f"checkpoint {k}")
        for k, v in self.right_limits.items():
            check_states(v, f"right limit {k}")
        mass = self.masses()
        bad = np.abs(mass - self.M0) > self.mass_rtol * abs(self.M0)
        if np.any(bad):
            k = int(np.argmax(bad))
            raise TrajectoryError(f"mass {mass[k]} at checkpoint {k} differs from M0={self.M0}")
        energy = self.energies()
        limit = self.E0 + self.energy_rtol * abs(self.E0)
        if np.any(energy > limit):
            k = int(np.argmax(energy > limit))
            raise TrajectoryError(f"energy {energy[k]} at checkpoint {k} exceeds E0={self.E0}")
        for k, v in self.right_limits.items():
            if integrate(self.field(k), total_energy(self.gas, v)) > limit:
                raise TrajectoryError(f"right limit at {k} exceeds the energy budget")

    def __len__(self) -> int:
        return self.times.size

    def field(self, k: int) -> Field:
        return Field(self.grid, self.states[k])

    def right_field(self, k: int) -> Field:
        """State just after ``times[k]`` (equal to the left limit unless glued)."""
        return Field(self.grid, self.right_limits.get(k, self.states[k]))

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a checkpoint")
        return k

    def masses(self) -> np.ndarray:
        return self.states[..., 0].reshape(len(self), -1).sum(axis=1) * self.grid.cell_volume

    def energies(self) -> np.ndarray:
        E = total_energy(self.gas, self.states).reshape(len(self), -1)
        out = E.sum(axis=1) * self.grid.cell_volume
        return np.where(np.any(np.isposinf(E), axis=1), np.inf, out)

    def entropies(self, side: str = "-") -> np.ndarray:
        S = self.states[..., -1].reshape(len(self), -1).sum(axis=1) * self.grid.cell_volume
        if side == "+":
            S = S.copy()
            for k, v in self.right_limits.items():
                S[k] = v[..., -1].sum() * self.grid.cell_volume
        return S

    def entropy_drop(self) -> float:
        """Largest decrease of total entropy between consecutive checkpoints."""
        S = self.entropies()
        return float(max(0.0, -np.min(np.diff(S)))) if len(self) > 1 else 0.0

    def replace(self, **kw) -> "Trajectory":
        args = dict(grid=self.grid, times=self.times, states=self.states, gas=self.gas,
                    E0=self.E0, M0=self.M0, scheme=self.scheme,
                    right_limits=self.right_limits, meta=self.meta)
        args.update(kw)
        return Trajectory(**args)


# ---------------------------------------------------------------------------
# test functions

_TEMPORAL = ("const", "exp", "texp")


def _reduce(y):
    # y = 2j + r with r in [-1, 1]; fold |r| into [0, 1/2] so integers map to exact zeros
    r = y - 2.0 * np.round(0.5 * y)
    a = np.abs(r)
    flip = a > 0.5
    return np.sign(r), np.where(flip, 1.0 - a, a), flip


def _sinpi(y):
    sgn, a, _ = _reduce(np.asarray(y, dtype=float))
    return sgn * np.sin(math.pi * a)


def _cospi(y):
    _, a, flip = _reduce(np.asarray(y, dtype=float))
    c = np.cos(math.pi * a)
    return np.where(flip, -c, c)


@dataclass(frozen=True)
class TestFunction:
    """Separable smooth test function ``T(t) * prod_a P_a(x_a)`` (times ``e_c`` if vector).

    Each axis profile is ``("one", 0)``, ``("cos", k)``, ``("sin", k)`` or
    ``("pos", k)`` (``1 + cos``, nonnegative).  On periodic axes the period is
    the extent; on the walled axis of a strip the argument is ``pi k xi``
    with ``xi`` in ``[0, 1]`` across the strip, so ``sin`` vanishes at walls.
    """

    __test__ = False  # not a pytest class

    profiles: tuple[tuple[str, int], ...]
    temporal: str = "exp"
    kind: str = "scalar"
    component: int = 0
    origin: tuple[float, ...] = (0.0,)
    extent: tuple[float, ...] = (1.0,)
    topology: str = PERIODIC

    def __post_init__(self):
        if self.temporal not in _TEMPORAL:
            raise ValueError(f"unknown temporal profile {self.temporal!r}")
        if self.kind not in ("scalar", "vector"):
            raise ValueError("kind must be scalar or vector")
        if len(self.profiles) != len(self.extent):
            raise ValueError("one spatial profile per axis")
        if (self.kind == "vector" and self.topology == STRIP and self.component == 0
                and self.profiles[0][0] != "sin"):
            raise ValueError("wall-normal component on a strip must use a sin profile")

    @property
    def dim(self) -> int:
        return len(self.extent)

    @property
    def name(self) -> str:
        sp = "*".join(f"{p}{k}" if p != "one" else "1" for p, k in self.profiles)
        base = f"{sp}|{self.temporal}"
        return f"e{self.component}[{base}]" if self.kind == "vector" else base

    @property
    def nonnegative(self) -> bool:
        return self.kind == "scalar" and all(p in ("one", "pos") for p, _ in self.profiles)

    def _omega(self, axis: int, k: int) -> float:
        L = self.extent[axis]
        if self.topology == STRIP and axis == 0:
            return math.pi * k / L
        return 2.0 * math.pi * k / L

    def _axis(self, axis: int, x: np.ndarray):
        kind, k = self.profiles[axis]
        if kind == "one" or k == 0:
            one = np.ones_like(x)
            return one, np.zeros_like(x)
        w = self._omega(axis, k)
        y = (w / math.pi) * (x - self.origin[axis])
        if kind == "cos":
            return _cospi(y), -w * _sinpi(y)
        if kind == "sin":
            return _sinpi(y), w * _cospi(y)
        if kind == "pos":
            return 1.0 + _cospi(y), -w * _sinpi(y)
        raise ValueError(f"unknown profile {kind!r}")

    def temporal_value(self, t):
        t = np.asarray(t, dtype=float)
        if self.temporal == "const":
            return np.ones_like(t), np.zeros_like(t)
        e = np.exp(-t)
        if self.temporal == "exp":
            return e, -e
        return t * e, (1.0 - t) * e

    def spatial(self, x: np.ndarray):
        """Spatial value and gradient at points ``x`` of shape ``(..., dim)``."""
        x = np.asarray(x, dtype=float)
        vals, ders = zip(*(self._axis(a, x[..., a]) for a in range(self.dim)))
        value = np.prod(np.stack(vals, axis=-1), axis=-1)
        grad = np.empty(x.shape)
        for a in range(self.dim):
            g = ders[a]
            for b in range(self.dim):
                if b != a:
                    g = g * vals[b]
            grad[..., a] = g
        return value, grad

    def norm(self, x: np.ndarray, times) -> float:
        """Sup of ``|phi|``, ``|d_t phi|`` and ``|grad phi|`` over sample points."""
        v, g = self.spatial(x)
        T, dT = self.temporal_value(np.asarray(times))
        tmax, dtmax = float(np.max(np.abs(T))), float(np.max(np.abs(dT)))
        return max(float(np.max(np.abs(v))) * max(tmax, dtmax),
                   float(np.max(np.abs(g))) * tmax)


def eval_testfn(tf: TestFunction, t, x):
    """Evaluate a test function and its derivatives.

    Returns ``(phi, dphi_dt, grad_phi)``.  For scalar functions ``phi`` has
    the shape of the points, ``grad_phi`` a trailing ``dim`` axis.  For
    vector functions ``phi`` has a trailing ``dim`` axis and
    ``grad_phi[..., i, j] = d_j phi_i``.
    """
    v, g = tf.spatial(x)
    T, dT = tf.temporal_value(t)
    phi, dphi = v * T, v * dT
    grad = g * (T[..., None] if np.ndim(T) else T)
    if tf.kind == "scalar":
        return phi, dphi, grad
    d = tf.dim
    e = np.zeros(d)
    e[tf.component] = 1.0
    vphi = phi[..., None] * e
    vdphi = dphi[..., None] * e
    vgrad = np.zeros(np.shape(grad)[:-1] + (d, d))
    vgrad[..., tf.component, :] = grad
    return vphi, vdphi, vgrad


def catalogue(grid: Grid, kind: str = "scalar", nonnegative: bool = False,
              temporal: Sequence[str] = ("exp", "texp"), modes: int = 3) -> list[TestFunction]:
    """Finite family of test functions: constant plus the first trig modes per axis.

    Vector functions point along one axis; on a strip the wall-normal
    component only gets ``sin`` profiles along axis 0 so it vanishes at walls.
    """
    d = grid.dim
    flat = (("one", 0),) * d

    def mode(a, shape, k):
        prof = list(flat)
        prof[a] = (shape, k)
        return tuple(prof)

    specs = []  # (component, profiles)
    if kind == "scalar":
        specs.append((0, flat))
        shapes = ("pos",) if nonnegative else ("cos", "sin")
        specs += [(0, mode(a, sh, k)) for a in range(d) for k in range(1, modes + 1) for sh in shapes]
    elif kind == "vector":
        for c in range(d):
            if grid.topology == STRIP and c == 0:
                specs += [(c, mode(0, "sin", k)) for k in range(1, modes + 1)]
                continue
            specs.append((c, flat))
            specs += [(c, mode(a, sh, k)) for a in range(d) for k in range(1, modes + 1)
                      for sh in ("cos", "sin")]
    else:
        raise ValueError("kind must be scalar or vector")
    return [TestFunction(prof, tp, kind, c, grid.origin, grid.extent, grid.topology)
            for c, prof in specs for tp in temporal]


# ---------------------------------------------------------------------------
# persistence

def _write_bin(path: Path, a: np.ndarray) -> None:
    path.write_bytes(np.ascontiguousarray(a, dtype="<f8").tobytes(order="C"))


def _read_bin(path: Path, shape: tuple[int, ...]) -> np.ndarray:
    if not path.exists():
        raise LoadError(f"missing payload {path.name}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * 8
    if len(raw) != expected:
        raise LoadError(f"{path.name}: payload has {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def save_trajectory(traj: Trajectory, path) -> Path:
    """Write ``manifest.json`` plus one little-endian ``field_<k>.bin`` per checkpoint."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "endianness": "little",
        "dtype": "float64",
        "grid": traj.grid.to_dict(),
        "gas": traj.gas.to_dict(),
        "times": [float(t) for t in traj.times],
        "E0": traj.E0,
        "M0": traj.M0,
        "scheme": traj.scheme,
        "right_limits": sorted(traj.right_limits),
        "meta": traj.meta,
    }
    for k in range(len(traj)):
        _write_bin(path / f"field_{k}.bin", traj.states[k])
    for k, v in traj.right_limits.items():
        _write_bin(path / f"right_{k}.bin", v)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def load_trajectory(path) -> Trajectory:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise LoadError(f"no manifest in {path}") from exc
    except json.JSONDecodeError as exc:
        raise LoadError(f"malformed manifest: {exc}") from exc
    if not isinstance(manifest, dict):
        raise LoadError("malformed manifest: not an object")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported trajectory format version {version!r}")
    if manifest.get("endianness") != "little" or manifest.get("dtype") != "float64":
        raise LoadError("endianness/dtype marker mismatch; expected little-endian float64")
    try:
        grid = Grid.from_dict(manifest["grid"])
        gas = GasModel.from_dict(manifest["gas"])
        times = np.array(manifest["times"], dtype=float)
        E0, M0 = float(manifest["E0"]), float(manifest["M0"])
        rl_idx = [int(k) for k in manifest.get("right_limits", [])]
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"malformed manifest: {exc}") from exc
    cell_shape = grid.n + (grid.dim + 2,)
    states = np.stack([_read_bin(path / f"field_{k}.bin", cell_shape) for k in range(times.size)])
    rl = {k: _read_bin(path / f"right_{k}.bin", cell_shape) for k in rl_idx}
    try:
        return Trajectory(grid, times, states, gas, E0, M0, manifest.get("scheme", "unknown"),
                          rl, manifest.get("meta", {}))
    except (TrajectoryError, ValueError) as exc:
        raise LoadError(f"loaded trajectory fails invariants: {exc}") from exc

