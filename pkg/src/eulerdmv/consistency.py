"""Weak-form consistency residuals of trajectories and refinement studies.

Every residual is evaluated interval by interval between consecutive
checkpoints: spatial integrals use the cell-centre rule, time integrals the
trapezoid rule between checkpoints.  An interval ``[t_k, t_{k+1})`` owns the
jump at ``t_k``, so boundary terms use left limits and the time integral
starts from the right limit at ``t_k``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import TestFunction, Trajectory, catalogue
from .thermo import RHO_EPS, pressure

KINDS = ("mass", "momentum", "entropy")


class RefinementError(RuntimeError):
    """Residuals failed to decrease monotonically; ``table`` holds the study."""

    def __init__(self, msg, table=None):
        super().__init__(msg)
        self.table = table


def _moments(traj: Trajectory, q: np.ndarray, tf: TestFunction, kind: str):
    """``(int a.v, int F:grad v)`` for the spatial factor ``v`` of ``tf``.

    ``a`` is the transported density of the balance law and ``F`` its flux.
    """
    if tf.dim != traj.grid.dim:
        raise ValueError("test function dimension differs from the grid")
    x = traj.grid.mesh()
    v, grad = tf.spatial(x)
    vol = traj.grid.cell_volume
    rho, m, S = q[..., 0], q[..., 1:-1], q[..., -1]
    live = rho > RHO_EPS
    safe = np.where(live, rho, 1.0)
    if kind == "mass":
        return np.sum(rho * v) * vol, np.sum(m * grad) * vol
    if kind == "entropy":
        flux = np.where(live, S / safe, 0.0)[..., None] * m
        return np.sum(S * v) * vol, np.sum(flux * grad) * vol
    if kind == "momentum":
        c = tf.component
        p = pressure(traj.gas, rho, S)
        row = np.where(live, m[..., c] / safe, 0.0)[..., None] * m
        row[..., c] += np.where(live, p, 0.0)
        return np.sum(m[..., c] * v) * vol, np.sum(row * grad) * vol
    raise ValueError(f"unknown residual kind {kind!r}")


def interval_residuals(traj: Trajectory, tf: TestFunction, kind: str) -> np.ndarray:
    """Signed residual of one balance law on every checkpoint interval.

    Value on ``[t_k, t_{k+1})``:
    ``[int a phi]_{t_k-}^{t_{k+1}-} - int int (a d_t phi + F : grad phi)``.
    For entropy this is the production, so negative values are violations.
    """
    if kind == "momentum" and tf.kind != "vector":
        raise ValueError("momentum residual needs a vector test function")
    if kind != "momentum" and tf.kind != "scalar":
        raise ValueError(f"{kind} residual needs a scalar test function")
    times = traj.times
    K = len(traj)
    left = np.array([_moments(traj, traj.states[k], tf, kind) for k in range(K)])
    right = left.copy()
    for k, q in traj.right_limits.items():
        right[k] = _moments(traj, q, tf, kind)
    T, dT = tf.temporal_value(times)
    boundary = T * left[:, 0]
    integrand_minus = dT * left[:, 0] + T * left[:, 1]
    integrand_plus = dT * right[:, 0] + T * right[:, 1]
    dt = np.diff(times)
    return (boundary[1:] - boundary[:-1]
            - 0.5 * dt * (integrand_plus[:-1] + integrand_minus[1:]))


def _window(traj: Trajectory, t1: float, t2: float) -> slice:
    if not t1 < t2:
        raise ValueError("need t1 < t2")
    return slice(traj.index_of(t1), traj.index_of(t2))


def residual_mass(traj: Trajectory, tf: TestFunction, t1: float, t2: float) -> float:
    """Continuity residual on ``[t1, t2)``."""
    return float(np.sum(interval_residuals(traj, tf, "mass")[_window(traj, t1, t2)]))


def residual_momentum(traj: Trajectory, tf: TestFunction, t1: float, t2: float) -> float:
    """Momentum-balance residual on ``[t1, t2)``; vacuum cells carry no flux."""
    return float(np.sum(interval_residuals(traj, tf, "momentum")[_window(traj, t1, t2)]))


def residual_entropy(traj: Trajectory, tf: TestFunction, t1: float, t2: float) -> float:
    """Entropy production on ``[t1, t2)`` against a nonnegative test function.

    A value ``>= -tol`` certifies the entropy inequality; ``max(0, -value)``
    is the violation.
    """
    if not tf.nonnegative:
        raise ValueError(f"entropy residual needs a nonnegative test function, got {tf.name}")
    return float(np.sum(interval_residuals(traj, tf, "entropy")[_window(traj, t1, t2)]))


def residual_energy(traj: Trajectory) -> float:
    """Largest energy excess over the initial checkpoint, ``max_k (E_k - E_0)^+``."""
    E = traj.energies()
    return float(max(0.0, np.max(E - E[0])))


def testfn_norm(traj: Trajectory, tf: TestFunction) -> float:
    return tf.norm(traj.grid.mesh(), traj.times)


@dataclass
class ConsistencyReport:
    """Residual magnitudes of one trajectory.

    ``e2``/``e3`` map test-function names to total variation over intervals;
    ``e4`` holds the summed entropy violations (positive parts only) and
    ``e4_production`` the signed total production.
    """

    e1: float
    e2: dict
    e3: dict
    e4: dict
    e4_production: dict
    resolution: tuple
    scheme: str
    norms: dict = field(default_factory=dict)
    intervals: list = field(default_factory=list)

    def worst(self, key: str, normalised: bool = True) -> float:
        if key == "e1":
            return self.e1
        vals = getattr(self, key)
        if not vals:
            return 0.0
        if normalised:
            return max(v / self.norms[(key, n)] for n, v in vals.items())
        return max(vals.values())

    def check_finite(self) -> None:
        vals = [self.e1, *self.e2.values(), *self.e3.values(), *self.e4.values()]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("non-finite consistency residual")

    def rows(self) -> list[dict]:
        return [dict(r, resolution="x".join(map(str, self.resolution)), scheme=self.scheme)
                for r in self.intervals]


def default_testfns(traj: Trajectory) -> dict:
    g = traj.grid
    return {"e2": catalogue(g, "scalar"), "e3": catalogue(g, "vector"),
            "e4": catalogue(g, "scalar", nonnegative=True)}


def consistency_report(traj: Trajectory, testfns: dict | None = None) -> ConsistencyReport:
    """Evaluate e1 to e4 over the whole trajectory window."""
    testfns = testfns or default_testfns(traj)
    kinds = {"e2": "mass", "e3": "momentum", "e4": "entropy"}
    out = {"e2": {}, "e3": {}, "e4": {}}
    prod, norms, rows = {}, {}, []
    for key, kind in kinds.items():
        for tf in testfns.get(key, []):
            r = interval_residuals(traj, tf, kind)
            norms[(key, tf.name)] = testfn_norm(traj, tf)
            if key == "e4":
                out[key][tf.name] = float(np.sum(np.maximum(-r, 0.0)))
                prod[tf.name] = float(np.sum(r))
            else:
                out[key][tf.name] = float(np.sum(np.abs(r)))
            rows += [{"kind": key, "testfn": tf.name, "t_start": float(traj.times[k]),
                      "t_end": float(traj.times[k + 1]), "value": float(v)}
                     for k, v in enumerate(r)]
    rep = ConsistencyReport(residual_energy(traj), out["e2"], out["e3"], out["e4"], prod,
                            traj.grid.n, traj.scheme, norms, rows)
    rep.check_finite()
    return rep


@dataclass
class RefinementStudy:
    resolutions: list
    rows: list
    passed: bool
    floor: float

    def orders(self, key: str) -> list[float]:
        for r in self.rows:
            if r["residual"] == key and r["testfn"] == "*":
                return r["orders"]
        raise KeyError(key)

    def min_order(self, keys=("e2", "e3", "e4")) -> float:
        """Smallest observed order among the aggregate rows above the floor."""
        vals = [o for r in self.rows if r["testfn"] == "*" and r["residual"] in keys
                and r["active"] for o in r["orders"]]
        return min(vals) if vals else math.inf

    def csv_rows(self) -> list[dict]:
        out = []
        for r in self.rows:
            for i, n in enumerate(self.resolutions):
                out.append({"residual": r["residual"], "testfn": r["testfn"], "resolution": n,
                            "value": r["values"][i],
                            "order": r["orders"][i - 1] if i else ""})
        return out


def refinement_study(family: list[Trajectory], testfns: dict | None = None,
                     floor_rel: float = 1e-11, strict: bool = False) -> RefinementStudy:
    """Observed orders ``log(r(h) / r(h')) / log(h / h')`` over a resolution ladder.

    One row per (residual, test function) plus an aggregate row per residual
    (``testfn == "*"``) holding the largest value normalised by the test
    function norm.  Rows whose values all sit below the round-off floor
    ``floor_rel * max(E0, M0)`` are marked inactive and do not take part in
    the monotonicity verdict, which only considers the aggregate rows.

    Raises
    ------
    ValueError
        For fewer than two trajectories or repeated resolutions.
    RefinementError
        With ``strict=True`` when an active aggregate row is not decreasing.
    """
    if len(family) < 2:
        raise ValueError("a refinement study needs at least two resolutions")
    hs = [t.grid.h[0] for t in family]
    if len(set(hs)) != len(hs):
        raise ValueError("identical resolutions in refinement family")
    order_idx = np.argsort(hs)[::-1]
    family = [family[i] for i in order_idx]
    hs = [hs[i] for i in order_idx]
    reports = [consistency_report(t, testfns) for t in family]
    floor = floor_rel * max(family[0].E0, family[0].M0)

    def make_row(key, name, vals, scale=1.0):
        vals = [float(v) for v in vals]
        active = max(vals) > floor / scale
        orders = []
        for a, b, ha, hb in zip(vals, vals[1:], hs, hs[1:]):
            orders.append(math.log(a / b) / math.log(ha / hb) if a > 0 and b > 0 else math.nan)
        mono = all(b < a for a, b in zip(vals, vals[1:]))
        return {"residual": key, "testfn": name, "values": vals, "orders": orders,
                "active": active, "monotone": mono}

    rows = [make_row("e1", "*", [r.e1 for r in reports])]
    for key in ("e2", "e3", "e4"):
        names = list(getattr(reports[0], key))
        for name in names:
            rows.append(make_row(key, name, [getattr(r, key)[name] for r in reports]))
        if names:
            scale = min(r.norms[(key, n)] for r in reports for n in names)
            rows.append(make_row(key, "*", [r.worst(key) for r in reports], scale))
    passed = all(r["monotone"] for r in rows if r["testfn"] == "*" and r["active"])
    study = RefinementStudy([t.grid.n for t in family], rows, passed, floor)
    if strict and not passed:
        raise RefinementError("residuals do not decrease monotonically", study)
    return study
