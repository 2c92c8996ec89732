"""Admissibility selection over finite ensembles of trajectories.

Discounted cost functionals, the entropy orders, time shift and
concatenation, the temperature lift that removes an energy defect, and the
selection procedures built from them.

Time integrals treat each observable as piecewise linear between
checkpoints (starting from the right limit where an entropy jump was
recorded) and integrate it exactly against ``exp(-lam t)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dmv import Ensemble, EnsembleError
from .domain import Field, Trajectory
from .thermo import RHO_EPS, internal_energy

KINDS = ("F_S", "F_E", "F_single", "F_lambda", "F_nm")
OBSERVABLES = ("entropy", "energy", "kinetic")
DEFAULT_CHAIN = tuple((lam, obs) for lam in (1.0, 2.0, 0.5) for obs in OBSERVABLES)


class TailBoundError(ValueError):
    def __init__(self, msg, tail_bound):
        super().__init__(msg)
        self.tail_bound = tail_bound


class CompatibilityError(ValueError):
    """Glued trajectories disagree in density or momentum."""


class AdmissibilityError(ValueError):
    """Entropy would jump downwards at a gluing instant."""


class NothingToLiftError(ValueError):
    """No positive energy defect at the requested instant."""


# ---------------------------------------------------------------------------
# functionals

@dataclass(frozen=True)
class SelectionFunctional:
    """Discounted time integral ``int_0^T exp(-lam t) Obs(t) dt``.

    ``kind`` selects the observable: total entropy (``F_S``), total energy
    (``F_E``), ``int E - theta_bar S`` (``F_single`` at ``lam = 1``,
    ``F_lambda`` otherwise) or a named observable (``F_nm``).
    ``T_max=None`` integrates to the last checkpoint, or to infinity when
    ``hold_tail`` continues the last value.  ``tol`` bounds the tail.
    """

    kind: str
    lam: float = 1.0
    observable: str | None = None
    theta_bar: float | None = None
    T_max: float | None = None
    hold_tail: bool = False
    tol: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown functional kind {self.kind!r}")
        if not self.lam > 0:
            raise ValueError("decay rate must be positive")
        if self.kind == "F_single" and self.lam != 1.0:
            raise ValueError("F_single has unit decay rate; use F_lambda")
        if self.kind == "F_nm" and self.observable not in OBSERVABLES:
            raise ValueError(f"F_nm needs an observable in {OBSERVABLES}")

    @property
    def name(self) -> str:
        if self.kind == "F_nm":
            return f"F_nm[lam={self.lam:g},{self.observable}]"
        if self.kind == "F_lambda":
            return f"F_lambda[{self.lam:g}]"
        return self.kind


@dataclass(frozen=True)
class FunctionalValue:
    value: float
    tail_bound: float
    horizon: float


def equilibrium_temperature(traj: Trajectory) -> float:
    return traj.E0 / (traj.gas.cv * traj.M0)


def _state_observable(traj: Trajectory, q: np.ndarray, kind: str, obs: str | None,
                      theta_bar: float) -> float:
    f = Field(traj.grid, q)
    if kind == "F_S" or obs == "entropy":
        return f.entropy()
    if kind == "F_E" or obs == "energy":
        return f.energy(traj.gas)
    if obs == "kinetic":
        rho = f.rho
        live = rho > RHO_EPS
        m2 = np.sum(f.m**2, axis=-1)
        return float(np.sum(np.where(live, m2 / np.where(live, rho, 1.0), 0.0)) * traj.grid.cell_volume)
    return f.energy(traj.gas) - theta_bar * f.entropy()


def observable_series(f: SelectionFunctional, traj: Trajectory):
    """Observable at every checkpoint, as (left limits, right limits)."""
    tb = f.theta_bar if f.theta_bar is not None else equilibrium_temperature(traj)
    left = np.array([_state_observable(traj, q, f.kind, f.observable, tb) for q in traj.states])
    right = left.copy()
    for k, q in traj.right_limits.items():
        right[k] = _state_observable(traj, q, f.kind, f.observable, tb)
    return left, right


def _w0(L):
    # int_0^1 exp(-L u) du
    return np.where(L > 0, -np.expm1(-L) / np.where(L > 0, L, 1.0), 1.0)


def _w1(L):
    # int_0^1 u exp(-L u) du, series below L = 1e-2
    L = np.asarray(L, dtype=float)
    small = L < 1e-2
    Ls = np.where(small, L, 0.0)
    series = sum((-Ls) ** k / (math.factorial(k) * (k + 2)) for k in range(8))
    Lb = np.where(small, 1.0, L)
    big = (-np.expm1(-Lb) - Lb * np.exp(-Lb)) / Lb**2
    return np.where(small, series, big)


def discounted_integral(times, left, right, lam: float, T: float | None = None,
                        hold_tail: bool = False) -> float:
    """Exact ``int_0^T exp(-lam t) g(t) dt`` for piecewise-linear ``g``.

    On ``[t_k, t_{k+1}]`` the integrand runs linearly from ``right[k]`` to
    ``left[k+1]``.  Beyond the last checkpoint ``g`` is held constant when
    ``hold_tail`` is set; ``T=None`` then means ``T = inf``.
    """
    times = np.asarray(times, dtype=float)
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    t_end = times[-1]
    if T is None:
        T = math.inf if hold_tail else t_end
    if T > t_end and not hold_tail:
        raise ValueError(f"horizon {T} beyond the last checkpoint {t_end}")
    a, b = times[:-1], times[1:]
    fa, fb = right[:-1], left[1:]
    if T < t_end:
        keep = a < T
        a, b, fa, fb = a[keep], b[keep], fa[keep], fb[keep]
        fb = fb.copy()
        bb = b.copy()
        last = bb > T
        fb[last] = fa[last] + (fb[last] - fa[last]) * (T - a[last]) / (bb[last] - a[last])
        bb[last] = T
        b = bb
    dt = b - a
    L = lam * dt
    total = float(np.sum(np.exp(-lam * a) * dt * (fa * _w0(L) + (fb - fa) * _w1(L))))
    if T > t_end:
        g = right[-1]
        if math.isinf(T):
            total += g * math.exp(-lam * t_end) / lam
        else:
            total += g * (math.exp(-lam * t_end) - math.exp(-lam * T)) / lam
    return total


def tail_bound(f: SelectionFunctional, traj: Trajectory, horizon: float,
               left: np.ndarray) -> float:
    """Bound on the discarded part ``int_T^inf exp(-lam t) |Obs| dt``."""
    if math.isinf(horizon):
        return 0.0
    tb = f.theta_bar if f.theta_bar is not None else equilibrium_temperature(traj)
    if f.kind == "F_E" or f.observable == "energy":
        sup = traj.E0
    elif f.kind in ("F_single", "F_lambda"):
        sup = traj.E0 + tb * float(np.max(np.abs(traj.entropies())))
    elif f.observable == "kinetic":
        sup = 2.0 * traj.E0
    else:
        sup = float(np.max(np.abs(left)))
    return math.exp(-f.lam * horizon) * sup / f.lam


def evaluate(f: SelectionFunctional, traj: Trajectory) -> FunctionalValue:
    """Value, tail bound and horizon of ``f`` on ``traj``.

    Raises
    ------
    TailBoundError
        When ``f.tol`` is set and the truncation error may exceed it.
    """
    left, right = observable_series(f, traj)
    value = discounted_integral(traj.times, left, right, f.lam, f.T_max, f.hold_tail)
    horizon = f.T_max if f.T_max is not None else (math.inf if f.hold_tail else float(traj.times[-1]))
    tb = 0.0 if f.hold_tail and f.T_max is None else tail_bound(f, traj, horizon, left)
    if f.tol is not None and tb > f.tol:
        raise TailBoundError(f"tail bound {tb:.3e} exceeds tolerance {f.tol:.3e}", tb)
    return FunctionalValue(value, tb, horizon)


def eval_functional(f: SelectionFunctional, traj: Trajectory) -> float:
    return evaluate(f, traj).value


# ---------------------------------------------------------------------------
# orders

@dataclass(frozen=True)
class OrderResult:
    relation: str
    witness: int | None = None
    detail: str = ""


def _same_times(t1: Trajectory, t2: Trajectory):
    if t1.times.shape != t2.times.shape or not np.array_equal(t1.times, t2.times):
        raise ValueError("trajectories must share checkpoint times")


def dip_compare(t1: Trajectory, t2: Trajectory, tol: float = 1e-10) -> OrderResult:
    """Entropy comparison at every checkpoint after the start.

    ``less`` means ``t1`` has no more entropy than ``t2`` at every checkpoint
    and strictly less somewhere.
    """
    _same_times(t1, t2)
    diff = (t2.entropies() - t1.entropies())[1:]
    pos, neg = diff > tol, diff < -tol
    if not pos.any() and not neg.any():
        return OrderResult("equal")
    if not neg.any():
        return OrderResult("less")
    if not pos.any():
        return OrderResult("greater")
    sign = np.where(pos, 1, np.where(neg, -1, 0))
    lead = sign[np.flatnonzero(sign)[0]]
    k = int(np.flatnonzero(sign == -lead)[0]) + 1
    return OrderResult("incomparable", k, f"entropy order flips at checkpoint {k}")


def dafermos_rate(traj: Trajectory, k: int) -> float:
    """Forward difference of total entropy at checkpoint ``k``."""
    if not 0 <= k < len(traj) - 1:
        raise IndexError("the rate needs a following checkpoint")
    S = traj.entropies()
    return float((S[k + 1] - S[k]) / (traj.times[k + 1] - traj.times[k]))


def divergence_index(t1: Trajectory, t2: Trajectory, tol: float = 1e-10) -> int | None:
    """First checkpoint after which the trajectories differ by more than ``tol`` in L1."""
    _same_times(t1, t2)
    vol = t1.grid.cell_volume
    for k in range(len(t1) - 1):
        after = np.sum(np.abs(t1.right_field(k).data - t2.right_field(k).data)) * vol
        nxt = np.sum(np.abs(t1.states[k + 1] - t2.states[k + 1])) * vol
        if after > tol or nxt > tol:
            return k
    return None


def daf_compare(t1: Trajectory, t2: Trajectory, tol: float = 1e-10) -> OrderResult:
    """Compare entropy production rates at the first checkpoint of divergence."""
    k = divergence_index(t1, t2, tol)
    if k is None:
        return OrderResult("equal")
    r1, r2 = dafermos_rate(t1, k), dafermos_rate(t2, k)
    if r2 > r1 + tol:
        return OrderResult("less", k)
    if r1 > r2 + tol:
        return OrderResult("greater", k)
    return OrderResult("incomparable", k, "equal rates at divergence")


# ---------------------------------------------------------------------------
# shift and concatenation

def time_shift(traj: Trajectory, T: float) -> Trajectory:
    """Restart ``traj`` at checkpoint ``T``; the new initial state is the right limit at ``T``."""
    k = traj.index_of(T)
    if k == 0:
        return traj
    times = traj.times[k:] - traj.times[k]
    states = np.array(traj.states[k:])
    states[0] = traj.right_field(k).data
    rl = {j - k: v for j, v in traj.right_limits.items() if j > k}
    return traj.replace(times=times, states=states, right_limits=rl)


def concatenate(t1: Trajectory, T: float, t2: Trajectory, tol: float = 1e-10) -> Trajectory:
    """Follow ``t1`` up to ``T`` and ``t2`` (started at ``T``) afterwards.

    ``t2`` must start from ``t1``'s density and momentum at ``T``; its
    entropy may only jump upwards, and the jump is stored as a right limit.

    Raises
    ------
    CompatibilityError
        If density or momentum differ by more than ``tol``.
    AdmissibilityError
        If some cell would lose more than ``tol`` entropy.
    """
    if t1.grid != t2.grid or t1.gas != t2.gas:
        raise CompatibilityError("trajectories live on different grids or gases")
    k = t1.index_of(T)
    before = t1.states[k]
    after = t2.right_field(0).data
    if np.max(np.abs(after[..., :-1] - before[..., :-1])) > tol:
        raise CompatibilityError(f"density/momentum mismatch at T={T}")
    if np.min(after[..., -1] - before[..., -1]) < -tol:
        raise AdmissibilityError(f"entropy jumps downwards at T={T}")
    times = np.concatenate([t1.times[:k + 1], t1.times[k] + t2.times[1:]])
    states = np.concatenate([t1.states[:k + 1], t2.states[1:]])
    rl = {j: v for j, v in t1.right_limits.items() if j < k}
    if not np.array_equal(after, before):
        rl[k] = after
    rl.update({k + j: v for j, v in t2.right_limits.items() if j > 0})
    meta = dict(t1.meta, glued_at=float(t1.times[k]))
    return Trajectory(t1.grid, times, states, t1.gas, t1.E0, M0=t1.M0,
                      scheme=f"{t1.scheme}|{t2.scheme}", right_limits=rl, meta=meta)


# ---------------------------------------------------------------------------
# temperature lift

def G_function(y, E0: float):
    """``E0 log(E0 / (E0 - y)) - y``, defined for ``0 <= y < E0``."""
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or np.any(y >= E0):
        raise ValueError("G is defined on [0, E0)")
    out = -E0 * np.log1p(-y / E0) - y
    return out[()] if out.ndim == 0 else out


def cost_density(traj: Trajectory, q: np.ndarray, theta_bar: float | None = None) -> float:
    """``int E - theta_bar S`` of the state ``q``."""
    tb = theta_bar if theta_bar is not None else equilibrium_temperature(traj)
    f = Field(traj.grid, q)
    return f.energy(traj.gas) - tb * f.entropy()


@dataclass(frozen=True)
class LiftResult:
    field: Field
    epsilon: float
    defect: float
    defect_after: float
    jump_value: float
    jump_closed_form: float
    jump_bound: float

    @property
    def satisfied(self) -> bool:
        return self.jump_value <= self.jump_bound + 1e-10

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "defect": self.defect, "defect_after": self.defect_after,
                "jump_value": self.jump_value, "jump_closed_form": self.jump_closed_form,
                "jump_bound": self.jump_bound, "satisfied": self.satisfied}


def temperature_lift(traj: Trajectory, tau: float, E0: float | None = None) -> LiftResult:
    """Raise the temperature at ``tau+`` by ``1 + eps`` so the energy defect vanishes.

    ``eps = D / int E_int`` over non-vacuum cells and the entropy grows by
    ``cv rho log(1 + eps)``; vacuum cells are left alone.

    Raises
    ------
    NothingToLiftError
        If the defect at ``tau+`` is not positive.
    """
    E0 = traj.E0 if E0 is None else float(E0)
    k = traj.index_of(tau)
    q = np.array(traj.right_field(k).data)
    gas = traj.gas
    f = Field(traj.grid, q)
    D = E0 - f.energy(gas)
    if not D > 0:
        raise NothingToLiftError(f"energy defect {D:.3e} at t={tau} is not positive")
    rho, S = q[..., 0], q[..., -1]
    live = rho > RHO_EPS
    e_int = np.where(live, internal_energy(gas, np.where(live, rho, 1.0), np.where(live, S, 0.0)), 0.0)
    int_e = float(np.sum(e_int) * traj.grid.cell_volume)
    eps = D / int_e
    lifted = q.copy()
    lifted[..., -1] = np.where(live, S + gas.cv * rho * np.log1p(eps), S)
    lf = Field(traj.grid, lifted)
    tb = E0 / (gas.cv * traj.M0)
    jump = cost_density(traj, lifted, tb) - cost_density(traj, q, tb)
    closed = D - E0 * math.log1p(D / int_e)
    return LiftResult(lf, eps, D, E0 - lf.energy(gas), jump, closed, -float(G_function(D, E0)))


@dataclass(frozen=True)
class LerchReport:
    tau: float
    D: float
    delta: float
    C: float
    lambda_bar: float
    preferences: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"tau": self.tau, "D": self.D, "delta": self.delta, "C": self.C,
                "lambda_bar": self.lambda_bar,
                "preferences": {f"{k:g}": v for k, v in sorted(self.preferences.items())}}


def lerch_threshold(original: Trajectory, lifted: Trajectory, tau: float,
                    lambdas=(), hold_tail: bool = False) -> LerchReport:
    """Decay rate beyond which the discounted cost prefers ``lifted``.

    With ``g = G(lifted) - G(original)`` (``G = int E - theta_bar S``),
    vanishing before ``tau``, ``g <= -D`` on ``[tau, tau + delta]`` and
    ``g <= C`` afterwards, the cost difference is at most
    ``exp(-lam (tau + delta)) (-D delta + C / lam)``, negative for
    ``lam > C / (D delta)``.  The smallest threshold over checkpoint choices
    of ``delta`` is reported, together with the measured preference
    (``F_lambda(lifted) < F_lambda(original)``) for each requested rate.
    """
    _same_times(original, lifted)
    k = original.index_of(tau)
    tb = equilibrium_temperature(original)
    f = SelectionFunctional("F_lambda", theta_bar=tb)
    lo, ro = observable_series(f, original)
    ll, rl = observable_series(f, lifted)
    gl, gr = ll - lo, rl - ro
    # samples on [tau, ...): right limit at tau, then left limits
    g = np.concatenate([[gr[k]], gl[k + 1:]])
    t = original.times[k:]
    best = (math.inf, math.nan, math.nan, math.nan)
    for j in range(1, len(t)):
        D = -float(np.max(g[:j + 1]))
        if not D > 0:
            break
        rest = g[j + 1:]
        C = max(0.0, float(np.max(rest)) if rest.size else 0.0)
        if hold_tail:
            C = max(C, float(g[-1]))
        delta = float(t[j] - t[0])
        lam_bar = C / (D * delta)
        if lam_bar < best[0]:
            best = (lam_bar, D, delta, C)
    prefs = {}
    for lam in lambdas:
        fl = SelectionFunctional("F_lambda", lam=float(lam), theta_bar=tb, hold_tail=hold_tail)
        prefs[float(lam)] = bool(eval_functional(fl, lifted) < eval_functional(fl, original))
    return LerchReport(float(original.times[k]), best[1], best[2], best[3], best[0], prefs)


# ---------------------------------------------------------------------------
# selection

@dataclass
class SelectionReport:
    procedure: str
    chosen: int
    values: dict
    tie_sets: list
    unresolved_tie: bool
    tail_bounds: dict
    provenance: list
    lift: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"procedure": self.procedure, "chosen": self.chosen, "values": self.values,
               "tie_sets": self.tie_sets, "unresolved_tie": self.unresolved_tie,
               "tail_bounds": self.tail_bounds, "provenance": self.provenance}
        if self.lift is not None:
            out["lift"] = self.lift
        out.update(self.extra)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _ties(values, candidates, best, tie_tol):
    return [i for i in candidates if abs(values[i] - best) <= tie_tol * max(1.0, abs(best))]


def select(e: Ensemble, procedure: str = "two_step", tie_tol: float = 1e-9,
           chain=DEFAULT_CHAIN, T_max: float | None = None, hold_tail: bool = False):
    """Pick one member of ``e``.

    ``two_step``: maximise ``F_S`` then minimise ``F_E`` among the ties.
    ``single``: minimise ``F_single``.  ``krylov_chain``: keep the minimisers
    of each ``F_nm`` in ``chain`` (pairs of rate and observable) in turn.
    Remaining ties go to the earliest member, flagged in the report.

    Returns
    -------
    (int, SelectionReport)
    """
    if len(e) == 0:
        raise EnsembleError("empty ensemble")
    tb = e.E0 / (e.gas.cv * e.M0)
    values, tails, tie_sets = {}, {}, []

    def run(f):
        vals = [evaluate(f, t) for t in e.members]
        values[f.name] = [v.value for v in vals]
        tails[f.name] = max(v.tail_bound for v in vals)
        return values[f.name]

    cand = list(range(len(e)))
    if procedure == "two_step":
        fs = run(SelectionFunctional("F_S", T_max=T_max, hold_tail=hold_tail))
        cand = _ties(fs, cand, max(fs), tie_tol)
        tie_sets.append(cand)
        if len(cand) > 1:
            fe = run(SelectionFunctional("F_E", T_max=T_max, hold_tail=hold_tail))
            cand = _ties(fe, cand, min(fe[i] for i in cand), tie_tol)
            tie_sets.append(cand)
    elif procedure == "single":
        fs = run(SelectionFunctional("F_single", theta_bar=tb, T_max=T_max, hold_tail=hold_tail))
        cand = _ties(fs, cand, min(fs), tie_tol)
        tie_sets.append(cand)
    elif procedure == "krylov_chain":
        for lam, obs in chain:
            if len(cand) == 1:
                break
            v = run(SelectionFunctional("F_nm", lam=float(lam), observable=obs, T_max=T_max,
                                        hold_tail=hold_tail))
            cand = _ties(v, cand, min(v[i] for i in cand), tie_tol)
            tie_sets.append(cand)
    else:
        raise ValueError(f"unknown selection procedure {procedure!r}")
    chosen = cand[0]
    report = SelectionReport(procedure, chosen, values, tie_sets, len(cand) > 1, tails,
                             list(e.provenance), extra={"tie_tol": tie_tol, "members": len(e)})
    return chosen, report
