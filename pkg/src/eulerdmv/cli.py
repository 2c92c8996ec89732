"""Command-line experiment runner.

Subcommands ``simulate``, ``riemann``, ``consistency`` and
``ensemble-select`` read a JSON config (or a named preset) and write JSON
reports, CSV tables and trajectory directories under ``--out``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 selection tie left unresolved (the report is still written).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import initial
from .config import (PRESETS, ConfigError, config_hash, gas_of, grid_of, load_config,
                     riemann_data_of, scheme_of)
from .consistency import refinement_study
from .dmv import Ensemble, cesaro_average, diagnostics_table
from .domain import FORMAT_VERSION, save_trajectory
from .exact_riemann import VacuumError, profile_rows, shock_entropy_check, solve_star
from .selection import (SelectionFunctional, concatenate, evaluate, lerch_threshold, select,
                        temperature_lift)
from .solver import SimulationError, simulate
from .thermo import GasModel, entropy_from_primitive

log = logging.getLogger("eulerdmv")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_TIE = 0, 2, 3, 4


# ---------------------------------------------------------------------------
# output helpers

def _stamp(cfg: dict, payload: dict) -> dict:
    out = dict(payload)
    out["config_hash"] = config_hash(cfg)
    out["format_version"] = FORMAT_VERSION
    out["created"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    return out


def _finite(obj):
    # strict JSON has no NaN or infinity
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    text = json.dumps(_finite(obj), sort_keys=True, indent=2, default=_jsonable, allow_nan=False)
    path.write_text(text + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serialisable: {type(x)}")


def write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _prepare(out: Path, cfg: dict) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg)
    return out


# ---------------------------------------------------------------------------
# initial data

def initial_field(cfg: dict, gas: GasModel, grid, seed: int | None = None):
    init = cfg["initial"]
    kind = init["type"]
    if kind == "uniform":
        return initial.uniform(gas, grid, init.get("rho", 1.0), init.get("u"), init.get("p", 1.0))
    if kind == "smooth_advection":
        return initial.smooth_advection(gas, grid, 0.0, init.get("amplitude", 0.2),
                                        init.get("velocity", 1.0), init.get("pressure", 1.0))
    if kind in ("sod", "riemann"):
        return initial.riemann(grid, riemann_data_of(cfg))
    if kind == "perturbed":
        base_cfg = dict(cfg, initial=init.get("base", {"type": "sod"}))
        base = initial_field(base_cfg, gas, grid)
        s = init.get("seed", 0) if seed is None else seed
        return initial.perturbed(gas, base, s, init.get("amplitude", 1e-3))
    raise ConfigError(f"unknown initial data type {kind!r}")


def _dt_scale(seed) -> float:
    # seeds shrink the time step by up to 5 %
    if seed is None:
        return 1.0
    return 1.0 - 0.05 * float(np.random.default_rng(seed).random())


# ---------------------------------------------------------------------------
# simulate

def _summary(traj, gas) -> dict:
    stats = dict(traj.meta.get("stats", {}))
    S = traj.entropies()
    return {"scheme": traj.scheme, "resolution": list(traj.grid.n), "t_end": float(traj.times[-1]),
            "checkpoints": len(traj), "mass_drift": stats.get("mass_drift"),
            "energy_drift": stats.get("energy_drift"), "steps": stats.get("steps"),
            "clamp_count": stats.get("clamp_count"),
            "entropy_production": float(S[-1] - S[0]),
            "entropy_monotone": bool(traj.entropy_drop() <= 1e-12 * max(1.0, abs(S[0]))),
            "max_min_entropy_drop": stats.get("max_min_entropy_drop"),
            "max_total_entropy_drop": stats.get("max_total_entropy_drop")}


def cmd_simulate(cfg: dict, out: Path, workers: int = 1) -> int:
    gas = gas_of(cfg)
    grid = grid_of(cfg)
    f0 = initial_field(cfg, gas, grid)
    try:
        traj = simulate(gas, f0, float(cfg["t_end"]), scheme_of(cfg))
    except SimulationError as exc:
        if exc.partial is not None:
            save_trajectory(exc.partial, out / "trajectory")
        write_json(out / "summary.json", _stamp(cfg, {"error": str(exc), "stats": exc.stats}))
        log.error("simulation failed: %s", exc)
        return EXIT_NUMERIC
    save_trajectory(traj, out / "trajectory")
    write_json(out / "summary.json", _stamp(cfg, _summary(traj, gas)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# riemann

def cmd_riemann(cfg: dict, out: Path, workers: int = 1) -> int:
    data = riemann_data_of(cfg)
    sol = solve_star(data)
    gas = GasModel(data.gamma)
    rc = cfg.get("riemann", {})
    n = int(rc.get("samples", 401))
    span = float(rc.get("span", 1.25)) * max(sol.lam, 1e-12)
    xi = np.linspace(-span, span, n)
    rows = []
    for r in profile_rows(sol, data, xi, 1.0):
        S = float(entropy_from_primitive(gas, r["rho"], r["theta"]))
        rows.append({"xi": r["x"], "rho": r["rho"], "u": r["u"], "v": r["v"], "p": r["p"],
                     "theta": r["theta"], "S": S})
    write_csv(out / "profile.csv", rows)
    def prim(w):
        return {"rho": w.rho, "u": w.u, "p": w.p, "theta": w.theta, "v": w.v}

    report = dict(sol.to_dict(), left=prim(data.left), right=prim(data.right), gamma=data.gamma,
                  theta_star_left=sol.p_star / sol.rho_star_left,
                  theta_star_right=sol.p_star / sol.rho_star_right,
                  shock_entropy=[{"side": s.side, "speed": s.speed, "production": s.production,
                                  "admissible": s.admissible}
                                 for s in shock_entropy_check(sol, data)])
    write_json(out / "star.json", _stamp(cfg, report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# consistency

def cmd_consistency(cfg: dict, out: Path, workers: int = 1) -> int:
    gas = gas_of(cfg)
    cc = cfg.get("consistency", {})
    resolutions = cc.get("resolutions", [128, 256, 512])
    source = cc.get("source", "scheme")
    # checkpoint spacing shrinks with the mesh so time quadrature keeps pace
    base_dt = float(cfg["scheme"]["checkpoint_dt"])
    n0 = resolutions[0]
    family = []
    for n in resolutions:
        grid = grid_of(cfg, n)
        dt = base_dt * n0 / n
        times = np.arange(0, int(round(float(cfg["t_end"]) / dt)) + 1) * dt
        if source == "exact":
            if cfg["initial"]["type"] == "smooth_advection":
                traj = initial.exact_advection_trajectory(gas, grid, times)
            else:
                traj = initial.exact_riemann_trajectory(grid, riemann_data_of(cfg), times)
        else:
            try:
                traj = simulate(gas, initial_field(cfg, gas, grid), float(cfg["t_end"]),
                                scheme_of(cfg, checkpoint_dt=dt))
            except SimulationError as exc:
                log.error("simulation at n=%s failed: %s", n, exc)
                write_json(out / "consistency.json", _stamp(cfg, {"error": str(exc)}))
                return EXIT_NUMERIC
        family.append(traj)
    study = refinement_study(family)
    write_csv(out / "consistency.csv", study.csv_rows())
    agg = {r["residual"]: {"values": r["values"], "orders": r["orders"], "active": r["active"],
                           "monotone": r["monotone"]}
           for r in study.rows if r["testfn"] == "*"}
    write_json(out / "consistency.json", _stamp(cfg, {
        "resolutions": [list(n) for n in study.resolutions], "passed": study.passed,
        "floor": study.floor, "aggregate": agg, "source": source}))
    if cc.get("strict") and not study.passed:
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# ensemble + selection

def _run_member(args):
    cfg, index, entry, outdir = args
    gas = gas_of(cfg)
    grid = grid_of(cfg, entry.get("n"))
    seed = entry.get("seed")
    scheme = scheme_of(cfg, **{k: v for k, v in entry.items() if k not in ("n", "seed")})
    f0 = initial_field(cfg, gas, grid, seed if cfg["initial"]["type"] == "perturbed" else None)
    mdir = Path(outdir) / "members" / f"{index:03d}"
    mdir.mkdir(parents=True, exist_ok=True)
    try:
        traj = simulate(gas, f0, float(cfg["t_end"]), scheme, dt_scale=_dt_scale(seed))
    except SimulationError as exc:
        return index, None, str(exc)
    save_trajectory(traj, mdir / "trajectory")
    return index, traj, None


def cmd_ensemble_select(cfg: dict, out: Path, workers: int = 1) -> int:
    entries = cfg.get("ensemble") or [{}]
    jobs = [(cfg, i, s, str(out)) for i, s in enumerate(entries)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_member, jobs))
    else:
        results = [_run_member(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    failed = [{"index": i, "error": err} for i, _, err in results if err is not None]
    alive = [(i, t) for i, t, err in results if err is None]
    if not alive:
        write_json(out / "report.json", _stamp(cfg, {"failed": failed, "error": "no member survived"}))
        return EXIT_NUMERIC
    budget = max(t.E0 for _, t in alive) * float(cfg.get("energy_budget_factor", 1.0))
    members = [t.replace(E0=budget) for _, t in alive]
    prov = [{"index": i, "scheme": t.scheme, "resolution": list(t.grid.n),
             "seed": entries[i].get("seed")} for i, t in alive]

    lift_info = None
    lc = cfg.get("lift")
    if lc:
        base = members[0]
        tau = float(lc["tau"])
        lift = temperature_lift(base, tau)
        k = base.index_of(tau)
        cont = simulate(base.gas, lift.field, float(base.times[-1] - base.times[k]),
                        scheme_of(cfg, **{k_: v for k_, v in entries[alive[0][0]].items()
                                          if k_ not in ("n", "seed")}), E0=budget)
        glued = concatenate(base, tau, cont)
        lerch = lerch_threshold(base, glued, tau, lambdas=lc.get("lambdas", [1.0]))
        members.append(glued)
        prov.append({"index": len(entries), "scheme": glued.scheme, "resolution": list(glued.grid.n),
                     "seed": None, "lifted_from": prov[0]["index"], "tau": tau})
        lift_info = dict(lift.to_dict(), lerch=lerch.to_dict())

    try:
        ens = Ensemble(members, prov)
    except ValueError as exc:
        write_json(out / "report.json", _stamp(cfg, {"failed": failed, "error": str(exc)}))
        return EXIT_NUMERIC
    sel = cfg.get("selection", {})
    chosen, report = select(ens, sel.get("procedure", "two_step"), float(sel.get("tie_tol", 1e-9)),
                            hold_tail=bool(sel.get("hold_tail", False)))
    tb = ens.E0 / (ens.gas.cv * ens.M0)
    for f in (SelectionFunctional("F_S"), SelectionFunctional("F_E"),
              SelectionFunctional("F_single", theta_bar=tb)):
        vals = [evaluate(f, t) for t in ens.members]
        report.values.setdefault(f.name, [v.value for v in vals])
        report.tail_bounds.setdefault(f.name, max(v.tail_bound for v in vals))
    report.lift = lift_info
    table = diagnostics_table(ens)
    write_csv(out / "diagnostics.csv", table)
    last = len(ens.times) - 1
    avgs = cesaro_average(ens.atoms(last))
    vol = ens.grid.cell_volume
    ces = [{"N": n + 1, "t": float(ens.times[last]),
            "l1_to_mean": float(np.sum(np.abs(a - avgs[-1])) * vol)} for n, a in enumerate(avgs)]
    write_csv(out / "cesaro.csv", ces)
    payload = report.to_dict()
    payload.update(failed=failed, energy_gap_final=table[-1]["energy_gap"],
                   barycenter_energy_defect_final=table[-1]["barycenter_energy_defect"])
    write_json(out / "report.json", _stamp(cfg, payload))
    if report.unresolved_tie:
        return EXIT_TIE
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "riemann": cmd_riemann, "consistency": cmd_consistency,
            "ensemble-select": cmd_ensemble_select}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eulerdmv", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON config file")
        s.add_argument("--preset", choices=sorted(PRESETS), help="named preset")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--workers", type=int, default=1, help="worker processes for ensembles")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.preset)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = _prepare(args.out, cfg)
        return COMMANDS[args.command](cfg, out, args.workers)
    except (ConfigError, VacuumError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
