import csv
import json
import subprocess
import sys

import pytest

from eulerdmv.cli import main
from eulerdmv.config import ConfigError, config_hash, load_config
from eulerdmv.domain import load_trajectory


def run(tmp_path, command, preset=None, config=None, name="out", workers=1):
    argv = [command, "--out", str(tmp_path / name), "--workers", str(workers)]
    if preset:
        argv += ["--preset", preset]
    if config is not None:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config))
        argv += ["--config", str(path)]
    return main(argv), tmp_path / name


def read_json(path):
    return json.loads(path.read_text())


def read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def without_timestamp(path):
    d = read_json(path)
    d.pop("created")
    return d


def test_config_presets_validate():
    from eulerdmv.config import PRESETS
    for name in PRESETS:
        cfg = load_config(preset=name)
        assert config_hash(cfg) == config_hash(load_config(preset=name))
    with pytest.raises(ConfigError):
        load_config(preset="nope")


def test_config_rejects_bad_values(tmp_path):
    for bad in ({"gas": {"gamma": 1.0}}, {"t_end": 0}, {"scheme": {"flux": "roe"}},
                {"initial": {"type": "vortex"}}, {"selection": {"procedure": "vote"}},
                {"energy_budget_factor": 0.5},
                {"grid": {"n": [64], "extent": [1.0], "topology": "periodic"}}):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(bad))
        with pytest.raises(ConfigError):
            load_config(p)


def test_simulate_uniform(tmp_path):
    code, out = run(tmp_path, "simulate", preset="uniform")
    assert code == 0
    s = read_json(out / "summary.json")
    assert s["mass_drift"] < 1e-11 and s["energy_drift"] < 1e-11
    assert s["config_hash"] == config_hash(load_config(preset="uniform"))
    assert s["format_version"] == "1"
    traj = load_trajectory(out / "trajectory")
    assert traj.times[-1] == pytest.approx(0.2)
    assert read_json(out / "config.json") == load_config(preset="uniform")


def test_simulate_sod_produces_entropy(tmp_path):
    code, out = run(tmp_path, "simulate", preset="sod")
    assert code == 0
    s = read_json(out / "summary.json")
    assert s["resolution"] == [256]
    assert s["entropy_production"] > 0
    assert s["entropy_monotone"]


def test_invalid_gamma_exits_before_compute(tmp_path, capsys):
    code, out = run(tmp_path, "simulate", config={"gas": {"gamma": 0.9}})
    assert code == 2
    assert not (out / "summary.json").exists()
    assert "config error" in capsys.readouterr().err


def test_solver_failure_keeps_partial_output(tmp_path):
    code, out = run(tmp_path, "simulate",
                    config={"scheme": {"flux": "rusanov", "checkpoint_dt": 0.05, "max_steps": 30}})
    assert code == 3
    assert "error" in read_json(out / "summary.json")
    assert len(load_trajectory(out / "trajectory")) >= 1


def test_riemann_sod(tmp_path):
    code, out = run(tmp_path, "riemann", preset="sod")
    assert code == 0
    star = read_json(out / "star.json")
    assert star["p_star"] == pytest.approx(0.30313, abs=5e-6)
    assert star["shock_entropy"][0]["production"] > 0
    rows = read_csv(out / "profile.csv")
    assert set(rows[0]) == {"xi", "rho", "u", "v", "p", "theta", "S"}


def test_riemann_equal_states_constant(tmp_path):
    code, out = run(tmp_path, "riemann", preset="equal-states")
    assert code == 0
    rows = read_csv(out / "profile.csv")
    assert {r["rho"] for r in rows} == {"1.0"}
    assert {r["p"] for r in rows} == {"1.0"}


def test_temperature_data_match_pressure_data(tmp_path):
    _, a = run(tmp_path, "riemann", preset="sod", name="p")
    _, b = run(tmp_path, "riemann", preset="sod-temperature", name="theta")
    sa, sb = read_json(a / "star.json"), read_json(b / "star.json")
    for key in ("p_star", "u_star", "rho_star_left", "rho_star_right", "lambda"):
        assert sa[key] == sb[key]
    assert (a / "profile.csv").read_text() == (b / "profile.csv").read_text()


def test_riemann_vacuum_is_config_error(tmp_path):
    cfg = {"initial": {"type": "riemann", "left": {"rho": 1.0, "u": -10.0, "p": 0.1},
                       "right": {"rho": 1.0, "u": 10.0, "p": 0.1}}}
    code, _ = run(tmp_path, "riemann", config=cfg)
    assert code == 2


def test_consistency_command(tmp_path):
    cfg = {"consistency": {"resolutions": [64, 128, 256]}}
    code, out = run(tmp_path, "consistency", preset="smooth-advection", config=cfg)
    assert code == 0
    rep = read_json(out / "consistency.json")
    assert rep["passed"]
    assert min(rep["aggregate"]["e2"]["orders"]) >= 0.8
    rows = read_csv(out / "consistency.csv")
    assert {"residual", "testfn", "resolution", "value", "order"} <= set(rows[0])


def test_singleton_ensemble(tmp_path):
    cfg = {"t_end": 0.1, "scheme": {"flux": "rusanov", "checkpoint_dt": 0.025},
           "grid": {"n": [64], "extent": [1.0], "origin": [-0.5], "topology": "strip"},
           "ensemble": [{"flux": "rusanov"}]}
    code, out = run(tmp_path, "ensemble-select", config=cfg)
    assert code == 0
    rep = read_json(out / "report.json")
    assert rep["chosen"] == 0
    assert rep["energy_gap_final"] == pytest.approx(0.0, abs=1e-15)


PERTURBED = {
    "t_end": 0.125,
    "grid": {"n": [128], "extent": [1.0], "origin": [-0.5], "topology": "strip"},
    "initial": {"type": "perturbed", "base": {"type": "sod"}, "amplitude": 1e-3},
    "scheme": {"flux": "rusanov", "cfl": 0.4, "checkpoint_dt": 0.015625},
    "ensemble": [{"flux": "rusanov", "seed": 1}, {"flux": "hll", "seed": 2}],
    "selection": {"procedure": "two_step"},
}


def test_perturbed_ensemble_report(tmp_path):
    code, out = run(tmp_path, "ensemble-select", config=PERTURBED, workers=2)
    assert code == 0
    rep = read_json(out / "report.json")
    for name in ("F_S", "F_E", "F_single"):
        assert len(rep["values"][name]) == 2
        assert name in rep["tail_bounds"]
    assert rep["chosen"] in (0, 1)
    assert rep["failed"] == []
    assert len(read_csv(out / "cesaro.csv")) == 2
    diag = read_csv(out / "diagnostics.csv")
    assert all(float(r["energy_gap"]) >= -1e-12 for r in diag)
    for i in (0, 1):
        assert load_trajectory(out / "members" / f"{i:03d}" / "trajectory").M0 > 0


def test_ensemble_reproducible(tmp_path):
    _, a = run(tmp_path, "ensemble-select", config=PERTURBED, name="a", workers=2)
    _, b = run(tmp_path, "ensemble-select", config=PERTURBED, name="b", workers=1)
    assert without_timestamp(a / "report.json") == without_timestamp(b / "report.json")
    assert (a / "diagnostics.csv").read_bytes() == (b / "diagnostics.csv").read_bytes()


def test_failed_member_is_reported(tmp_path):
    cfg = dict(PERTURBED, ensemble=[{"flux": "rusanov", "seed": 1},
                                    {"flux": "hll", "seed": 2, "max_steps": 3}])
    code, out = run(tmp_path, "ensemble-select", config=cfg)
    assert code == 0
    rep = read_json(out / "report.json")
    assert [f["index"] for f in rep["failed"]] == [1]
    assert rep["chosen"] == 0
    assert [p["index"] for p in rep["provenance"]] == [0]


def test_unresolved_tie_exit_code(tmp_path):
    cfg = dict(PERTURBED, initial={"type": "sod"},
               ensemble=[{"flux": "rusanov"}, {"flux": "rusanov"}])
    code, out = run(tmp_path, "ensemble-select", config=cfg)
    assert code == 4
    assert read_json(out / "report.json")["unresolved_tie"]


def test_lift_demo(tmp_path):
    code, out = run(tmp_path, "ensemble-select", preset="lift-demo")
    assert code == 0
    rep = read_json(out / "report.json")
    lift = rep["lift"]
    assert lift["satisfied"]
    assert lift["epsilon"] > 0
    E0 = 1.05 * load_trajectory(out / "members" / "000" / "trajectory").E0
    assert abs(lift["defect_after"]) <= 1e-10 * E0
    assert lift["jump_value"] == pytest.approx(lift["jump_closed_form"], abs=1e-10)
    assert "lambda_bar" in lift["lerch"]
    assert len(rep["provenance"]) == 2 and rep["provenance"][1]["tau"] == 0.0625


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "eulerdmv", "riemann", "--preset", "sod",
                          "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "m" / "star.json").exists()
