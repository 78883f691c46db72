import subprocess

import pytest

import irs_uplink.sweeps as sweeps
from irs_uplink.channel import NumericError
from irs_uplink.cli import EXIT_CONFIG, EXIT_POINTS_FAILED, main

SCENARIO = """\
M: 4
N: 4
K: 2
seed: 1
correlation:
  draws: 1000
"""


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "sc.yaml"
    path.write_text(SCENARIO)
    return path


def metrics(text):
    return dict(line.split(": ", 1) for line in text.splitlines())


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_validate_ok(capsys, config):
    code, out, _ = run(capsys, "validate", "--config", config)
    assert code == 0
    m = metrics(out)
    assert m["status"] == "ok" and m["K"] == "2" and m["tau"] == "2"


def test_validate_tau_below_k_exits_2(capsys, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("K: 4\ntau: 2\n")
    code, _, err = run(capsys, "validate", "--config", path)
    assert code == EXIT_CONFIG
    assert "line 2: tau" in err and "tau >= K" in err


def test_missing_config_exits_2(capsys, tmp_path):
    code, _, err = run(capsys, "evaluate", "--config", tmp_path / "nope.yaml")
    assert code == EXIT_CONFIG
    assert "not found" in err


def test_evaluate_prints_sinr_and_sum_se(capsys, config, tmp_path):
    out_csv = tmp_path / "ev.csv"
    code, out, _ = run(capsys, "evaluate", "--config", config, "--out", out_csv)
    assert code == 0
    m = metrics(out)
    assert {"gamma[0]", "gamma[1]", "nmse[0]", "nmse[1]", "sum_se"} <= set(m)
    assert float(m["sum_se"]) > 0
    assert out_csv.read_text().startswith("quantity,ue,value\n")


def test_quiet_suppresses_metrics(capsys, config):
    code, out, _ = run(capsys, "evaluate", "--config", config, "--quiet")
    assert code == 0 and out == ""


def test_seed_override_changes_statistics_key(capsys, config):
    _, a, _ = run(capsys, "validate", "--config", config)
    _, b, _ = run(capsys, "validate", "--config", config, "--seed", "2")
    assert metrics(a)["statistics_key"] != metrics(b)["statistics_key"]


def test_optimize_with_uniform_phase_noise_stops_at_first_iteration(capsys, tmp_path):
    path = tmp_path / "uni.yaml"
    path.write_text(SCENARIO + "phase_noise: {kind: uniform}\n")
    code, out, _ = run(capsys, "optimize", "--config", path)
    m = metrics(out)
    assert code == 0
    assert m["status"] == "zero_gradient"
    assert m["iterations"] == "1"
    assert m["initial_sum_se"] == m["final_sum_se"]


def test_optimize_improves(capsys, config, tmp_path):
    code, out, _ = run(capsys, "optimize", "--config", config, "--out", tmp_path / "t.csv",
                       "--phases-out", tmp_path / "p.csv")
    m = metrics(out)
    assert code == 0
    assert float(m["final_sum_se"]) > float(m["initial_sum_se"])
    assert (tmp_path / "p.csv").read_text().count("\n") == 5


def test_stats_writes_cache(capsys, config, tmp_path):
    code, out, _ = run(capsys, "stats", "--config", config, "--out", tmp_path / "s.npz",
                       "--cache", tmp_path / "cache")
    assert code == 0
    assert (tmp_path / "s.npz").exists()
    assert len(list((tmp_path / "cache").iterdir())) == 1


def test_validate_mc_reports_errors(capsys, config, tmp_path):
    code, out, _ = run(capsys, "validate-mc", "--config", config, "--trials", 2000,
                       "--out", tmp_path / "mc.csv")
    m = metrics(out)
    assert code == 0
    assert {"max_rel_err[gamma]", "max_rel_err[nmse]", "max_rel_err"} <= set(m)


def test_validate_mc_rejects_too_few_trials(capsys, config):
    code, _, err = run(capsys, "validate-mc", "--config", config, "--trials", 5)
    assert code == EXIT_CONFIG


SWEEP = """\
base: sc.yaml
axis: {name: kappa, values: [0.0, 0.01]}
curves:
  - {label: a}
  - {label: b, M: 2}
output: sweep.csv
"""


def test_sweep_exit_status_and_output(capsys, config):
    path = config.parent / "sweep.yaml"
    path.write_text(SWEEP)
    code, out, _ = run(capsys, "sweep", "--config", path)
    assert code == 0
    assert metrics(out)["points"] == "4" and metrics(out)["failed"] == "0"
    assert (config.parent / "sweep.csv").read_text().count("\n") == 5


def test_sweep_with_failed_points_exits_nonzero(capsys, config, monkeypatch):
    def boom(*a, **k):
        raise NumericError("performance.evaluate", "injected")

    monkeypatch.setattr(sweeps, "evaluate", boom)
    path = config.parent / "sweep.yaml"
    path.write_text(SWEEP)
    code, out, _ = run(capsys, "sweep", "--config", path)
    assert code == EXIT_POINTS_FAILED
    assert metrics(out)["failed"] == "4"


@pytest.mark.parametrize("argv", [
    ["evaluate", "--optimize"],
    ["optimize"],
    ["validate-mc", "--trials", "500"],
    ["sweep", "--trials", "200", "--optimize"],
])
def test_outputs_are_byte_identical_on_repeat(capsys, config, argv):
    d = config.parent
    if argv[0] == "sweep":
        (d / "sweep.yaml").write_text(SWEEP)
        cfg = d / "sweep.yaml"
    else:
        cfg = config
    blobs = []
    for i in range(2):
        out = d / f"out{i}.csv"
        code, text, _ = run(capsys, *argv, "--config", cfg, "--out", out)
        assert code == 0
        blobs.append((out.read_bytes(), text.replace(str(out), "OUT")))
    assert blobs[0] == blobs[1]


def test_console_script_is_installed(config):
    res = subprocess.run(["irs-uplink", "validate", "--config", str(config)],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert "status: ok" in res.stdout
