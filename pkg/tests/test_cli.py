import os

import pytest

from rescale.cli import EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from rescale.output import read_csv

SMALL = "run.T_end = 300\nrun.checkpoints = 25, 100, 300\noutput.events = 50\n"


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_simulate_writes_contract_files(tmp_path, capsys):
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", write(tmp_path, SMALL), "--out", out, "--seed", "4,5,6"]) == EXIT_OK
    files = set(os.listdir(out))
    assert {"resolved.cfg", "trace.csv", "events.csv", "hist_25.csv", "hist_300.csv"} <= files
    cols, data, meta = read_csv(os.path.join(out, "trace.csv"))
    assert cols == ["time", "rebirths", "tv", "dw", "wall_ms"]
    assert data[:, 0].tolist() == [0.0, 25.0, 100.0, 300.0]
    assert meta["schema"] == "rescale/trace v1"
    cols, data, _ = read_csv(os.path.join(out, "hist_300.csv"))
    assert cols == ["bin_lo", "bin_hi", "mass"] and abs(data[:, 2].sum() - 1) < 1e-12
    cols, data, _ = read_csv(os.path.join(out, "events.csv"))
    assert cols == ["kill_time", "pre_theta", "rebirth_theta"] and len(data) == 50
    assert "seed.diffusion = 4" in open(os.path.join(out, "resolved.cfg")).read()
    with open(os.path.join(out, "trace.csv")) as fh:
        line = fh.read().splitlines()[-1]
    assert len(line.split(",")[2].replace("0.", "", 1)) >= 15


def test_replay_detects_identity_and_tampering(tmp_path):
    out = str(tmp_path / "out")
    cfg = write(tmp_path, SMALL)
    assert main(["simulate", "--config", cfg, "--out", out]) == EXIT_OK
    assert main(["replay", "--config", cfg, "--out", out]) == EXIT_OK
    with open(os.path.join(out, "hist_25.csv"), "a") as fh:
        fh.write("x\n")
    assert main(["replay", "--config", cfg, "--out", out]) == EXIT_CHECK


def test_rerun_on_resolved_config_is_identical(tmp_path):
    a, b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["simulate", "--config", write(tmp_path, SMALL), "--out", a]) == EXIT_OK
    assert main(["replay", "--config", os.path.join(a, "resolved.cfg"), "--out", a]) == EXIT_OK
    assert main(["simulate", "--config", os.path.join(a, "resolved.cfg"), "--out", b]) == EXIT_OK
    assert open(os.path.join(a, "hist_300.csv")).read() == open(os.path.join(b, "hist_300.csv")).read()


def test_simulate_replicas(tmp_path):
    out = str(tmp_path / "out")
    assert main(["simulate", "--config", write(tmp_path, SMALL), "--out", out, "--replicas", "2"]) == EXIT_OK
    assert os.path.exists(os.path.join(out, "replica_1", "trace.csv"))
    _, data, meta = read_csv(os.path.join(out, "trace.csv"))
    assert meta["aggregate"] == "median"


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", write(tmp_path, "weights.k = -1\n"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "weights.k" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["simulate", "--seed", "1,2", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_numerical_failure_exits_3(tmp_path):
    cfg = write(tmp_path, "kappa.mode = explicit\nkappa.field = fourier:2\nfield.A = fourier:0,10\noracle.n = 32\n")
    assert main(["oracle", "qsd", "--config", cfg, "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert os.path.exists(tmp_path / "diagnostic.txt")


def test_oracle_qsd_and_kappa_report(tmp_path, capsys):
    out = str(tmp_path)
    assert main(["oracle", "qsd", "--out", out, "--check"]) == EXIT_OK
    cols, data, meta = read_csv(os.path.join(out, "qsd.csv"))
    assert cols == ["theta", "pi_disc", "pi_analytic"] and len(data) == 200
    beta = float(open(os.path.join(out, "beta.txt")).read())
    assert 1 / 9.25 <= beta <= 52
    assert main(["kappa", "report", "--out", out, "--check"]) == EXIT_OK
    report = open(os.path.join(out, "kappa_report.txt")).read()
    assert "kappa_upper = 9.25" in report


def test_oracle_contraction(tmp_path):
    assert main(["oracle", "contraction", "--out", str(tmp_path), "--check"]) == EXIT_OK
    _, data, _ = read_csv(os.path.join(str(tmp_path), "contraction.csv"))
    assert len(data) == 80 and (data[:, 2] <= data[:, 3] + 1e-8).all()


def test_oracle_flow_short(tmp_path):
    cfg = write(tmp_path, "oracle.T = 8\noracle.n = 64\noracle.dt_flow = 0.02\n")
    code = main(["oracle", "flow", "--config", cfg, "--out", str(tmp_path), "--check"])
    assert code == EXIT_CHECK  # T = 8 is too short to reach 1e-3
    cols, data, _ = read_csv(os.path.join(str(tmp_path), "flow.csv"))
    assert cols[0] == "t" and len(cols) == 6 and data[-1, 0] == 8.0


def test_apt_check_small(tmp_path):
    cfg = write(tmp_path, "weights.r = 10\napt.base_times = 1, 2\nrun.T_end = 1\n")
    code = main(["apt-check", "--config", cfg, "--out", str(tmp_path), "--replicas", "1"])
    assert code == EXIT_OK
    cols, data, meta = read_csv(os.path.join(str(tmp_path), "apt.csv"))
    assert cols[:3] == ["base_time", "wall_time", "discrepancy"] and len(data) == 2
    assert float(meta["floor"]) > 0
