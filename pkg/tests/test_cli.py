import filecmp
import json
import math
import subprocess
import sys
import time

import numpy as np
import pytest
import yaml

from msqcd import config as cfgmod
from msqcd.cli import (InputError, calibration_alphas, detect_series, detector_config, main, read_multistream_csv,
                       write_multistream_csv)
from msqcd.detector import null_max_sample, pfa_estimate, whitened_path, replicate_rng

SMOKE = {"model": {"n_streams": 2}, "experiment": {"budget": 1000, "m_values": [1, 2]}}
OUTBREAK = {"model": {"n_streams": 8, "gamma": 1.127, "sigma": 2.4},
            "priors": {"q": 0.125},
            "detector": {"grid": [0.08, 0.11, 0.01], "alpha": 0.01, "pfa_levels": [0.1, 0.01]}}


def write_cfg(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


@pytest.fixture(scope="module")
def outbreak_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("outbreak")
    cfg = write_cfg(d / "cfg.yaml", OUTBREAK)
    assert main(["calibrate", "--config", cfg, "--out", str(d / "out")]) == 0
    return d


# --- simulate ---------------------------------------------------------------------------

def test_simulate_smoke_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path / "smoke.yaml", SMOKE)
    t0 = time.perf_counter()
    rc = subprocess.run([sys.executable, "-m", "msqcd.cli", "simulate", "--config", cfg, "--out", str(tmp_path / "a")],
                        capture_output=True, text=True)
    assert rc.returncode == 0, rc.stderr
    assert time.perf_counter() - t0 < 10
    names = ["table1.csv", "fig1_R_ptheta.csv", "fig1_R_pW.csv", "calibration.json", "resolved_config.yaml",
             "seeds.json"]
    for name in names:
        assert (tmp_path / "a" / name).exists()
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    for name in names:
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False), name
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "5"]) == 0
    assert not filecmp.cmp(tmp_path / "a" / "table1.csv", tmp_path / "c" / "table1.csv", shallow=False)


def test_resolved_config_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path / "smoke.yaml", SMOKE)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "7"]) == 0
    resolved = tmp_path / "a" / "resolved_config.yaml"
    doc = cfgmod.load(resolved)
    assert doc == yaml.safe_load(resolved.read_text()) and doc["seed"] == 7
    assert cfgmod.dump(doc) == resolved.read_text()


# --- config validation ----------------------------------------------------------------

@pytest.mark.parametrize("doc", [
    {"model": {"bogus": 1}},
    {"schema_version": 2},
    {"model": {"n_streams": "ten"}},
    {"detector": {"alpha": 1.5}},
    {"experiment": {"budget": 10}},
    {"model": {"anchor": "sideways"}},
    {"detector": {"grid": [0.1, 0.3]}},
])
def test_invalid_config_exit_2(tmp_path, doc, capsys):
    assert main(["simulate", "--config", write_cfg(tmp_path / "bad.yaml", doc), "--out", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_malformed_yaml_exit_2(tmp_path):
    (tmp_path / "bad.yaml").write_text("model: [unclosed\n")
    assert main(["simulate", "--config", str(tmp_path / "bad.yaml")]) == 2
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2


# --- calibrate ----------------------------------------------------------------------------

def test_calibrate_entries_and_idempotence(outbreak_dir):
    sidecar = outbreak_dir / "out" / "calibration.json"
    doc = json.loads(sidecar.read_text())
    A = {r["alpha"]: r["A_mc"] for r in doc["records"]}
    assert sorted(A) == [0.01, 0.1] and A[0.01] > A[0.1]
    before = sidecar.stat().st_mtime_ns
    assert main(["calibrate", "--config", str(outbreak_dir / "cfg.yaml"), "--out", str(outbreak_dir / "out")]) == 0
    assert sidecar.stat().st_mtime_ns == before


def test_calibrate_fresh_seed_reestimate(outbreak_dir):
    cfg = cfgmod.load(outbreak_dir / "cfg.yaml")
    doc = json.loads((outbreak_dir / "out" / "calibration.json").read_text())
    fresh = null_max_sample(detector_config(cfg), 10_000, seed=cfg["seed"] + 1)
    for r in doc["records"]:
        p, se = pfa_estimate(fresh, r["A_mc"])
        assert abs(p - r["pfa_hat"]) <= 3 * math.hypot(se, r["pfa_se"])


def test_calibrate_budget_guard(tmp_path):
    assert main(["calibrate", "--out", str(tmp_path), "--budget", "500"]) == 2


def test_calibration_alphas_include_alpha():
    cfg = cfgmod.resolve({"detector": {"alpha": 0.05, "pfa_levels": [0.1]}})
    assert calibration_alphas(cfg) == [0.1, 0.05]


# --- detect ---------------------------------------------------------------------------

def test_detect_zero_series_no_alarm(outbreak_dir, capsys):
    path = outbreak_dir / "zeros.csv"
    write_multistream_csv(path, np.zeros((8, 1000)))
    out = outbreak_dir / "out"
    assert main(["detect", "--config", str(outbreak_dir / "cfg.yaml"), "--csv", str(path), "--out", str(out)]) == 0
    rep = json.loads((out / "detection.json").read_text())
    assert rep["alarm"] is False and rep["n_rows"] == 1000
    assert "no alarm" in capsys.readouterr().out
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "row,t,R_pW,log_R_pW" and len(lines) == 1001


def test_detect_injected_signal(outbreak_dir):
    cfg = cfgmod.load(outbreak_dir / "cfg.yaml")
    dc = detector_config(cfg)
    A = next(r["A_mc"] for r in json.loads((outbreak_dir / "out" / "calibration.json").read_text())["records"]
             if r["alpha"] == 0.01)
    delays = []
    for j in range(30):
        rng = replicate_rng(99, j)
        X = (whitened_path(dc.model, 60, range(8), 0.1, 200, rng)).T
        path = outbreak_dir / f"inj{j}.csv"
        write_multistream_csv(path, X, [f"2021-{1 + d // 28:02d}-{1 + d % 28:02d}" for d in range(200)])
        out = outbreak_dir / f"o{j}"
        (out).mkdir()
        (out / "calibration.json").write_bytes((outbreak_dir / "out" / "calibration.json").read_bytes())
        assert main(["detect", "--config", str(outbreak_dir / "cfg.yaml"), "--csv", str(path), "--out",
                     str(out)]) == 0
        rep = json.loads((out / "detection.json").read_text())
        alarm, _ = detect_series(X, dc, A)
        assert rep["alarm_row"] == alarm and rep["threshold"] == A
        if alarm is not None and alarm >= 60:
            delays.append(alarm + 1 - 60)
    assert len(delays) >= 25 and 5 <= np.mean(delays) <= 20


def test_detect_n_mismatch_exit_2(outbreak_dir, capsys):
    path = outbreak_dir / "three.csv"
    write_multistream_csv(path, np.zeros((3, 10)))
    assert main(["detect", "--config", str(outbreak_dir / "cfg.yaml"), "--csv", str(path),
                 "--out", str(outbreak_dir / "out")]) == 2
    assert "3 streams" in capsys.readouterr().err


def test_detect_requires_csv(tmp_path):
    assert main(["detect", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("text,msg", [
    ("", "empty"),
    ("x,stream_1\n1,2\n", "header"),
    ("t,stream_1\n1,2,3\n", "row 2"),
    ("t,stream_1\n1,abc\n", "row 2, column 2"),
    ("t,stream_1\n1,nan\n", "non-finite"),
    ("t,stream_1\n2,1\n1,1\n", "strictly increasing"),
    ("t,stream_1\n", "no data"),
])
def test_csv_errors(tmp_path, text, msg):
    path = tmp_path / "s.csv"
    path.write_text(text)
    with pytest.raises(InputError, match=msg):
        read_multistream_csv(path)


def test_csv_roundtrip(tmp_path, rng):
    X = rng.standard_normal((3, 12))
    write_multistream_csv(tmp_path / "s.csv", X)
    labels, Y = read_multistream_csv(tmp_path / "s.csv", 3)
    assert labels == [str(i) for i in range(1, 13)] and np.array_equal(X, Y)


# --- streak -----------------------------------------------------------------------------

def test_streak_synthetic(tmp_path, capsys):
    out = tmp_path / "s"
    assert main(["streak", "--synthetic", "--out", str(out)]) == 0
    rep = json.loads((out / "streak_report.json").read_text())
    assert rep["detected"]
    assert abs(rep["start_row"] - 40) <= 3 and abs(rep["end_row"] - 110) <= 3
    assert (out / "synthetic_frame.bin").exists() and (out / "streak_trajectory.csv").exists()
    assert "streak detected" in capsys.readouterr().out
    # the written frame is a valid input to the same command
    assert main(["streak", "--frame", str(out / "synthetic_frame.bin"), "--out", str(tmp_path / "again")]) == 0
    again = json.loads((tmp_path / "again" / "streak_report.json").read_text())
    assert again["start_row"] == rep["start_row"]


def test_streak_noise_frame(tmp_path, capsys):
    from msqcd.streak2d import write_frame
    write_frame(tmp_path / "noise.bin", np.random.default_rng(3).standard_normal((160, 64)))
    assert main(["streak", "--frame", str(tmp_path / "noise.bin"), "--out", str(tmp_path / "o")]) == 0
    assert json.loads((tmp_path / "o" / "streak_report.json").read_text())["detected"] is False
    assert "no streak" in capsys.readouterr().out


def test_streak_input_errors(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOTAFRAM" + bytes(8))
    assert main(["streak", "--frame", str(tmp_path / "bad.bin"), "--out", str(tmp_path)]) == 2
    from msqcd.streak2d import write_frame
    write_frame(tmp_path / "small.bin", np.zeros((10, 64)))
    assert main(["streak", "--frame", str(tmp_path / "small.bin"), "--out", str(tmp_path)]) == 2
    assert main(["streak", "--out", str(tmp_path)]) == 2
    assert main(["streak", "--frame", str(tmp_path / "missing.bin"), "--out", str(tmp_path)]) == 2
