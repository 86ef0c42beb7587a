import json
import logging
import math
import subprocess
import sys

import pytest

from hcgas.cli import main, read_config_file
from hcgas.errors import ConfigError
from hcgas.outputs import read_csv, sidecar_path
from hcgas.stats import TailReport, write_tail_reports
from hcgas.logreal import LogReal


def run(tmp_path, *args):
    return main([*args, "--cache", str(tmp_path / "cache")])


def test_partition_row_and_cache(tmp_path, caplog):
    out = tmp_path / "z.csv"
    with caplog.at_level(logging.INFO, logger="hcgas"):
        assert run(tmp_path, "partition", "--beta", "1", "--n-max", "2", "--out", str(out)) == 0
    assert any("built" in r.message for r in caplog.records)
    rows = read_csv(out)
    e = math.exp(-1)
    assert float(rows[2]["logZ"]) == pytest.approx(math.log(3 * e / (4 - e)), abs=1e-14)
    first = out.read_bytes()
    caplog.clear()
    with caplog.at_level(logging.INFO, logger="hcgas"):
        assert run(tmp_path, "partition", "--beta", "1", "--n-max", "2", "--out", str(out)) == 0
    assert any("loaded" in r.message for r in caplog.records)
    assert out.read_bytes() == first
    meta = json.loads(sidecar_path(out).read_text())
    assert meta["command"] == "partition"
    assert meta["config"]["beta"] == 1.0 and meta["config"]["n_max"] == 2
    assert len(meta["cache_checksums"]) == 1 and len(meta["cache_checksums"][0]) == 64
    assert "build_id" in meta and "wall_time_s" in meta


def test_resource_exit(tmp_path):
    assert run(tmp_path, "partition", "--beta", "1", "--n-max", "100000") == 3


def test_config_exit(tmp_path):
    assert run(tmp_path, "tail-scan", "--n", "64", "--beta", "1", "--R", "2",
               "--alpha-grid", "1", "--replicas", "0") == 2
    assert main(["tail-scan", "--n", "64"]) == 2
    assert run(tmp_path, "variance-scan", "--n", "64", "--beta", "1", "--R-grid", "9") == 2


def test_sample_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert run(tmp_path, "sample", "--n", "20", "--beta", "1", "--replicas", "3",
                   "--seed", "5", "--out", str(p)) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = read_csv(a)
    assert len(rows) == 60 and list(rows[0]) == ["replica", "index", "x", "y"]
    assert b"\r\n" in a.read_bytes()


def test_tail_scan_and_fit(tmp_path):
    out = tmp_path / "t.csv"
    assert run(tmp_path, "tail-scan", "--n", "256", "--beta", "1", "--R", "3",
               "--alpha-grid", "0.5,1,1.5", "--replicas", "2000", "--out", str(out)) == 0
    rows = read_csv(out)
    assert [float(r["alpha"]) for r in rows] == [0.5, 1.0, 1.5]


def test_jlm_fit_synthetic(tmp_path):
    files = []
    for R in (2.0, 4.0, 8.0, 16.0):
        f = tmp_path / f"tail_R{R}.csv"
        write_tail_reports(f, [TailReport(R ** 2, LogReal.from_log(-R ** 2), 0.0, 1000, "naive",
                                          R=R, alpha=2.0)])
        files.append(str(f))
    out = tmp_path / "fit.csv"
    assert main(["jlm-fit", *files, "--out", str(out)]) == 0
    assert float(read_csv(out)[0]["slope"]) == pytest.approx(2.0, abs=1e-9)
    assert main(["jlm-fit", str(tmp_path / "missing.csv")]) == 2


def test_overcrowd(tmp_path):
    out = tmp_path / "o.csv"
    assert run(tmp_path, "overcrowd", "--n", "2", "--beta", "1", "--j", "2",
               "--out", str(out)) == 0
    assert float(read_csv(out)[0]["p"]) == pytest.approx(math.exp(-2) / 256, rel=1e-12)
    assert run(tmp_path, "overcrowd", "--n", "2", "--beta", "1", "--j", "1",
               "--mode", "monte-carlo", "--replicas", "0") == 2


def test_validate_exit_codes(tmp_path):
    out = tmp_path / "v.csv"
    assert run(tmp_path, "validate", "--mcmc-samples", "100000", "--out", str(out)) == 0
    meta = json.loads(sidecar_path(out).read_text())
    assert meta["results"]["agree"] is True
    assert run(tmp_path, "validate", "--mcmc-samples", "100000", "--corrupt",
               "--out", str(out)) == 5


def test_tilt_estimate(tmp_path):
    out = tmp_path / "tilt.csv"
    assert run(tmp_path, "tilt-estimate", "--n", "256", "--beta", "1", "--R", "3",
               "--alpha", "1.5", "--replicas", "1000", "--out", str(out)) == 0
    row = read_csv(out)[0]
    assert row["estimator"] == "tilted" and float(row["ess"]) > 0 and ";" in row["xi"]
    assert run(tmp_path, "tilt-estimate", "--n", "256", "--beta", "1", "--R", "3",
               "--alpha", "1.5", "--depth", "1", "--replicas", "10") == 2


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# sample run\nn = 10\nbeta = 1.0\nreplicas = 4\nseed = 3\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(tmp_path, "sample", "--config", str(cfg), "--out", str(a)) == 0
    assert len(read_csv(a)) == 40
    assert run(tmp_path, "sample", "--config", str(cfg), "--replicas", "2", "--out", str(b)) == 0
    assert len(read_csv(b)) == 20
    meta = json.loads(sidecar_path(b).read_text())
    assert meta["config"]["replicas"] == 2 and meta["seed"] == 3
    bad = tmp_path / "bad.cfg"
    bad.write_text("just words\n")
    with pytest.raises(ConfigError):
        read_config_file(bad)
    assert run(tmp_path, "sample", "--config", str(bad)) == 2


def test_console_script(tmp_path):
    r = subprocess.run([sys.executable, "-m", "hcgas.cli", "--version"], capture_output=True,
                       text=True)
    assert r.returncode == 0 and "0.1.0" in r.stdout
