import csv
import hashlib
import json
from pathlib import Path

import pytest

from swipt_dps import cli
from swipt_dps.region import RERegion, sweep_region

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMOKE = str(CONFIGS / "smoke.yaml")


def manifest(d):
    return json.loads((Path(d) / "manifest.json").read_text())


def test_region_four_csir_curves(tmp_path):
    out = tmp_path / "r"
    argv = ["region", "--config", SMOKE, "--case", "csir",
            "--schemes", "optimal,suboptimal,linear,modeswitch", "--out", str(out)]
    assert cli.main(argv) == 0
    path = out / "region_csir_snr10dB.csv"
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert {r["scheme"] for r in rows} == {"optimal", "suboptimal", "linear", "modeswitch"}
    first = path.read_bytes()
    assert cli.main(argv) == 0
    assert path.read_bytes() == first


def test_default_config_six_files(tmp_path):
    argv = ["region", "--config", str(CONFIGS / "default.yaml"), "--n-states", "24",
            "--q-points", "2", "--out", str(tmp_path)]
    assert cli.main(argv) == 0
    csvs = sorted(p.name for p in tmp_path.glob("region_*.csv"))
    assert len(csvs) == 6
    assert "region_csi_snr20dB.csv" in csvs
    m = manifest(tmp_path)
    listed = {f["path"] for f in m["files"]}
    on_disk = {p.name for p in tmp_path.iterdir() if p.name != "manifest.json"}
    assert listed == on_disk
    for f in m["files"]:
        assert f["sha256"] == hashlib.sha256((tmp_path / f["path"]).read_bytes()).hexdigest()
    assert m["status"] == "ok" and "numpy" in m["versions"]


def test_env_var_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert cli.main(["region", "--config", SMOKE, "--case", "csir"]) == 0
    assert (tmp_path / "env" / "region_csir_snr10dB.csv").is_file()


def test_manifest_keeps_earlier_outputs(tmp_path):
    assert cli.main(["region", "--config", SMOKE, "--case", "csir", "--out", str(tmp_path)]) == 0
    assert cli.main(["qmax", "--config", SMOKE, "--out", str(tmp_path)]) == 0
    listed = {f["path"] for f in manifest(tmp_path)["files"]}
    assert {"qmax.csv", "region_csir_snr10dB.csv", "region_csir_snr10dB.json"} <= listed


def test_bad_config_exit_2(tmp_path):
    assert cli.main(["qmax", "--config", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("not_a_key: 1\n")
    assert cli.main(["qmax", "--config", str(bad)]) == 2
    bad.write_text("seed: [unclosed\n")
    assert cli.main(["qmax", "--config", str(bad)]) == 2
    assert cli.main(["region", "--config", SMOKE, "--case", "csir", "--schemes", "binary",
                     "--out", str(tmp_path)]) == 2


def test_solver_error_exit_3(tmp_path, monkeypatch):
    def broken(name, ens, n, eh, sys, case="csir", workers=1):
        return RERegion([], name, case, {}, [{"q_target": 0.0, "error": "NonConvergence",
                                              "message": "boom"}])
    monkeypatch.setattr(cli, "sweep_region", broken)
    assert cli.main(["region", "--config", SMOKE, "--case", "csir", "--out", str(tmp_path)]) == 3
    m = manifest(tmp_path)
    assert m["status"] == "failed" and m["errors"][0]["error"] == "NonConvergence"
    assert {f["status"] for f in m["files"]} == {"partial"}


def test_solve_and_qmax(tmp_path, capsys):
    assert cli.main(["solve", "--config", SMOKE, "--case", "csi", "--q-fraction", "0.5",
                     "--policy"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["case"] == "csi" and len(out["p"]) == 16
    assert abs(out["achieved_q"] - 0.5 * out["q_max"]) <= 1e-9 * out["q_max"]
    assert cli.main(["qmax", "--config", SMOKE]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "snr_db,q_max_csir,q_max_csi" and len(lines) == 2


def test_oracle_check_reports_and_fails_on_bad_tolerance(tmp_path):
    good = tmp_path / "good"
    assert cli.main(["oracle-check", "--config", SMOKE, "--case", "csir",
                     "--out", str(good)]) == 0
    with open(good / "oracle_report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5
    assert max(float(r["rel_dev"]) for r in rows) <= cli.ORACLE_TOL
    bad = tmp_path / "bad"
    assert cli.main(["oracle-check", "--config", SMOKE, "--case", "csir", "--solver-tol", "0.2",
                     "--out", str(bad)]) == 1
    assert manifest(bad)["status"] == "failed"


@pytest.mark.slow
def test_oracle_check_smoke_runtime(tmp_path):
    import time
    t0 = time.perf_counter()
    assert cli.main(["oracle-check", "--config", SMOKE, "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - t0 < 30
