import json
import math
import os

import pytest

import slagflow.experiment as experiment
import slagflow.flow as flow
from slagflow.cli import main
from slagflow.experiment import load_config, read_series
from slagflow.flow import SERIES_COLUMNS

TORUS_MODE = """
[base]
kind = "torus"
n = 2
resolution = 32

[initial]
kind = "mode"
amplitude = 1e-3
mode = [1, 0]

[flow]
t_end = {t_end}
monitor_every = 5
residual_check_every = 10

[output]
directory = "{directory}"
snapshot_every = 20
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def torus_config(tmp_path, t_end=0.1, directory="torus"):
    return write(tmp_path, TORUS_MODE.format(t_end=t_end, directory=directory))


def test_zero_run(tmp_path, capsys):
    cfg = write(tmp_path, '[base]\nkind = "sphere"\nresolution = 48\n[initial]\nkind = "zero"\n'
                          '[output]\ndirectory = "z"\n')
    assert main(["--out", str(tmp_path), "run", cfg]) == 0
    rows = read_series(tmp_path / "z" / "series.csv")
    assert all(r["max_chi"] == 1.0 and r["max_vartheta"] == 0.0 for r in rows)
    cert = json.loads((tmp_path / "z" / "certificate.json").read_text())
    assert cert["status"] == "PASS"


def test_run_artifacts(tmp_path):
    cfg = torus_config(tmp_path)
    assert main(["--out", str(tmp_path / "o"), "run", cfg]) == 0
    out = tmp_path / "o" / "torus"
    header = (out / "series.csv").read_text().splitlines()[0]
    assert header.split(",") == list(SERIES_COLUMNS)
    rows = read_series(out / "series.csv")
    assert all(math.isfinite(v) for r in rows for v in r.values())
    assert (out / "residuals.csv").exists()
    snaps = sorted(os.listdir(out / "snapshots"))
    assert "final.json" in snaps and "snapshot_00000.json" in snaps
    doc = json.loads((out / "snapshots" / "final.json").read_text())
    assert doc["header"]["config"]["base"]["kind"] == "torus"
    assert len(doc["u"]["0"]) == 32 and len(doc["u"]["0"][0]) == 32
    # 17 significant digits in the body
    body = (out / "snapshots" / "final.json").read_text().split('"u": ', 1)[1]
    assert any(len(tok.strip("[] -").replace(".", "").split("e")[0].lstrip("0")) >= 15
               for tok in body.split(",")[:20])


def test_runs_are_byte_identical(tmp_path):
    cfg = torus_config(tmp_path)
    for out in ("a", "b"):
        assert main(["--out", str(tmp_path / out), "run", cfg]) == 0
    a = (tmp_path / "a" / "torus" / "series.csv").read_bytes()
    assert a == (tmp_path / "b" / "torus" / "series.csv").read_bytes()


def test_cfl_violation_exits_2(tmp_path, capsys):
    cfg = write(tmp_path, TORUS_MODE.format(t_end=0.1, directory="x").replace("monitor_every", "cfl = 0.9\nmonitor_every"))
    assert main(["--out", str(tmp_path), "run", cfg]) == 2
    assert "cfl" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


@pytest.mark.parametrize("text", [
    '[base]\nkind = "torus"\ncolour = 1\n',
    '[extra]\nx = 1\n',
    '[base]\nresolution = "many"\n',
    '[base]\nkind = "plane"\n',
    '[initial]\nkind = "mode"\nmode = [5, 0]\n',
    'not toml at all ===',
])
def test_bad_config_exits_2(tmp_path, capsys, text):
    cfg = write(tmp_path, text)
    assert main(["--out", str(tmp_path), "run", cfg]) == 2
    assert "precondition failed" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path):
    assert main(["--out", str(tmp_path), "run", str(tmp_path / "nope.toml")]) == 2


def test_solver_abort_exits_3(tmp_path, monkeypatch):
    def fake_run(config, **kwargs):
        atlas = config.build_atlas()
        raise flow.SolverAbort("forced", flow.MonitorSeries(), atlas.zeros())

    monkeypatch.setattr(experiment, "run", fake_run)
    cfg = torus_config(tmp_path)
    assert main(["--out", str(tmp_path), "run", cfg]) == 3
    assert (tmp_path / "torus" / "snapshots" / "abort_diagnostic.json").exists()


def test_config_defaults_and_sweep_override(tmp_path):
    exp = load_config(torus_config(tmp_path))
    assert exp.flow.cfl == 0.2 and exp.flow.epsilon == 0.1 and exp.flow.p_exponent == 1.0
    other = exp.with_param("resolution", 48.0)
    assert other.flow.resolution == 48 and exp.flow.resolution == 32


def test_sweep_amplitude(tmp_path, monkeypatch):
    monkeypatch.setenv("SLAGFLOW_THREADS", "1")
    cfg = torus_config(tmp_path, t_end=0.5, directory="sw")
    code = main(["--out", str(tmp_path), "sweep", cfg, "--param", "amplitude", "--values", "1e-3,2e-3,4e-3"])
    assert code == 0
    root = tmp_path / "sw"
    assert sorted(p.name for p in root.iterdir() if p.is_dir()) == ["amplitude_1e-3", "amplitude_2e-3",
                                                                    "amplitude_4e-3"]
    for d in root.iterdir():
        if d.is_dir():
            assert json.loads((d / "certificate.json").read_text())["status"] == "PASS"
    lines = (root / "sweep_amplitude.csv").read_text().splitlines()
    assert lines[0].startswith("amplitude,") and len(lines) == 4


def test_sweep_continues_past_failure(tmp_path, monkeypatch):
    monkeypatch.setenv("SLAGFLOW_THREADS", "2")
    cfg = torus_config(tmp_path, directory="sw")
    code = main(["--out", str(tmp_path), "sweep", cfg, "--param", "resolution", "--values", "8,32"])
    assert code == 1
    lines = (tmp_path / "sw" / "sweep_resolution.csv").read_text().splitlines()
    assert lines[1].startswith("8.0,2,PRECONDITION_FAILED")
    assert lines[2].startswith("32.0,0,")


def test_sweep_rejects_unknown_param(tmp_path):
    with pytest.raises(SystemExit):
        main(["sweep", torus_config(tmp_path), "--param", "cfl", "--values", "0.1"])


def test_worker_limit(monkeypatch):
    monkeypatch.setenv("SLAGFLOW_THREADS", "3")
    assert experiment.worker_limit() == 3
    monkeypatch.setenv("SLAGFLOW_THREADS", "zero")
    assert experiment.worker_limit() >= 1


@pytest.mark.parametrize("suite", ["angle", "oracle_cases", "commutation"])
def test_verify_passes(tmp_path, capsys, suite):
    assert main(["--out", str(tmp_path), "verify", suite]) == 0
    assert f"verify {suite}: PASS" in capsys.readouterr().out


def test_verify_failure_names_check(tmp_path, capsys, monkeypatch):
    from slagflow import verify

    monkeypatch.setitem(verify.SUITES, "angle", lambda: [verify.Check("first", 1.0, 0.5, True),
                                                         verify.Check("broken thing", 2.0, 1.0, False)])
    assert main(["verify", "angle"]) == 1
    assert "broken thing" in capsys.readouterr().err
