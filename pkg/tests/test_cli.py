import csv
import json

import pytest

from fogaccess.cli import main


@pytest.fixture()
def ini(tmp_path):
    assert main(["preset", "desk", "-o", str(tmp_path)]) == 0
    return tmp_path / "desk.ini"


SMALL = ["scenario.users_per_cell=8", "scenario.pilot_length=16", "experiment.trials=1",
         "experiment.sweep_values=1", "experiment.n_co=1"]


def test_preset_writes_both(tmp_path):
    assert main(["preset", "-o", str(tmp_path)]) == 0
    assert (tmp_path / "full.ini").exists() and (tmp_path / "desk.ini").exists()


def test_run(ini, tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["run", str(ini), *SMALL, "-o", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "results.csv")))
    assert [r["deployment"] for r in rows] == ["cloud", "fog_nco1", "baseline"]
    assert "wrote" in capsys.readouterr().out


def test_trace_fog(ini, tmp_path):
    out = tmp_path / "tr"
    assert main(["trace", str(ini), *SMALL, "-o", str(out), "-d", "fog_nco1"]) == 0
    for name in ("trace.csv", "messages.csv", "scenario.npz", "summary.json"):
        assert (out / name).exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["deployment"] == "fog_nco1"


def test_trace_cloud(ini, tmp_path):
    out = tmp_path / "tc"
    assert main(["trace", str(ini), *SMALL, "-o", str(out)]) == 0
    assert (out / "trace.csv").read_text().startswith("iter,residual,mean_pi,sigma_est")


def test_exit_codes(ini, tmp_path, monkeypatch):
    assert main(["run", str(ini), "scenario.bogus=1"]) == 1
    assert main(["run", str(tmp_path / "missing.ini")]) == 3
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", str(ini), *SMALL, "-o", str(blocker / "x")]) == 3

    import fogaccess.amp as amp
    monkeypatch.setattr(amp, "DIVERGENCE_RATIO", 0.0)
    assert main(["run", str(ini), *SMALL, "-o", str(tmp_path / "d")]) == 2
