import json
from pathlib import Path

import numpy as np
import pytest

from fcmloc.cli import main
from fcmloc.ingest import FlightLog, save_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SHORT = """
name = "short"
seed = 3
duration = 3.0
[program]
segments = [{ duration = 3.0, position = [0.5, 0.0, -0.5] }]
[detector]
mvw = 0.2
m_window = 0.2
"""

MANIFEST = """
[[flights]]
name = "nom"
label = "non-LOC"
generator = { seed = 5, growth_rate = 0.0, stop_after = 0.6 }

[[flights]]
name = "loc"
label = "yaw-maneuver"
generator = { seed = 6, crash_offset = 1.6, onset_delay = 0.3 }
"""


@pytest.fixture
def short_toml(tmp_path):
    p = tmp_path / "short.toml"
    p.write_text(SHORT)
    return p


@pytest.fixture
def manifest(tmp_path):
    p = tmp_path / "manifest.toml"
    p.write_text(MANIFEST)
    return p


def hover_csv(path):
    n = 1000
    log = FlightLog(np.arange(n) / 500, np.zeros((n, 3)), np.full((n, 4), 700.0))
    save_csv(log, path)
    return path


def test_sim_writes_reproducible_outputs(short_toml, tmp_path, capsys):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["sim", "--scenario", str(short_toml), "--out", str(out)]) == 0
    for name in ("detection.json", "log.csv", "trajectory.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    data = json.loads((outs[0] / "detection.json").read_text())
    assert data["detection_time_s"] is None and data["seed"] == 3
    assert data["config"]["mvw"] == 0.2 and data["scenario"]["name"] == "short"
    assert (outs[0] / "trajectory.csv").read_text().startswith("# {")


def test_sim_seed_override(short_toml, tmp_path):
    assert main(["sim", "--scenario", str(short_toml), "--seed", "9", "--out",
                 str(tmp_path / "s")]) == 0
    assert json.loads((tmp_path / "s" / "detection.json").read_text())["seed"] == 9


def test_missing_scenario(tmp_path, capsys):
    missing = tmp_path / "nowhere.toml"
    assert main(["sim", "--scenario", str(missing)]) == 2
    assert "nowhere.toml" in capsys.readouterr().err


def test_bad_toml(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("name = [unclosed\n")
    assert main(["sim", "--scenario", str(p)]) == 2
    p.write_text("[quad]\nwingspan = 2.0\n")
    assert main(["sim", "--scenario", str(p)]) == 2


def test_divergence_exit_code(tmp_path, capsys):
    p = tmp_path / "div.toml"
    p.write_text('duration = 5.0\n[gains]\nrate_kp = [-80.0, -80.0, -80.0]\n')
    assert main(["sim", "--scenario", str(p), "--out", str(tmp_path / "d")]) == 3
    assert "diverged" in capsys.readouterr().err


def test_detect_constant_hover(tmp_path, capsys):
    log = hover_csv(tmp_path / "hover.csv")
    out = tmp_path / "det.json"
    assert main(["detect", "--log", str(log), "--mvw", "1.0", "--cf", "30", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["detection_time_s"] is None and data["config"]["b_only"] is True


def test_detect_erpm_recorded(tmp_path, capsys):
    log = hover_csv(tmp_path / "hover.csv")
    assert main(["detect", "--log", str(log), "--erpm"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["log"]["metadata"]["rotor_unit_conversion"]["from"] == "eRPM"


def test_detect_missing_log(tmp_path):
    assert main(["detect", "--log", str(tmp_path / "none.csv")]) == 2


def test_detect_generated_loc_log(tmp_path, capsys):
    from fcmloc.ingest import generate_synthetic_yaw_loc
    f = generate_synthetic_yaw_loc(6)
    save_csv(f.log, tmp_path / "loc.csv")
    assert main(["detect", "--log", str(tmp_path / "loc.csv"), "--mvw", "1.0", "--cf", "30"]) == 0
    det = json.loads(capsys.readouterr().out)["detection_time_s"]
    assert det is not None and det > f.onset


def test_sweep_one_cell(manifest, tmp_path, capsys):
    out = tmp_path / "sw"
    args = ["sweep", "--dataset", str(manifest), "--mvw", "1.0", "--cf", "30",
            "--select-optimum", "--out", str(out)]
    assert main(args) == 0
    text = capsys.readouterr().out
    assert "optimum: MVW=1 s CF=30 Hz" in text
    first = (out / "report.json").read_bytes()
    assert len(json.loads(first)["cells"]) == 1
    assert main(args) == 0
    assert (out / "report.json").read_bytes() == first


def test_sweep_empty_grid(manifest, tmp_path):
    assert main(["sweep", "--dataset", str(manifest), "--mvw", "", "--out",
                 str(tmp_path / "e")]) == 2


def test_sweep_bad_manifest(tmp_path):
    p = tmp_path / "m.toml"
    p.write_text("[[flights]]\nlabel = 'non-LOC'\n")
    assert main(["sweep", "--dataset", str(p), "--out", str(tmp_path / "x")]) == 2


def test_compare(manifest, tmp_path, capsys):
    assert main(["compare", "--dataset", str(manifest), "--out", str(tmp_path / "c")]) == 0
    data = json.loads((tmp_path / "c" / "comparison.json").read_text())
    assert data["seed"] == 0 and len(data["flights"]) == 2


def test_shipped_configs_parse():
    from fcmloc.config import load_scenario, read_toml
    for name in ("nominal.toml", "fault.toml"):
        sc, det, _ = load_scenario(CONFIGS / name)
        assert det["mvw"] == 0.2
    assert load_scenario(CONFIGS / "fault.toml")[0].faults[0].rotor == 3
    assert read_toml(CONFIGS / "synthetic_dataset.toml")["synthetic"]["n_loc"] >= 30


def test_log_level_env(monkeypatch, short_toml, tmp_path):
    monkeypatch.setenv("FCM_LOG_LEVEL", "debug")
    assert main(["sim", "--scenario", str(short_toml), "--out", str(tmp_path / "l")]) == 0
