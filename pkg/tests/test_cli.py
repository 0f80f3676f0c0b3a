import csv
import json

import numpy as np
import pytest

from ssmrom.cli import main, write_table
from ssmrom.io import read_json

CONFIG = {
    "model": {"n_masses": 2, "springs": [1, 2.6, 1], "cubic": [1, 0, 0], "damping": [0.01, 0.05]},
    "chart": {"modes": [0], "style": "modal-complex", "orders": [3, 5]},
    "training": {"amplitude": 1.0, "n_periods": 28},
    "forcing": {"f0": [1, 0], "eps": [0.01], "Omega_range": [0.9, 1.1], "n_validate": 2, "cycles": 30},
    "out": "out",
    "seed": 0,
}


def _write(path, cfg):
    path.write_text(json.dumps(cfg))
    return str(path)


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = _write(d / "cfg.json", CONFIG)
    codes = {c: main([c, "--config", cfg]) for c in ("eig", "generate", "fit", "predict", "validate")}
    return d / "out", codes


def test_pipeline_stages_succeed(run):
    out, codes = run
    assert all(v == 0 for v in codes.values())
    for stage in codes:
        assert (out / f"config.{stage}.json").exists()
    snap = read_json(out / "config.fit.json")
    assert snap["seed"] == 0 and snap["chart"]["orders"] == [3, 5]


def test_spectrum_output(run):
    out, _ = run
    rows = _rows(out / "spectrum.csv")
    assert len(rows) == 2
    assert float(rows[0]["omega_rad_s"]) == pytest.approx(np.sqrt(1 - 0.25 * 0.06**2), rel=1e-10)
    assert read_json(out / "spectrum.json")["proportional"] is True


def test_fit_outputs(run):
    out, _ = run
    rep = read_json(out / "fit_report.json")
    assert rep["heldout_nmte"] <= 10.0 and rep["order"] == 3
    assert rep["orthogonality"] <= 1e-10
    sweep = _rows(out / "fit_sweep.csv")
    assert [int(r["order"]) for r in sweep] == [3]


def test_predict_and_validate_outputs(run):
    out, _ = run
    frc = _rows(out / "frc_0.csv")
    assert {"Omega", "Omega_Hz", "amp", "phase", "stable", "rho1", "psi1"} <= set(frc[0])
    om = np.array([float(r["Omega"]) for r in frc])
    assert om.min() >= 0.9 * 0.99 and om.max() <= 1.1 * 1.0
    assert (out / "backbone.csv").exists()
    assert any(p.name.startswith("pred_") for p in out.iterdir())
    val = _rows(out / "validation.csv")
    assert len(val) == 2
    assert max(abs(float(r["rel_err"])) for r in val) < 0.03


def test_config_errors_exit_2(tmp_path, capsys):
    bad = dict(CONFIG, chart={"modes": [0], "style": "diagonal"})
    assert main(["eig", "--config", _write(tmp_path / "a.json", bad)]) == 2
    assert main(["eig", "--config", str(tmp_path / "missing.json")]) == 2
    extra = dict(CONFIG, colour="red")
    assert main(["eig", "--config", _write(tmp_path / "b.json", extra)]) == 2
    fresh = dict(CONFIG, out="fresh")
    assert main(["predict", "--config", _write(tmp_path / "c.json", fresh)]) == 2
    assert "config error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["eig"])


def test_numerical_failure_exit_3(tmp_path):
    undamped = dict(CONFIG, model=dict(CONFIG["model"], damping=[0.0, 0.0]))
    assert main(["eig", "--config", _write(tmp_path / "u.json", undamped)]) == 3


def test_flags_override_config(tmp_path):
    cfg = _write(tmp_path / "cfg.json", CONFIG)
    assert main(["eig", "--config", cfg, "--out", str(tmp_path / "other"), "--seed", "4"]) == 0
    assert read_json(tmp_path / "other" / "config.eig.json")["seed"] == 4


def test_write_table_is_exact(tmp_path):
    x = np.array([0.1, 1 / 3, np.pi * 1e-20])
    write_table(tmp_path / "t.csv", {"i": np.arange(3), "x": x, "short": [1.5]})
    rows = _rows(tmp_path / "t.csv")
    assert [float(r["x"]) for r in rows] == list(x)
    assert rows[0]["i"] == "0" and rows[1]["short"] == ""
