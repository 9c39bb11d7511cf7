import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from vrfb import io as vio
from vrfb.cli import main, parse_run_config, ConfigError, RunConfig
from vrfb.physics import CellParameters
from vrfb.sampling import LabeledSet

SMALL_CFG = {"grid": {"nx_per_side": 10, "ny": 24},
             "soc_grid": {"start": 0.15, "stop": 0.75, "num": 3}}
TINY_TRAIN = {"width": 4, "depth": 2, "adam_iters": 4, "lbfgs_iters": 2,
              "log_every": 1}


def write_cfg(tmp_path, extra=None, name="cfg.json"):
    cfg = dict(SMALL_CFG)
    if extra:
        cfg.update(extra)
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# ------------------------------------------------------------------ config

def test_parse_default_config():
    cfg = parse_run_config(None)
    assert cfg.cell == CellParameters()
    assert cfg.grid.nx_per_side == 20
    assert len(cfg.soc_grid) == 15


def test_parse_config_field_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"celll": {}}')
    with pytest.raises(ConfigError, match="'celll'"):
        parse_run_config(p)
    p.write_text('{"cell": {"bogus_param": 1}}')
    with pytest.raises(ConfigError, match="cell.bogus_param"):
        parse_run_config(p)
    p.write_text('{"train": {"momentum": 0.9}}')
    with pytest.raises(ConfigError, match="train.momentum"):
        parse_run_config(p)
    p.write_text('{"soc_grid": []}')
    with pytest.raises(ConfigError, match="soc_grid"):
        parse_run_config(p)
    p.write_text('not json')
    with pytest.raises(ConfigError, match="valid JSON"):
        parse_run_config(p)
    with pytest.raises(ConfigError, match="not found"):
        parse_run_config(tmp_path / "missing.json")


def test_parse_config_overrides(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"cell": {"I": 3.0},
                             "grid": {"nx_per_side": 12, "ny": 30},
                             "soc_grid": [0.2, 0.4, 0.6],
                             "train": {"adam_iters": 7}}))
    cfg = parse_run_config(p)
    assert cfg.cell.I == 3.0
    assert cfg.grid.ny == 30
    assert list(cfg.soc_grid) == [0.2, 0.4, 0.6]
    assert cfg.train_overrides == {"adam_iters": 7}


# ------------------------------------------------------------------ io

def test_csv_round_trips(tmp_path):
    rng = np.random.default_rng(0)
    curve = vio.VoltageCurve("charge", 2.0, np.sort(rng.uniform(0.1, 0.8, 5)),
                             rng.normal(1.5, 0.1, 5))
    path = tmp_path / "v.csv"
    vio.write_voltage_curve(path, curve)
    back = vio.read_voltage_curve(path)
    assert np.array_equal(back.socs, curve.socs)
    assert np.array_equal(back.voltages, curve.voltages)

    rows = [(0.4, -0.001, "c", 1234.567890123456789),
            (0.4, -0.001, "phi_l", -0.123456789012345678)]
    vio.write_outlet_profile(tmp_path / "o.csv", rows)
    assert vio.read_outlet_profile(tmp_path / "o.csv") == rows

    crows = [(0.4, 0.01, 1999.123456789)]
    vio.write_collector_current(tmp_path / "j.csv", crows)
    assert vio.read_collector_current(tmp_path / "j.csv") == crows

    lab = LabeledSet(x=np.zeros(3), y=rng.uniform(0, 0.05, 3),
                     soc=np.full(3, 0.3), phi_l=rng.normal(0, 0.1, 3))
    vio.write_labeled_set(tmp_path / "l.csv", lab)
    back = vio.read_labeled_set(tmp_path / "l.csv")
    for k in ("x", "y", "soc", "phi_l"):
        assert np.array_equal(getattr(back, k), getattr(lab, k))


def test_voltage_curve_validation():
    with pytest.raises(ValueError):
        vio.VoltageCurve("charge", 2.0, [0.4, 0.3], [1.0, 1.1])
    with pytest.raises(ValueError):
        vio.VoltageCurve("charge", 2.0, [0.3, 0.4], [1.0, np.inf])
    with pytest.raises(ValueError):
        vio.VoltageCurve("charge", 2.0, [0.3], [1.0, 1.1])


def test_comparison_report_identity_and_scaling(tmp_path):
    socs = np.array([0.2, 0.5, 0.8])
    v = np.array([1.5, 1.6, 1.7])
    for d in ("a", "b"):
        out = tmp_path / d
        out.mkdir()
        fac = 1.0 if d == "a" else 1.01
        vio.write_voltage_curve(out / "voltage_curve.csv",
                                vio.VoltageCurve("charge", 2.0, socs, fac * v))
        vio.write_outlet_profile(out / "outlet_profile.csv",
                                 [(0.2, 0.0, "phi_l", 0.30 + (0.05 if d == "b" else 0.0))])
        vio.write_collector_current(out / "collector_current.csv",
                                    [(0.2, 0.0, 2000.0)])
    same = vio.compare_outputs(tmp_path / "a", tmp_path / "a", c0=1500.0)
    assert same.rel_l2_voltage == 0.0
    assert same.profile_rmse == 0.0
    assert same.current_rmse == 0.0
    assert same.mean_shift == 0.0
    rep = vio.compare_outputs(tmp_path / "a", tmp_path / "b", c0=1500.0)
    assert rep.rel_l2_voltage == pytest.approx(0.01, rel=1e-9)
    assert rep.mean_shift == pytest.approx(0.05, rel=1e-9)
    rt = tmp_path / "r.json"
    rep.to_json(rt)
    back = vio.ComparisonReport.from_json(rt)
    assert back.rel_l2_voltage == rep.rel_l2_voltage


def test_compare_grid_mismatch(tmp_path):
    for d, socs in (("a", [0.2, 0.5]), ("b", [0.2, 0.6])):
        out = tmp_path / d
        out.mkdir()
        vio.write_voltage_curve(out / "voltage_curve.csv",
                                vio.VoltageCurve("charge", 2.0, socs, [1.5, 1.6]))
    with pytest.raises(ValueError, match="0.5|0.6"):
        vio.compare_outputs(tmp_path / "a", tmp_path / "b", c0=1500.0)


# ------------------------------------------------------------------ commands

@pytest.fixture(scope="module")
def ref_out(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("ref")
    cfg = write_cfg(tmp)
    rc = main(["solve-ref", "--config", cfg, "--out", str(tmp / "out"),
               "--stage", "charge"])
    assert rc == 0
    return tmp / "out" / "charge"


def test_solve_ref_outputs(ref_out):
    curve = vio.read_voltage_curve(ref_out / "voltage_curve.csv")
    assert len(curve.socs) == 3
    assert np.all(np.diff(curve.voltages) > 0)  # charging curve rises with SOC
    prof = vio.read_outlet_profile(ref_out / "outlet_profile.csv")
    # 3 socs x 2 sides x 3 fields x 11 grid nodes
    assert len(prof) == 3 * 2 * 3 * 11
    cur = vio.read_collector_current(ref_out / "collector_current.csv")
    assert len(cur) == 3 * 25


def test_solve_ref_empty_soc_grid(tmp_path):
    cfg = write_cfg(tmp_path, {"soc_grid": []})
    rc = main(["solve-ref", "--config", cfg, "--out", str(tmp_path / "o")])
    assert rc == 2


def test_gen_data_reproducible(tmp_path):
    cfg = write_cfg(tmp_path)
    for d in ("d1", "d2"):
        rc = main(["gen-data", "--config", cfg, "--out", str(tmp_path / d),
                   "--seed", "5"])
        assert rc == 0
    b1 = (tmp_path / "d1" / "labeled_data.csv").read_bytes()
    b2 = (tmp_path / "d2" / "labeled_data.csv").read_bytes()
    assert b1 == b2
    lab = vio.read_labeled_set(tmp_path / "d1" / "labeled_data.csv")
    assert len(lab) == 80
    assert np.sum(lab.x == 0.0) == 40
    assert np.sum(np.isclose(lab.x, -CellParameters().L)) == 40


def test_train_predict_compare_pipeline(tmp_path):
    cfg = write_cfg(tmp_path, {"train": TINY_TRAIN})
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "m"),
               "--variant", "pinn", "--stage", "charge", "--seed", "0"])
    assert rc == 0
    assert (tmp_path / "m" / "model.vrfb").exists()
    hist = (tmp_path / "m" / "history.csv").read_text().strip().splitlines()
    assert hist[0] == "phase,iter,loss,lr"
    assert len(hist) > 4

    rc = main(["predict", str(tmp_path / "m" / "model.vrfb"),
               "--config", cfg, "--out", str(tmp_path / "p")])
    assert rc == 0
    pred_dir = tmp_path / "p" / "charge"
    # compare prediction against itself: exact zeros
    rc = main(["compare", str(pred_dir), str(pred_dir),
               "--config", cfg, "--out", str(tmp_path / "c")])
    assert rc == 0
    rep = vio.ComparisonReport.from_json(tmp_path / "c" / "report.json")
    assert rep.rel_l2_voltage == 0.0
    assert rep.profile_rmse == 0.0


def test_train_epinn_data_missing_file(tmp_path):
    cfg = write_cfg(tmp_path, {"train": TINY_TRAIN,
                               "labeled_data": str(tmp_path / "nope.csv")})
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "m"),
               "--variant", "epinn-data"])
    assert rc == 2


def test_train_epinn_data_needs_config_field(tmp_path):
    cfg = write_cfg(tmp_path, {"train": TINY_TRAIN})
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "m"),
               "--variant", "epinn-data"])
    assert rc == 2


def test_predict_rejects_out_of_range_soc(tmp_path):
    cfg = write_cfg(tmp_path, {"train": TINY_TRAIN})
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "m"),
               "--variant", "pinn"])
    assert rc == 0
    bad = write_cfg(tmp_path, {"soc_grid": [0.05, 0.5]}, name="bad.json")
    rc = main(["predict", str(tmp_path / "m" / "model.vrfb"),
               "--config", bad, "--out", str(tmp_path / "p")])
    assert rc == 2


def test_cli_entry_point_usage_exit():
    proc = subprocess.run([sys.executable, "-m", "vrfb.cli"],
                          capture_output=True)
    assert proc.returncode == 2


def test_predict_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, {"train": TINY_TRAIN})
    rc = main(["train", "--config", cfg, "--out", str(tmp_path / "m"),
               "--variant", "pinn"])
    assert rc == 0
    for d in ("p1", "p2"):
        rc = main(["predict", str(tmp_path / "m" / "model.vrfb"),
                   "--config", cfg, "--out", str(tmp_path / d)])
        assert rc == 0
    for name in ("voltage_curve.csv", "outlet_profile.csv",
                 "collector_current.csv"):
        a = (tmp_path / "p1" / "charge" / name).read_bytes()
        b = (tmp_path / "p2" / "charge" / name).read_bytes()
        assert a == b
