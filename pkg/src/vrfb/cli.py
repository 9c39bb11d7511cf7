"""Command-line entry points: solve-ref, gen-data, train, predict, compare.

Exit codes: 0 success, 1 runtime failure, 2 usage/configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.interpolate import RegularGridInterpolator

from . import io as vio
from .network import DTYPE, CompositeNet, load_model, save_model
from .physics import CellParameters, Side, Stage
from .refsolver import Grid, SolverError, sweep_soc, collector_current_profile, \
    outlet_profiles
from .sampling import LabeledSet
from .training import TrainConfig, train
from .loss import VARIANTS, VARIANT_EPINN_DATA


class ConfigError(ValueError):
    """Configuration problem; maps to exit code 2."""


@dataclass
class RunConfig:
    cell: CellParameters
    grid: Grid
    soc_grid: np.ndarray
    train_overrides: dict = field(default_factory=dict)
    labeled_data: str | None = None

    @classmethod
    def default(cls) -> "RunConfig":
        return cls(cell=CellParameters(), grid=Grid(20, 50),
                   soc_grid=np.linspace(0.1, 0.8, 15))


_TRAIN_KEYS = {"width", "depth", "adam_iters", "lbfgs_iters", "lr0",
               "lr_decay", "lr_step", "rho", "log_every"}


def parse_run_config(path) -> RunConfig:
    """Reads the JSON run configuration with field-precise error messages."""
    if path is None:
        return RunConfig.default()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    known = {"cell", "grid", "soc_grid", "train", "labeled_data"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"config field '{key}' is not recognized "
                              f"(known: {sorted(known)})")

    cfg = RunConfig.default()
    cell_raw = raw.get("cell", {})
    if not isinstance(cell_raw, dict):
        raise ConfigError("config field 'cell' must be an object")
    base = cfg.cell.to_dict()
    for k, v in cell_raw.items():
        if k not in base:
            raise ConfigError(f"config field 'cell.{k}' is not a cell parameter")
        base[k] = v
    try:
        cfg.cell = CellParameters.from_dict(base)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'cell': {e}")

    grid_raw = raw.get("grid", {})
    if not isinstance(grid_raw, dict):
        raise ConfigError("config field 'grid' must be an object")
    for k in grid_raw:
        if k not in ("nx_per_side", "ny"):
            raise ConfigError(f"config field 'grid.{k}' is not recognized")
    try:
        cfg.grid = Grid(int(grid_raw.get("nx_per_side", cfg.grid.nx_per_side)),
                        int(grid_raw.get("ny", cfg.grid.ny)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'grid': {e}")

    if "soc_grid" in raw:
        sg = raw["soc_grid"]
        if isinstance(sg, list):
            cfg.soc_grid = np.asarray(sg, dtype=float)
        elif isinstance(sg, dict) and set(sg) == {"start", "stop", "num"}:
            cfg.soc_grid = np.linspace(sg["start"], sg["stop"], int(sg["num"]))
        else:
            raise ConfigError("config field 'soc_grid' must be a list of values "
                              "or {start, stop, num}")
        if len(cfg.soc_grid) == 0:
            raise ConfigError("config field 'soc_grid' must not be empty")
        if np.any(np.diff(cfg.soc_grid) <= 0):
            raise ConfigError("config field 'soc_grid' must be strictly increasing")

    train_raw = raw.get("train", {})
    if not isinstance(train_raw, dict):
        raise ConfigError("config field 'train' must be an object")
    for k in train_raw:
        if k not in _TRAIN_KEYS:
            raise ConfigError(f"config field 'train.{k}' is not recognized "
                              f"(known: {sorted(_TRAIN_KEYS)})")
    cfg.train_overrides = dict(train_raw)

    if "labeled_data" in raw:
        if not isinstance(raw["labeled_data"], str):
            raise ConfigError("config field 'labeled_data' must be a path string")
        cfg.labeled_data = raw["labeled_data"]
    return cfg


# ------------------------------------------------------------------ emission

def _profile_rows_from_state(state, soc):
    prof = outlet_profiles(state)
    rows = []
    for x_key, suffix in (("x_neg", "neg"), ("x_pos", "pos")):
        xs = prof[x_key]
        for name in vio.OUTLET_FIELDS:
            key = {"c": "c", "phi_l": "phil", "phi_s": "phis"}[name]
            vals = prof[f"{key}_{suffix}"]
            rows += [(soc, x, name, v) for x, v in zip(xs, vals)]
    return rows


def _net_line(net, side, xs, y, soc):
    """(c, phi_l, phi_s) along a constant-y line."""
    x = torch.as_tensor(xs, dtype=DTYPE)
    yv = torch.full_like(x, y)
    sv = torch.full_like(x, soc)
    with torch.no_grad():
        return net.forward_physical(side, x, yv, sv)


def _profile_rows_from_net(net, grid, soc):
    p = net.params
    x_neg, x_pos, _ = grid.coords(p)
    rows = []
    for side, xs in ((Side.NEGATIVE, x_neg), (Side.POSITIVE, x_pos)):
        c, pl, ps = _net_line(net, side, xs, p.H, soc)
        for name, vals in (("c", c), ("phi_l", pl), ("phi_s", ps)):
            rows += [(soc, x, name, float(v)) for x, v in zip(xs, vals)]
    return rows


def _collector_rows_from_net(net, grid, soc):
    p = net.params
    _, _, ys = grid.coords(p)
    x = torch.full((len(ys),), -p.L, dtype=DTYPE, requires_grad=True)
    yv = torch.as_tensor(ys, dtype=DTYPE)
    sv = torch.full_like(yv, soc)
    _, _, ps = net.forward_physical(Side.NEGATIVE, x, yv, sv)
    g = torch.autograd.grad(ps.sum(), x)[0]
    j = (p.sigma_s_eff * g).detach().numpy()
    return [(soc, y, float(v)) for y, v in zip(ys, j)]


def _net_voltage(net, grid, soc):
    p = net.params
    _, _, ys = grid.coords(p)
    # y-averaged collector potentials at the grid's y nodes
    yv = torch.as_tensor(ys, dtype=DTYPE)
    sv = torch.full_like(yv, soc)
    with torch.no_grad():
        _, _, pp = net.forward_physical(Side.POSITIVE,
                                        torch.full_like(yv, p.L), yv, sv)
        _, _, pn = net.forward_physical(Side.NEGATIVE,
                                        torch.full_like(yv, -p.L), yv, sv)
    return float(np.trapezoid(pp.numpy(), ys) / p.H
                 - np.trapezoid(pn.numpy(), ys) / p.H)


def _write_outputs(out_dir: Path, curve, profile_rows, current_rows):
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        path = out_dir / "voltage_curve.csv"
        vio.write_voltage_curve(path, curve)
        written.append(path)
        path = out_dir / "outlet_profile.csv"
        vio.write_outlet_profile(path, profile_rows)
        written.append(path)
        path = out_dir / "collector_current.csv"
        vio.write_collector_current(path, current_rows)
        written.append(path)
    except Exception:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


# ------------------------------------------------------------------ commands

def _stages(stage_flag: str | None):
    if stage_flag is None:
        return [Stage.CHARGING, Stage.DISCHARGING]
    return [Stage.from_string(stage_flag)]


def _stage_name(stage: Stage) -> str:
    return "charge" if stage is Stage.CHARGING else "discharge"


def cmd_solve_ref(args) -> int:
    cfg = parse_run_config(args.config)
    out = Path(args.out)
    for stage in _stages(args.stage):
        stage_dir = out / _stage_name(stage)
        try:
            sweep = sweep_soc(stage, cfg.cell, cfg.grid, cfg.soc_grid)
        except SolverError as e:
            print(f"error: reference solve failed for {_stage_name(stage)}: {e}",
                  file=sys.stderr)
            return 1
        curve = vio.VoltageCurve(stage=_stage_name(stage), current=cfg.cell.I,
                                 socs=sweep.socs, voltages=sweep.voltages,
                                 source="reference")
        profile_rows, current_rows = [], []
        for soc, state in zip(sweep.socs, sweep.states):
            profile_rows += _profile_rows_from_state(state, soc)
            y, j = collector_current_profile(state)
            current_rows += [(soc, yy, jj) for yy, jj in zip(y, j)]
        _write_outputs(stage_dir, curve, profile_rows, current_rows)
        print(f"wrote {stage_dir}/voltage_curve.csv ({len(sweep.socs)} SOC values)")
    return 0


def cmd_gen_data(args) -> int:
    cfg = parse_run_config(args.config)
    stage = Stage.from_string(args.stage or "charge")
    rng = np.random.default_rng(args.seed)
    try:
        sweep = sweep_soc(stage, cfg.cell, cfg.grid, cfg.soc_grid)
    except SolverError as e:
        print(f"error: reference solve failed: {e}", file=sys.stderr)
        return 1
    p = cfg.cell
    _, _, ys = cfg.grid.coords(p)

    n_per_line = 40
    xs, yv, sv, phis = [], [], [], []
    for x_line in (0.0, -p.L):
        soc_pick = rng.choice(len(sweep.socs), size=n_per_line)
        y_pick = rng.uniform(0.0, p.H, n_per_line)
        for idx, yy in zip(soc_pick, y_pick):
            state = sweep.states[idx]
            # x is on a grid line, so bilinear interpolation reduces to
            # linear interpolation along y of the negative-side phi_l column
            col = state.phil_neg[-1, :] if x_line == 0.0 else state.phil_neg[0, :]
            f = RegularGridInterpolator((ys,), col)
            xs.append(x_line)
            yv.append(yy)
            sv.append(float(sweep.socs[idx]))
            phis.append(float(f([yy])[0]))
    labeled = LabeledSet(x=np.array(xs), y=np.array(yv), soc=np.array(sv),
                         phi_l=np.array(phis))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vio.write_labeled_set(out / "labeled_data.csv", labeled)
    print(f"wrote {out}/labeled_data.csv ({len(labeled)} points)")
    return 0


def _train_config(cfg: RunConfig, args) -> TrainConfig:
    if args.desk_scale:
        base = TrainConfig.desk_scale(args.variant)
    else:
        base = TrainConfig(variant=args.variant)
    fields = {"variant": args.variant, "width": base.width, "depth": base.depth,
              "adam_iters": base.adam_iters, "lbfgs_iters": base.lbfgs_iters,
              "lr0": base.lr0, "lr_decay": base.lr_decay,
              "lr_step": base.lr_step, "rho": base.rho,
              "log_every": base.log_every, "sampling": base.sampling}
    fields.update(cfg.train_overrides)
    try:
        return TrainConfig(**fields)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"config field 'train': {e}")


def cmd_train(args) -> int:
    cfg = parse_run_config(args.config)
    tc = _train_config(cfg, args)
    labeled = None
    if args.variant == VARIANT_EPINN_DATA:
        if cfg.labeled_data is None:
            raise ConfigError("variant 'epinn-data' needs config field "
                              "'labeled_data' pointing at a labeled CSV")
        path = Path(cfg.labeled_data)
        if not path.exists():
            raise ConfigError(f"labeled data file does not exist: {path}")
        labeled = vio.read_labeled_set(path)
    stage = Stage.from_string(args.stage or "charge")
    result = train(cfg.cell, stage, tc, seed=args.seed, labeled=labeled,
                   log=lambda r: print(f"[{r['phase']}] iter {r['iter']} "
                                       f"loss {r['loss']:.6e}", flush=True))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"variant": args.variant, "seed": args.seed,
            "stage": _stage_name(stage), "final_loss": result.final_loss,
            "elapsed_s": result.elapsed_s}
    save_model(result.net, out / "model.vrfb", meta)
    vio.write_history(out / "history.csv", result.history)
    print(f"wrote {out}/model.vrfb (final loss {result.final_loss:.6e}, "
          f"{result.elapsed_s:.0f} s)")
    return 0


def cmd_predict(args) -> int:
    cfg = parse_run_config(args.config)
    model_path = Path(args.model)
    if not model_path.exists():
        raise ConfigError(f"model container does not exist: {model_path}")
    net, meta = load_model(model_path)
    stage = _stage_name(net.stage)
    out = Path(args.out) / stage
    socs = cfg.soc_grid
    lo, hi = net.params.soc_min, net.params.soc_max
    bad = [float(s) for s in socs if not lo <= s <= hi]
    if bad:
        raise ConfigError(f"soc values outside [{lo}, {hi}]: {bad}")
    voltages, profile_rows, current_rows = [], [], []
    for soc in socs:
        voltages.append(_net_voltage(net, cfg.grid, soc))
        profile_rows += _profile_rows_from_net(net, cfg.grid, soc)
        current_rows += _collector_rows_from_net(net, cfg.grid, soc)
    curve = vio.VoltageCurve(stage=stage, current=net.params.I, socs=socs,
                             voltages=np.array(voltages),
                             source=meta.get("variant", "pinn"))
    _write_outputs(out, curve, profile_rows, current_rows)
    print(f"wrote {out}/voltage_curve.csv ({len(socs)} SOC values)")
    return 0


def cmd_compare(args) -> int:
    cfg = parse_run_config(args.config)
    try:
        report = vio.compare_outputs(args.ref_dir, args.pred_dir,
                                     c0=cfg.cell.c0)
    except FileNotFoundError as e:
        raise ConfigError(f"comparison input missing: {e}")
    except ValueError as e:
        raise ConfigError(str(e))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "report.json")
    print(json.dumps({"rel_l2_voltage": report.rel_l2_voltage,
                      "profile_rmse": report.profile_rmse,
                      "current_rmse": report.current_rmse,
                      "mean_shift": report.mean_shift}, indent=2))
    return 0


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vrfb",
                                 description="2D flow-cell simulation and "
                                             "physics-informed training tools")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, stage_default=None):
        p.add_argument("--config", default=None, help="JSON run configuration")
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("solve-ref", help="run the reference solver sweep")
    common(p)
    p.add_argument("--stage", choices=["charge", "discharge"], default=None,
                   help="restrict to one stage (default: both)")
    p.set_defaults(func=cmd_solve_ref)

    p = sub.add_parser("gen-data", help="sample labeled potentials from the "
                                        "reference solution")
    common(p)
    p.add_argument("--stage", choices=["charge", "discharge"], default="charge")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a physics-informed model")
    common(p)
    p.add_argument("--variant", choices=list(VARIANTS), default="pinn")
    p.add_argument("--stage", choices=["charge", "discharge"], default="charge")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--desk-scale", action="store_true",
                   help="small nets and point sets sized for CPU runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="evaluate a trained model on the "
                                       "configured grid")
    p.add_argument("model", help="model container written by train")
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("compare", help="metrics between two output directories")
    p.add_argument("ref_dir", help="reference output directory (one stage)")
    p.add_argument("pred_dir", help="prediction output directory (one stage)")
    common(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (SolverError, FloatingPointError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
