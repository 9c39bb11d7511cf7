"""CSV/JSON emission and parsing for the command-line tools.

CSV numbers are written with repr-level precision so write-then-read
round-trips exactly; JSON is used for configuration and reports.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sampling import LabeledSet

VOLTAGE_HEADER = ("soc", "voltage")
OUTLET_HEADER = ("soc", "x", "field", "value")
CURRENT_HEADER = ("soc", "y", "j")
LABELED_HEADER = ("x", "y", "soc", "phi_l")
HISTORY_HEADER = ("phase", "iter", "loss", "lr")

OUTLET_FIELDS = ("c", "phi_l", "phi_s")


def _fmt(v) -> str:
    return repr(float(v))


@dataclass
class VoltageCurve:
    stage: str                  # "charge" | "discharge"
    current: float              # total current I (A)
    socs: np.ndarray
    voltages: np.ndarray
    source: str = "reference"   # reference | pinn | epinn | epinn-data

    def __post_init__(self):
        self.socs = np.asarray(self.socs, dtype=float)
        self.voltages = np.asarray(self.voltages, dtype=float)
        if len(self.socs) != len(self.voltages):
            raise ValueError("soc and voltage series must have equal length")
        if len(self.socs) and not np.all(np.diff(self.socs) > 0):
            raise ValueError("soc values must be strictly increasing")
        if not np.all(np.isfinite(self.voltages)):
            raise ValueError("voltages must be finite")


def write_voltage_curve(path, curve: VoltageCurve):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(VOLTAGE_HEADER)
        for s, v in zip(curve.socs, curve.voltages):
            w.writerow([_fmt(s), _fmt(v)])


def read_voltage_curve(path, stage="", current=0.0, source="") -> VoltageCurve:
    socs, volts = [], []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != VOLTAGE_HEADER:
            raise ValueError(f"{path}: expected header {VOLTAGE_HEADER}, got {header}")
        for row in r:
            socs.append(float(row[0]))
            volts.append(float(row[1]))
    return VoltageCurve(stage=stage, current=current, socs=np.array(socs),
                        voltages=np.array(volts), source=source)


def write_outlet_profile(path, rows):
    """rows: iterable of (soc, x, field, value)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(OUTLET_HEADER)
        for soc, x, name, value in rows:
            if name not in OUTLET_FIELDS:
                raise ValueError(f"unknown outlet field {name!r}")
            w.writerow([_fmt(soc), _fmt(x), name, _fmt(value)])


def read_outlet_profile(path):
    """-> list of (soc, x, field, value) tuples."""
    rows = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != OUTLET_HEADER:
            raise ValueError(f"{path}: expected header {OUTLET_HEADER}, got {header}")
        for row in r:
            rows.append((float(row[0]), float(row[1]), row[2], float(row[3])))
    return rows


def write_collector_current(path, rows):
    """rows: iterable of (soc, y, j)."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CURRENT_HEADER)
        for soc, y, j in rows:
            w.writerow([_fmt(soc), _fmt(y), _fmt(j)])


def read_collector_current(path):
    rows = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != CURRENT_HEADER:
            raise ValueError(f"{path}: expected header {CURRENT_HEADER}, got {header}")
        for row in r:
            rows.append((float(row[0]), float(row[1]), float(row[2])))
    return rows


def write_labeled_set(path, labeled: LabeledSet):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(LABELED_HEADER)
        for i in range(len(labeled)):
            w.writerow([_fmt(labeled.x[i]), _fmt(labeled.y[i]),
                        _fmt(labeled.soc[i]), _fmt(labeled.phi_l[i])])


def read_labeled_set(path) -> LabeledSet:
    cols = {k: [] for k in LABELED_HEADER}
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = tuple(next(r))
        if header != LABELED_HEADER:
            raise ValueError(f"{path}: expected header {LABELED_HEADER}, got {header}")
        for row in r:
            for k, v in zip(LABELED_HEADER, row):
                cols[k].append(float(v))
    return LabeledSet(**{k: np.array(v) for k, v in cols.items()})


def write_history(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(HISTORY_HEADER)
        for rec in history:
            w.writerow([rec["phase"], rec["iter"], _fmt(rec["loss"]),
                        _fmt(rec.get("lr", 0.0))])


@dataclass
class ComparisonReport:
    rel_l2_voltage: float
    profile_rmse: float
    current_rmse: float
    mean_shift: float
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("rel_l2_voltage", "profile_rmse", "current_rmse"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def to_json(self, path):
        payload = {"rel_l2_voltage": self.rel_l2_voltage,
                   "profile_rmse": self.profile_rmse,
                   "current_rmse": self.current_rmse,
                   "mean_shift": self.mean_shift,
                   "notes": self.notes}
        Path(path).write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def from_json(cls, path) -> "ComparisonReport":
        d = json.loads(Path(path).read_text())
        return cls(rel_l2_voltage=d["rel_l2_voltage"],
                   profile_rmse=d["profile_rmse"],
                   current_rmse=d["current_rmse"],
                   mean_shift=d["mean_shift"],
                   notes=d.get("notes", {}))


def compare_outputs(ref_dir, pred_dir, c0: float) -> ComparisonReport:
    """Metrics between two output directories holding the three CSV schemas.

    Concentration rows in the outlet profile are normalized by c0 before
    entering the profile RMSE so all fields contribute on a volt-like scale.
    The mean shift is the signed average of (prediction - reference) over
    the electrolyte-potential outlet rows.
    """
    ref_dir, pred_dir = Path(ref_dir), Path(pred_dir)
    a = read_voltage_curve(pred_dir / "voltage_curve.csv")
    b = read_voltage_curve(ref_dir / "voltage_curve.csv")
    if len(a.socs) != len(b.socs) or not np.allclose(a.socs, b.socs,
                                                    rtol=0, atol=1e-12):
        extra = sorted(set(np.round(a.socs, 12)) ^ set(np.round(b.socs, 12)))
        raise ValueError(f"soc grids differ at values {extra}")
    rel_l2 = (np.linalg.norm(a.voltages - b.voltages)
              / np.linalg.norm(b.voltages))

    pa = read_outlet_profile(pred_dir / "outlet_profile.csv")
    pb = read_outlet_profile(ref_dir / "outlet_profile.csv")
    if len(pa) != len(pb):
        raise ValueError("outlet profiles have different row counts")
    diffs, shifts = [], []
    for ra, rb in zip(pa, pb):
        if ra[:3] != rb[:3]:
            raise ValueError(f"outlet profile rows differ: {ra[:3]} vs {rb[:3]}")
        scale = c0 if ra[2] == "c" else 1.0
        diffs.append((ra[3] - rb[3]) / scale)
        if ra[2] == "phi_l":
            shifts.append(ra[3] - rb[3])
    profile_rmse = float(np.sqrt(np.mean(np.square(diffs))))
    mean_shift = float(np.mean(shifts)) if shifts else 0.0

    ca = read_collector_current(pred_dir / "collector_current.csv")
    cb = read_collector_current(ref_dir / "collector_current.csv")
    if len(ca) != len(cb):
        raise ValueError("collector current profiles have different row counts")
    jd = [ra[2] - rb[2] for ra, rb in zip(ca, cb)]
    current_rmse = float(np.sqrt(np.mean(np.square(jd))))

    return ComparisonReport(rel_l2_voltage=float(rel_l2),
                            profile_rmse=profile_rmse,
                            current_rmse=current_rmse,
                            mean_shift=mean_shift,
                            notes={"voltage_definition":
                                   "y-averaged phi_s difference between collectors"})
