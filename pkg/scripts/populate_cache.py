#!/usr/bin/env python3
"""Pre-fill the artifacts/ training cache used by the acceptance suite.

Runs the exact code path the tests use, sequentially, skipping keys that
already exist. Safe to interrupt and re-run.
"""

import sys
import time
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "tests"))

from acceptance_cache import reference_sweep, trained_model  # noqa: E402
from vrfb.physics import Stage  # noqa: E402

RUNS = (
    # criterion 5: plain PINN, both stages
    [("pinn", Stage.CHARGING, 0, 2.0), ("pinn", Stage.DISCHARGING, 0, 2.0)]
    # criterion 6: three variants x three seeds, charging
    + [(v, Stage.CHARGING, s, 2.0)
       for s in (0, 1, 2) for v in ("pinn", "epinn", "epinn-data")]
    # criterion 7: plain PINN at 1 A and 3 A, three seeds
    + [("pinn", Stage.CHARGING, s, c)
       for s in (0, 1, 2) for c in (1.0, 3.0)]
)


def main():
    for stage in Stage:
        reference_sweep(stage, 2.0)
    for current in (1.0, 3.0):
        reference_sweep(Stage.CHARGING, current)
    seen = set()
    for key in RUNS:
        if key in seen:
            continue
        seen.add(key)
        variant, stage, seed, current = key
        t0 = time.time()
        _, meta = trained_model(variant, stage, seed, current)
        print(f"{variant} {stage.value} seed={seed} I={current:g}: "
              f"final_loss={meta.get('final_loss')!r} "
              f"({time.time() - t0:.0f} s)", flush=True)


if __name__ == "__main__":
    main()
