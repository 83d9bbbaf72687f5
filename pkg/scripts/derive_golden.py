"""Measure the separation values behind the stored regression floors.

Each floor is half the smallest deviation observed by the corresponding
experiment, rounded down to one significant digit. Run with ``--write`` to
update ``src/symfcd/data/golden.json``.
"""

import argparse
import json
import math
from pathlib import Path

from symfcd.equivariance import P_GRID
from symfcd.invariance import fcd_step_battery, invariance_battery
from symfcd.models import registry_get
from symfcd.signals import Transform
from symfcd.steering import FieldSpec, gradient_steering, steering_invariance_experiment

SCALINGS = [p for p in P_GRID if p != 1.0]
TRANSLATIONS = (0.5, 1.0, 2.0, 3.0)
GOLDEN = Path(__file__).resolve().parents[1] / "src" / "symfcd" / "data" / "golden.json"


def floor_of(value: float) -> float:
    half = value / 2
    scale = 10 ** math.floor(math.log10(half))
    return math.floor(half / scale) * scale


def measure() -> dict:
    out = {"fcd_floor": {}, "invariance_floor": {}, "steering_floor": {}}
    for name in ("fig1c", "fig2a"):
        rep = fcd_step_battery(registry_get(name), [((5.0, 10.0), (5.0, 25.0))], floor=0.0)
        out["fcd_floor"][name] = rep.metrics["min_different_fold_deviation"]
    sniffer = registry_get("fig2b")
    for key, transforms in (("fig2b_scalings", [Transform.scale(p) for p in SCALINGS]),
                            ("fig2b_translations", [Transform.translate(p) for p in TRANSLATIONS])):
        rep = invariance_battery(sniffer, transforms, floor=0.0)
        out["invariance_floor"][key] = rep.metrics["min_sup_deviation"]
    rep = steering_invariance_experiment(sniffer, gradient_steering(1.0), FieldSpec.exponential(2.0, 0.5, 1.0),
                                         Transform.scale(3.0), floor=0.0)
    out["steering_floor"]["fig2b"] = rep.metrics["r_deviation"]
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--write", action="store_true")
    args = ap.parse_args()
    measured = measure()
    floors = {k: {n: floor_of(v) for n, v in d.items()} for k, d in measured.items()}
    for k in measured:
        for n, v in measured[k].items():
            print(f"{k:<18} {n:<20} measured {v:.6g}  floor {floors[k][n]:g}")
    if args.write:
        GOLDEN.write_text(json.dumps(floors, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
