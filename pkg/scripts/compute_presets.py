"""Regenerate the shipped CHSH preset angles from the grid-plus-refinement optimizer.

    python3 scripts/compute_presets.py [--grid 24] [--rounds 40]

Prints each conditional state's optimal (a, a', b, b') next to the embedded
constant, and exits nonzero if they drift apart.
"""
import argparse
import math
import sys
from dataclasses import dataclass

import numpy as np

from cfent.protocols import FACTORABLE_PRESETS, GHZ_PRESETS, conditional_pair_state, optimal_chsh_angles, swap_outcome_state
from cfent.qcore import BELL_LABELS, X


@dataclass(frozen=True)
class PresetConfig:
    grid: int = 24
    rounds: int = 40
    atol: float = 1e-12


def targets():
    for k in (1, -1):
        yield f"ghz {k:+d}", conditional_pair_state(X, k).state, GHZ_PRESETS[k]
    for label in BELL_LABELS:
        yield f"factorable {label}", swap_outcome_state(label), FACTORABLE_PRESETS[label]


def main(cfg: PresetConfig) -> int:
    drift = False
    for name, state, shipped in targets():
        angles, value = optimal_chsh_angles(state, cfg.grid, cfg.rounds)
        same = np.allclose(angles, shipped, atol=cfg.atol)
        drift |= not same
        quarter = ", ".join(f"{a / (math.pi / 4):+.3f}" for a in angles)
        print(f"{name:22s} S={value:.12f}  angles/(pi/4)=({quarter})  {'ok' if same else 'DRIFT'}")
    return 1 if drift else 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=PresetConfig.grid)
    ap.add_argument("--rounds", type=int, default=PresetConfig.rounds)
    args = ap.parse_args()
    sys.exit(main(PresetConfig(grid=args.grid, rounds=args.rounds)))
