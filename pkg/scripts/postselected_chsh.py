"""Monte Carlo CHSH estimates, postselected on the ancilla and for the whole ensemble.

    python3 scripts/postselected_chsh.py --scenario ghz --shots 400000 --seed 42

Each subensemble is compared with its exact value; the whole ensemble should
stay inside the local bound.
"""
import argparse
import math
import time
from dataclasses import dataclass

from cfent.protocols import (
    FACTORABLE_PRESETS,
    GHZ_PRESETS,
    Scenario,
    build_factorable,
    build_ghz,
    conditional_pair_state,
    estimate_stats,
    exact_chsh,
    partition_records,
    preset_menu,
    run_trials,
    swap_outcome_state,
)
from cfent.qcore import BlochDirection, partial_trace


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "ghz"
    shots: int = 400_000
    seed: int = 42
    theta3: float = math.pi / 2  # x
    phi3: float = 0.0
    order: str = "ancilla_last"


def main(cfg: RunConfig) -> None:
    direction = BlochDirection(cfg.theta3, cfg.phi3)
    sc = Scenario(cfg.scenario, direction)
    presets = GHZ_PRESETS if cfg.scenario == "ghz" else FACTORABLE_PRESETS
    t0 = time.perf_counter()
    records = run_trials(sc, preset_menu(presets), cfg.shots, cfg.seed, order=cfg.order)
    print(f"{cfg.shots} trials in {time.perf_counter() - t0:.1f}s")

    for label, group in partition_records(records).items():
        state = conditional_pair_state(direction, label).state if cfg.scenario == "ghz" else swap_outcome_state(label)
        s = estimate_stats(group, presets[label], label)
        exact = exact_chsh(state, presets[label])
        z = (s.chsh - exact) / s.chsh_stderr
        print(f"  {str(label):10s} n={s.count:7d}  S={s.chsh:+.4f} +- {s.chsh_stderr:.4f}  exact={exact:+.4f}  z={z:+.2f}")

    whole_state = partial_trace(build_ghz() if cfg.scenario == "ghz" else build_factorable(), [0, 1])
    first = next(iter(presets.values()))
    w = estimate_stats(records, first, "all")
    print(f"  {'all':10s} n={w.count:7d}  S={w.chsh:+.4f} +- {w.chsh_stderr:.4f}  exact={exact_chsh(whole_state, first):+.4f}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", choices=("ghz", "factorable"), default=RunConfig.scenario)
    ap.add_argument("--shots", type=int, default=RunConfig.shots)
    ap.add_argument("--seed", type=int, default=RunConfig.seed)
    ap.add_argument("--theta3", type=float, default=RunConfig.theta3)
    ap.add_argument("--phi3", type=float, default=RunConfig.phi3)
    ap.add_argument("--order", choices=("ancilla_last", "ancilla_first"), default=RunConfig.order)
    main(RunConfig(**vars(ap.parse_args())))
