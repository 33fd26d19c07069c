"""Sweep consistent-histories certificates over ancilla directions.

    python3 scripts/certify_all.py --samples 20 --seed 0

For the GHZ scenario the ancilla polar angle is swept from z to x; near z the
conditional states become product states and the certificate stops passing.
"""
import argparse
import math
from dataclasses import dataclass

from cfent.cli import certify_samples
from cfent.histories import counterfactual_certificate
from cfent.protocols import Scenario
from cfent.qcore import BELL_LABELS, BlochDirection


@dataclass(frozen=True)
class SweepConfig:
    samples: int = 20
    seed: int = 0
    steps: int = 7


def summarize(scenario, outcomes, pairs):
    certs = [counterfactual_certificate(scenario, t1, t2, o) for o in outcomes for t1, t2 in pairs]
    used = [e for c in certs for e in c.entries if not e.skipped]
    defect = max(e.defect for e in used)
    p_err = max(abs(e.probabilities[c.designated] - 1) for c in certs for e in c.entries if not e.skipped)
    return all(c.passed for c in certs), defect, p_err, sorted({c.designated for c in certs})


def main(cfg: SweepConfig) -> None:
    pairs = certify_samples(cfg.seed, cfg.samples)
    ok, defect, p_err, des = summarize(Scenario("factorable"), BELL_LABELS, pairs)
    print(f"factorable            pass={ok}  defect={defect:.1e}  |p-1|={p_err:.1e}  designated={des}")
    for k in range(cfg.steps):
        theta3 = k * (math.pi / 2) / (cfg.steps - 1)
        ok, defect, p_err, des = summarize(Scenario("ghz", BlochDirection(theta3)), (1, -1), pairs)
        print(f"ghz theta3={theta3:.3f}  pass={ok}  defect={defect:.1e}  |p-1|={p_err:.1e}  designated={des}")


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=SweepConfig.samples)
    ap.add_argument("--seed", type=int, default=SweepConfig.seed)
    ap.add_argument("--steps", type=int, default=SweepConfig.steps)
    main(SweepConfig(**vars(ap.parse_args())))
