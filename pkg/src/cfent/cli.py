"""Command-line front end.

    cfent run --scenario ghz --shots 400000 --seed 42 --out r.jsonl
    cfent analyze --records r.jsonl
    cfent exact --scenario factorable
    cfent bayes --seed 1
    cfent certify --scenario ghz
    cfent scan --state ghz_mixed

Exit codes: 0 success, 1 usage or I/O error, 2 a certificate or bound check failed.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import protocols as P
from .histories import counterfactual_certificate
from .qcore import (
    BELL_LABELS,
    X,
    Z,
    BlochDirection,
    bell_state,
    is_product_pure,
    partial_trace,
    random_direction,
)

BAYES_SAMPLES = 100
CERTIFY_SAMPLES = 20
BAYES_TOL = 1e-12
SEPARABLE_BOUND = 2.0 + 1e-9
SCAN_STATES = ("ghz_mixed", "factorable_mixed", "product", "ghz_plus", "ghz_minus") + BELL_LABELS
SCAN_ALIASES = {"eq1": "ghz_mixed", "eq5": "factorable_mixed"}

EXIT_OK, EXIT_USAGE, EXIT_FAIL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid integer {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return v


def _radians(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"angle must be finite, got {text!r}")
    return v


def _angle_list(text: str) -> tuple[float, ...]:
    return tuple(_radians(x.strip()) for x in text.split(","))


def _build_parser() -> _Parser:
    parser = _Parser(prog="cfent", description="Postselected Bell statistics from separable states.")
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def scenario(p, required=True):
        p.add_argument("--scenario", choices=P.SCENARIOS, required=required)

    def ancilla(p):
        p.add_argument("--theta3", type=_radians, default=X.theta, help="ancilla polar angle (ghz)")
        p.add_argument("--phi3", type=_radians, default=X.phi, help="ancilla azimuth (ghz)")

    def angles(p, help_text="CHSH angles a,a',b,b' in the x-z plane"):
        p.add_argument("--angles", type=_angle_list, help=help_text)

    def out(p):
        p.add_argument("--out", help="output path (default: stdout)")

    def fmt(p):
        p.add_argument("--format", choices=("json", "csv"), default="json")

    p = sub.add_parser("run", help="simulate trials and write JSONL records")
    scenario(p)
    ancilla(p)
    angles(p)
    p.add_argument("--shots", type=_positive_int, default=100_000)
    p.add_argument("--seed", type=_seed, default=0)
    out(p)

    p = sub.add_parser("analyze", help="partition records and estimate correlators")
    p.add_argument("--records", required=True)
    angles(p)
    fmt(p)
    out(p)

    p = sub.add_parser("exact", help="exact conditional states and CHSH values")
    scenario(p)
    ancilla(p)
    angles(p)
    out(p)

    p = sub.add_parser("bayes", help="compare preselected and postselected conditionals")
    angles(p, "x-z plane angles theta1,theta2,theta3 (default: random triples)")
    p.add_argument("--seed", type=_seed, default=0)
    out(p)

    p = sub.add_parser("certify", help="consistent-histories certificate")
    scenario(p)
    ancilla(p)
    p.add_argument("--seed", type=_seed, default=0)
    fmt(p)
    out(p)

    p = sub.add_parser("scan", help="grid scan of max |S| over x-z plane angles")
    p.add_argument("--state", type=lambda s: SCAN_ALIASES.get(s, s), choices=SCAN_STATES, required=True)
    ancilla(p)
    p.add_argument("--grid", type=_positive_int, default=24)
    out(p)
    return parser


def parse(argv: list[str] | None = None) -> argparse.Namespace:
    cmd = _build_parser().parse_args(argv)
    n_angles = 3 if cmd.verb == "bayes" else 4
    if getattr(cmd, "angles", None) is not None and len(cmd.angles) != n_angles:
        _build_parser().error(f"--angles needs {n_angles} comma-separated values")
    if hasattr(cmd, "theta3"):
        try:
            cmd.direction = BlochDirection(cmd.theta3, cmd.phi3)
        except ValueError as exc:
            _build_parser().error(str(exc))
    return cmd


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".cfent-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _run(cmd) -> int:
    scenario = P.Scenario(cmd.scenario, cmd.direction)
    if cmd.angles is not None:
        menu = P.chsh_menu(cmd.angles)
    else:
        menu = P.preset_menu(P.GHZ_PRESETS if cmd.scenario == "ghz" else P.FACTORABLE_PRESETS)
    records = P.run_trials(scenario, menu, cmd.shots, cmd.seed)
    buf = io.StringIO()
    P.write_jsonl(records, buf)
    _emit(buf.getvalue(), cmd.out)
    return EXIT_OK


def _analyze(cmd) -> int:
    with open(cmd.records, encoding="utf-8") as fh:
        records = P.read_jsonl(fh)
    stats = P.analyze(records, angles=cmd.angles)
    if cmd.format == "json":
        _emit(_json(stats), cmd.out)
        return EXIT_OK
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subensemble", "a_theta", "a_phi", "b_theta", "b_phi", "n", "E", "stderr"])
    for sub in stats["subensembles"] + [dict(stats["whole"], label="all")]:
        for c in sub["correlators"]:
            w.writerow([sub["label"], c["a_theta"], c["a_phi"], c["b_theta"], c["b_phi"], c["n"], c["E"], c["stderr"]])
    _emit(buf.getvalue(), cmd.out)
    return EXIT_OK


def _branch_report(label, state, probability, angles, degenerate=False) -> dict:
    return {
        "label": label,
        "probability": probability,
        "amplitudes": [[z.real, z.imag] for z in state],
        "bell_state": P.matching_bell_label(state),
        "entangled": not is_product_pure(state),
        "degenerate": degenerate,
        "chsh_angles": list(angles),
        "chsh": P.exact_chsh(state, angles),
    }


def _exact(cmd) -> int:
    if cmd.scenario == "ghz":
        presets = P.GHZ_PRESETS
        branches = []
        for outcome in (1, -1):
            b = P.conditional_pair_state(cmd.direction, outcome)
            ang = cmd.angles or presets[outcome]
            branches.append(_branch_report(outcome, b.state, b.probability, ang, b.degenerate))
        whole = partial_trace(P.build_ghz(), [0, 1])
    else:
        presets = P.FACTORABLE_PRESETS
        branches = []
        for label in BELL_LABELS:
            ang = cmd.angles or presets[label]
            branches.append(_branch_report(label, P.swap_outcome_state(label), 0.25, ang))
        whole = partial_trace(P.build_factorable(), [0, 1])
    whole_angles = cmd.angles or next(iter(presets.values()))
    max_s, argmax = P.chsh_grid_scan(whole)
    report = {
        "scenario": cmd.scenario,
        "ancilla_direction": [cmd.direction.theta, cmd.direction.phi] if cmd.scenario == "ghz" else None,
        "branches": branches,
        "whole": {"chsh_angles": list(whole_angles), "chsh": P.exact_chsh(whole, whole_angles),
                  "grid_max_abs_chsh": max_s, "grid_argmax": list(argmax)},
    }
    _emit(_json(report), cmd.out)
    return EXIT_OK


def _bayes(cmd) -> int:
    if cmd.angles is not None:
        triples = [tuple(BlochDirection.from_xz(a) for a in cmd.angles)]
    else:
        rng = np.random.default_rng(cmd.seed)
        triples = [tuple(random_direction(rng) for _ in range(3)) for _ in range(BAYES_SAMPLES)]
    worst = max(P.bayes_check(*t) for t in triples)
    passed = worst < BAYES_TOL
    _emit(_json({"triples": len(triples), "max_discrepancy": worst, "tolerance": BAYES_TOL, "pass": passed}), cmd.out)
    return EXIT_OK if passed else EXIT_FAIL


def certify_samples(seed: int, count: int = CERTIFY_SAMPLES) -> list[tuple[BlochDirection, BlochDirection]]:
    """``(z, z)`` followed by ``count`` random direction pairs drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    return [(Z, Z)] + [(random_direction(rng), random_direction(rng)) for _ in range(count)]


def _certify(cmd) -> int:
    scenario = P.Scenario(cmd.scenario, cmd.direction)
    outcomes = (1, -1) if cmd.scenario == "ghz" else BELL_LABELS
    certs = [
        counterfactual_certificate(scenario, t1, t2, anc)
        for anc in outcomes
        for t1, t2 in certify_samples(cmd.seed)
    ]
    passed = all(c.passed for c in certs)
    designated = {str(c.ancilla_outcome): c.designated for c in certs}
    if cmd.format == "json":
        report = {
            "scenario": cmd.scenario,
            "ancilla_direction": [cmd.direction.theta, cmd.direction.phi] if cmd.scenario == "ghz" else None,
            "designated": designated,
            "certificates": [c.to_dict() for c in certs],
            "pass": passed,
        }
        _emit(_json(report), cmd.out)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ancilla", "theta1", "phi1", "theta2", "phi2", "i", "j", "trDF", "defect", "designated", "p_designated", "pass"])
        for c in certs:
            for e in c.entries:
                if e.skipped:
                    continue
                w.writerow([c.ancilla_outcome, c.theta1.theta, c.theta1.phi, c.theta2.theta, c.theta2.phi,
                            e.i, e.j, e.trDF, e.defect, c.designated, e.probabilities[c.designated], c.passed])
        _emit(buf.getvalue(), cmd.out)
    return EXIT_OK if passed else EXIT_FAIL


def scan_state(name: str, direction: BlochDirection = X) -> tuple[np.ndarray, bool]:
    """Named two-qubit state for ``scan`` and whether it is separable."""
    if name == "ghz_mixed":
        return partial_trace(P.build_ghz(), [0, 1]), True
    if name == "factorable_mixed":
        return partial_trace(P.build_factorable(), [0, 1]), True
    if name == "product":
        return np.array([1, 0, 0, 0], dtype=complex), True
    if name in ("ghz_plus", "ghz_minus"):
        b = P.conditional_pair_state(direction, 1 if name == "ghz_plus" else -1)
        return b.state, is_product_pure(b.state)
    return bell_state(name), False


def _scan(cmd) -> int:
    state, separable = scan_state(cmd.state, cmd.direction)
    max_s, argmax = P.chsh_grid_scan(state, cmd.grid)
    ok = max_s <= SEPARABLE_BOUND if separable else True
    report = {
        "state": cmd.state,
        "grid": cmd.grid,
        "max_abs_chsh": max_s,
        "argmax": list(argmax),
        "separable": separable,
        "local_bound_respected": max_s <= SEPARABLE_BOUND,
        "pass": ok,
    }
    _emit(_json(report), cmd.out)
    return EXIT_OK if ok else EXIT_FAIL


_VERBS = {"run": _run, "analyze": _analyze, "exact": _exact, "bayes": _bayes, "certify": _certify, "scan": _scan}


def execute(cmd: argparse.Namespace) -> int:
    try:
        return _VERBS[cmd.verb](cmd)
    except (OSError, ValueError) as exc:
        print(f"cfent {cmd.verb}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: list[str] | None = None) -> int:
    try:
        cmd = parse(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(main())
