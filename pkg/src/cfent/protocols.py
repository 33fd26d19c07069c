"""The two postselection scenarios: a GHZ triple and a factorable pair of pairs.

Particles 1 and 2 are measured locally first; the ancilla (particle 3, or the
pair 3-4) is measured afterwards and its outcome is used to split the earlier
records into subensembles.  In code, particles are 0-based: physical
particle 1 is index 0, and so on.
"""
from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Iterable, Literal, Sequence

import numpy as np

from . import born
from .born import (
    ProjectorFamily,
    StreamFactory,
    bell_family,
    collapse,
    joint_distribution,
    outcome_probabilities,
    sample_index,
    spin_family,
)
from .qcore import (
    BELL_LABELS,
    UP,
    DOWN,
    X,
    BlochDirection,
    bell_basis,
    fidelity,
    partial_trace,
    spin_eigenbasis,
    tensor,
)

SCENARIOS = ("ghz", "factorable")
ANGLE_MATCH = 1e-12

# CHSH angle presets (a, a', b, b') in the x-z plane, radians, as returned by
# optimal_chsh_angles() for each conditional two-qubit state; every preset
# reaches S = +2*sqrt(2).  GHZ presets assume the ancilla is measured along x,
# where the +1/-1 branches are phi_plus/phi_minus.
_Q = math.pi / 4
FACTORABLE_PRESETS = {
    "phi_plus": (0.0, 2 * _Q, _Q, -_Q),
    "phi_minus": (0.0, -2 * _Q, _Q, -_Q),
    "psi_plus": (0.0, 2 * _Q, 3 * _Q, -3 * _Q),
    "psi_minus": (0.0, 2 * _Q, -3 * _Q, 3 * _Q),
}
GHZ_PRESETS = {
    1: FACTORABLE_PRESETS["phi_plus"],
    -1: FACTORABLE_PRESETS["phi_minus"],
}


@dataclass(frozen=True)
class Scenario:
    kind: Literal["ghz", "factorable"]
    ancilla_direction: BlochDirection = X

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.kind!r}")

    @property
    def num_qubits(self) -> int:
        return 3 if self.kind == "ghz" else 4

    def state(self) -> np.ndarray:
        return build_ghz() if self.kind == "ghz" else build_factorable()

    def ancilla_family(self) -> ProjectorFamily:
        if self.kind == "ghz":
            return spin_family(self.ancilla_direction, 2, 3)
        return bell_family((2, 3), 4)

    def local_families(self, a1: BlochDirection, a2: BlochDirection):
        n = self.num_qubits
        return spin_family(a1, 0, n), spin_family(a2, 1, n)


def build_ghz() -> np.ndarray:
    v = np.zeros(8, dtype=complex)
    v[0] = v[7] = 1 / math.sqrt(2)
    return v


def build_factorable() -> np.ndarray:
    v = np.zeros(16, dtype=complex)
    # |1 2 3 4> patterns up-up-up-up, up-down-up-down, down-up-down-up, down-down-down-down
    for idx in (0b0000, 0b0101, 0b1010, 0b1111):
        v[idx] = 0.5
    return v


@dataclass(frozen=True, eq=False)
class ConditionalBranch:
    outcome: int
    state: np.ndarray
    probability: float
    degenerate: bool = False


def conditional_pair_state(theta3: BlochDirection, outcome: int) -> ConditionalBranch:
    """State of particles 1, 2 once the ancilla of the GHZ triple gives ``outcome``.

    With ``a = <up_n|up_z>``, ``c = <up_n|down_z>`` (outcome +1) or
    ``a = <down_n|up_z>``, ``c = <down_n|down_z>`` (outcome -1), the branch is
    ``a|up up> + c|down down>``.  In the x-z plane this is
    ``alpha|uu> + beta|dd>`` and ``beta|uu> - alpha|dd>``.  A z-parallel
    direction gives product branches and sets ``degenerate``.
    """
    up, down = spin_eigenbasis(theta3)
    if outcome == 1:
        e = up
    elif outcome == -1:
        e = down
    else:
        raise ValueError(f"outcome must be +1 or -1, got {outcome!r}")
    a = np.vdot(e, UP)
    c = np.vdot(e, DOWN)
    state = np.array([a, 0, 0, c], dtype=complex)
    return ConditionalBranch(outcome, state, 0.5, degenerate=theta3.is_z_parallel())


def swap_outcome_state(bell_label: str) -> np.ndarray:
    """State of particles 1, 2 after a Bell measurement on 3, 4 of the factorable state."""
    fam = bell_family((2, 3), 4)
    post = collapse(build_factorable(), fam, fam.index(bell_label))
    # post is a product of (1,2) and (3,4) states; take the (1,2) factor.
    rho = partial_trace(post, [0, 1])
    w, v = np.linalg.eigh(rho)
    return v[:, -1]


def matching_bell_label(state, atol: float = 1e-12) -> str | None:
    """Bell label whose state equals ``state`` up to phase, else None."""
    for label, b in zip(BELL_LABELS, bell_basis()):
        if abs(fidelity(b, state) - 1.0) < atol:
            return label
    return None


# ---------------------------------------------------------------- records


@dataclass(frozen=True)
class TrialRecord:
    """One run: local settings and outcomes for particles 1, 2 and the ancilla result."""

    run: int
    scenario: str
    a1_theta: float
    a1_phi: float
    a2_theta: float
    a2_phi: float
    o1: int
    o2: int
    ancilla: int | str
    anc_theta: float | None = None
    anc_phi: float | None = None

    @property
    def a1(self) -> BlochDirection:
        return BlochDirection(self.a1_theta, self.a1_phi)

    @property
    def a2(self) -> BlochDirection:
        return BlochDirection(self.a2_theta, self.a2_phi)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.scenario != "ghz":
            del d["anc_theta"], d["anc_phi"]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        scenario = d["scenario"]
        if scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {scenario!r}")
        keys = {f for f in cls.__dataclass_fields__}
        required = keys - ({"anc_theta", "anc_phi"} if scenario == "factorable" else set())
        missing = required - d.keys()
        extra = d.keys() - keys
        if missing or extra:
            raise ValueError(f"bad record fields: missing {sorted(missing)}, unexpected {sorted(extra)}")
        if d["o1"] not in (1, -1) or d["o2"] not in (1, -1):
            raise ValueError("o1, o2 must be +1 or -1")
        valid_anc = (1, -1) if scenario == "ghz" else BELL_LABELS
        if d["ancilla"] not in valid_anc or isinstance(d["ancilla"], bool):
            raise ValueError(f"bad ancilla value {d['ancilla']!r} for {scenario}")
        rec = cls(**d)
        for name in ("a1_theta", "a1_phi", "a2_theta", "a2_phi"):
            if not isinstance(getattr(rec, name), (int, float)):
                raise ValueError(f"{name} must be a number")
        return rec


def write_jsonl(records: Iterable[TrialRecord], fh) -> None:
    for r in records:
        fh.write(r.to_json())
        fh.write("\n")


def read_jsonl(fh) -> list[TrialRecord]:
    records = []
    for lineno, line in enumerate(fh, 1):
        if not line.strip():
            continue
        try:
            records.append(TrialRecord.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
    return records


# ---------------------------------------------------------------- sampling


class _OutcomeTree:
    """Lazily built tree of conditional Born distributions for a fixed measurement order.

    Sampling walks the tree with one uniform per level, which draws outcomes
    exactly as ``born.measure_sequence`` does, but reuses each collapse.
    """

    def __init__(self, state, families: Sequence[ProjectorFamily]):
        self.families = list(families)
        self._nodes: dict[tuple, tuple[np.ndarray, list]] = {}
        self._states = {(): state}

    def _node(self, path: tuple):
        if path not in self._nodes:
            fam = self.families[len(path)]
            psi = self._states[path]
            probs = outcome_probabilities(psi, fam).tolist()
            self._nodes[path] = (probs, fam)
        return self._nodes[path]

    def sample(self, gen: np.random.Generator) -> tuple:
        path = ()
        labels = []
        for _ in self.families:
            probs, fam = self._node(path)
            k = sample_index(probs, gen.random())
            child = path + (k,)
            if child not in self._states and len(child) < len(self.families):
                self._states[child] = collapse(self._states[path], fam, k)
            path = child
            labels.append(fam.labels[k])
        return tuple(labels)


def _as_direction(x) -> BlochDirection:
    return x if isinstance(x, BlochDirection) else BlochDirection.from_xz(float(x))


def run_trials(
    scenario: Scenario,
    settings_menu: Sequence[tuple],
    shots: int,
    seed: int,
    setting_policy: Literal["cycle", "random"] = "cycle",
    order: Literal["ancilla_last", "ancilla_first"] = "ancilla_last",
) -> list[TrialRecord]:
    """Simulate ``shots`` runs.  Each run measures particles 1 and 2 with a menu
    setting and then the ancilla (or the ancilla first when ``order`` says so).

    Trial ``k`` draws only from ``RngStream(seed, k)``.
    """
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if not settings_menu:
        raise ValueError("settings menu is empty")
    if setting_policy not in ("cycle", "random"):
        raise ValueError(f"unknown setting policy {setting_policy!r}")
    if order not in ("ancilla_last", "ancilla_first"):
        raise ValueError(f"unknown order {order!r}")
    menu = [(_as_direction(a), _as_direction(b)) for a, b in settings_menu]
    state = scenario.state()
    anc_fam = scenario.ancilla_family()
    trees = []
    for a1, a2 in menu:
        f1, f2 = scenario.local_families(a1, a2)
        fams = [f1, f2, anc_fam] if order == "ancilla_last" else [anc_fam, f1, f2]
        trees.append(_OutcomeTree(state, fams))

    anc = scenario.ancilla_direction if scenario.kind == "ghz" else None
    streams = StreamFactory(seed)
    records = []
    for run in range(shots):
        gen = streams.stream(run)
        i = run % len(menu) if setting_policy == "cycle" else int(gen.integers(len(menu)))
        out = trees[i].sample(gen)
        if order == "ancilla_first":
            out = (out[1], out[2], out[0])
        a1, a2 = menu[i]
        records.append(
            TrialRecord(
                run=run,
                scenario=scenario.kind,
                a1_theta=a1.theta,
                a1_phi=a1.phi,
                a2_theta=a2.theta,
                a2_phi=a2.phi,
                o1=int(out[0]),
                o2=int(out[1]),
                ancilla=out[2] if isinstance(out[2], str) else int(out[2]),
                anc_theta=anc.theta if anc else None,
                anc_phi=anc.phi if anc else None,
            )
        )
    return records


def chsh_menu(angles: Sequence[float]) -> list[tuple[BlochDirection, BlochDirection]]:
    """The four setting pairs needed for a CHSH estimate at ``(a, a', b, b')``."""
    a, a2, b, b2 = (_as_direction(x) for x in angles)
    return [(a, b), (a, b2), (a2, b), (a2, b2)]


def preset_menu(presets: dict) -> list[tuple[BlochDirection, BlochDirection]]:
    """Distinct setting pairs needed to evaluate every preset quadruple."""
    menu = []
    for angles in presets.values():
        for pair in chsh_menu(angles):
            if not any(_same_direction(pair[0], m[0]) and _same_direction(pair[1], m[1]) for m in menu):
                menu.append(pair)
    return menu


def partition_records(records: Sequence[TrialRecord]) -> dict:
    """Group records by ancilla outcome.  Every record lands in exactly one group."""
    groups = defaultdict(list)
    for r in records:
        groups[r.ancilla].append(r)
    rank = {k: i for i, k in enumerate((1, -1) + BELL_LABELS)}
    return {k: groups[k] for k in sorted(groups, key=lambda k: rank.get(k, len(rank)))}


# ---------------------------------------------------------------- statistics


def _same_direction(d: BlochDirection, e: BlochDirection) -> bool:
    return bool(np.allclose(d.vector, e.vector, rtol=0, atol=ANGLE_MATCH))


@dataclass
class CorrelatorEstimate:
    a: BlochDirection
    b: BlochDirection
    n: int
    mean: float
    stderr: float

    def to_dict(self) -> dict:
        return {
            "a_theta": self.a.theta, "a_phi": self.a.phi,
            "b_theta": self.b.theta, "b_phi": self.b.phi,
            "n": self.n, "E": self.mean, "stderr": self.stderr,
        }


@dataclass
class SubensembleStats:
    label: int | str | None
    count: int
    correlators: list[CorrelatorEstimate]
    chsh: float | None
    chsh_stderr: float | None
    chsh_angles: tuple
    missing: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "count": self.count,
            "chsh_angles": list(self.chsh_angles),
            "chsh": self.chsh,
            "chsh_stderr": self.chsh_stderr,
            "missing": [[a, b] for a, b in self.missing],
            "correlators": [c.to_dict() for c in self.correlators],
        }


def _estimate(products: np.ndarray, a, b) -> CorrelatorEstimate:
    n = len(products)
    mean = float(products.mean())
    stderr = float(products.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return CorrelatorEstimate(a, b, n, mean, stderr)


def estimate_stats(subensemble: Sequence[TrialRecord], chsh_angles: Sequence[float], label=None) -> SubensembleStats:
    """Correlator table for every setting pair present (sorted by angles), plus the CHSH value at ``chsh_angles``.

    ``S = E(a,b) + E(a,b') + E(a',b) - E(a',b')``.  If a needed pair has no
    trials it is listed in ``missing`` and ``chsh`` is None.
    """
    by_pair: dict[tuple, list] = {}
    for r in subensemble:
        key = (r.a1_theta, r.a1_phi, r.a2_theta, r.a2_phi)
        by_pair.setdefault(key, []).append(r.o1 * r.o2)
    table = [
        _estimate(np.array(v, dtype=float), BlochDirection(k[0], k[1]), BlochDirection(k[2], k[3]))
        for k, v in sorted(by_pair.items())
    ]

    needed = chsh_menu(chsh_angles)
    picked, missing = [], []
    for (a, b), name in zip(needed, (("a", "b"), ("a", "b'"), ("a'", "b"), ("a'", "b'"))):
        hits = [c for c in table if _same_direction(c.a, a) and _same_direction(c.b, b)]
        if hits:
            picked.append(hits[0])
        else:
            missing.append(name)
    chsh = chsh_err = None
    if not missing:
        signs = (1, 1, 1, -1)
        chsh = float(sum(s * c.mean for s, c in zip(signs, picked)))
        chsh_err = float(math.sqrt(sum(c.stderr**2 for c in picked)))
    return SubensembleStats(
        label=label,
        count=len(subensemble),
        correlators=table,
        chsh=chsh,
        chsh_stderr=chsh_err,
        chsh_angles=tuple(float(x) for x in chsh_angles),
        missing=missing,
    )


def analyze(records: Sequence[TrialRecord], presets: dict | None = None, angles=None) -> dict:
    """Partition ``records`` and estimate per-subensemble and whole-ensemble statistics.

    Each subensemble uses ``angles`` if given, else its entry in ``presets``
    (defaulting to the scenario presets).  The whole ensemble uses ``angles``
    or the first subensemble's angles.
    """
    if not records:
        raise ValueError("no records to analyze")
    kinds = {r.scenario for r in records}
    if len(kinds) != 1:
        raise ValueError(f"records mix scenarios {sorted(kinds)}")
    kind = kinds.pop()
    if presets is None:
        presets = GHZ_PRESETS if kind == "ghz" else FACTORABLE_PRESETS
    parts = partition_records(records)
    subs = []
    for label, recs in parts.items():
        ang = angles if angles is not None else presets.get(label, next(iter(presets.values())))
        subs.append(estimate_stats(recs, ang, label=label).to_dict())
    whole_angles = angles if angles is not None else presets.get(next(iter(parts)), next(iter(presets.values())))
    whole = estimate_stats(records, whole_angles, label=None).to_dict()
    return {
        "scenario": kind,
        "total": len(records),
        "subensembles": subs,
        "whole": whole,
    }


# ---------------------------------------------------------------- exact CHSH


def exact_chsh(state, angles: Sequence) -> float:
    a, a2, b, b2 = (_as_direction(x) for x in angles)
    E = born.correlator
    return E(state, a, b) + E(state, a, b2) + E(state, a2, b) - E(state, a2, b2)


def _correlator_table(state, a_angles, b_angles) -> np.ndarray:
    dirs_a = [BlochDirection.from_xz(x) for x in a_angles]
    dirs_b = [BlochDirection.from_xz(x) for x in b_angles]
    return np.array([[born.correlator(state, a, b) for b in dirs_b] for a in dirs_a])


def _chsh_block(state, a_vals, a2_vals, b_vals, b2_vals) -> np.ndarray:
    """S over the outer product of four angle arrays, shape (len a, len a', len b, len b')."""
    e_ab = _correlator_table(state, a_vals, b_vals)[:, None, :, None]
    e_ab2 = _correlator_table(state, a_vals, b2_vals)[:, None, None, :]
    e_a2b = _correlator_table(state, a2_vals, b_vals)[None, :, :, None]
    e_a2b2 = _correlator_table(state, a2_vals, b2_vals)[None, :, None, :]
    return e_ab + e_ab2 + e_a2b - e_a2b2


def chsh_grid_scan(state, grid: int = 24) -> tuple[float, tuple[float, float, float, float]]:
    """Max ``|S|`` over ``grid**4`` x-z plane angle quadruples on ``[0, pi)``.

    Angles outside ``[0, pi)`` only flip the sign of a spin observable, so
    this covers every x-z quadruple up to sign.
    """
    if grid < 1:
        raise ValueError("grid must be >= 1")
    g = np.arange(grid) * math.pi / grid
    e = _correlator_table(state, g, g)
    s = e[:, None, :, None] + e[:, None, None, :] + e[None, :, :, None] - e[None, :, None, :]
    flat = int(np.argmax(np.abs(s)))
    i, j, k, l = np.unravel_index(flat, s.shape)
    return float(abs(s.flat[flat])), (float(g[i]), float(g[j]), float(g[k]), float(g[l]))


def optimal_chsh_angles(state, grid: int = 24, rounds: int = 40) -> tuple[tuple[float, ...], float]:
    """Coarse-to-fine search for x-z angles maximizing ``S`` (signed).

    Starts from a ``grid``-point scan over ``[-pi, pi)`` and then repeatedly
    scans a 5-point window per angle around the incumbent, halving the window
    whenever the incumbent does not move.  Coarse-grid ties are broken toward
    small magnitudes and then positive angles, so the result is reproducible.
    """
    g = -math.pi + np.arange(grid) * 2 * math.pi / grid
    s = _chsh_block(state, g, g, g, g)
    # Many quadruples tie; prefer small magnitudes, then positive angles.
    ties = np.argwhere(s >= s.max() - 1e-12)
    quads = g[ties]
    key = min(range(len(quads)), key=lambda r: tuple(np.abs(quads[r])) + tuple(-quads[r]))
    best = quads[key]
    best_val = float(s[tuple(ties[key])])
    step = 2 * math.pi / grid
    offsets = np.linspace(-1, 1, 5)
    for _ in range(rounds):
        cand = [x + step * offsets for x in best]
        s = _chsh_block(state, *cand)
        idx = np.unravel_index(int(np.argmax(s)), s.shape)
        val = float(s[idx])
        if val > best_val + 1e-13:
            best = np.array([cand[n][i] for n, i in enumerate(idx)])
            best_val = val
        else:
            step /= 2
    return tuple(float(math.remainder(x, 2 * math.pi)) for x in best), best_val


# ---------------------------------------------------------------- exact conditionals


def exact_joint(scenario: Scenario, a1: BlochDirection, a2: BlochDirection, order: Sequence[str] = ("o1", "o2", "ancilla")) -> dict:
    """Exact distribution of ``(o1, o2, ancilla)`` when measuring in ``order``.

    ``order`` is a permutation of the names ``o1``, ``o2``, ``ancilla``;
    keys of the result are always ``(o1, o2, ancilla)``.
    """
    if sorted(order) != ["ancilla", "o1", "o2"]:
        raise ValueError(f"bad measurement order {order!r}")
    f1, f2 = scenario.local_families(a1, a2)
    fams = {"o1": f1, "o2": f2, "ancilla": scenario.ancilla_family()}
    dist = joint_distribution(scenario.state(), [fams[k] for k in order])
    pos = [list(order).index(k) for k in ("o1", "o2", "ancilla")]
    return {tuple(path[p] for p in pos): p for path, p in dist.items()}


def conditional_given_ancilla(joint: dict) -> dict:
    """``P(o1, o2 | ancilla)`` from a joint table; zero-probability ancilla outcomes are dropped."""
    marg = defaultdict(float)
    for (o1, o2, anc), p in joint.items():
        marg[anc] += p
    return {
        anc: {(o1, o2): p / marg[anc] for (o1, o2, a), p in joint.items() if a == anc}
        for anc in marg
        if marg[anc] > born.ZERO_PROB
    }


def bayes_check(theta1: BlochDirection, theta2: BlochDirection, theta3: BlochDirection) -> float:
    """Largest gap between the preselected conditional and the Bayes-reversed one.

    Left side: measure the ancilla first, collapse, then read ``P(j | i)``.
    Right side: measure particles 1, 2 first and combine
    ``P(j) P(i | j) / P(i)``.
    """
    psi = build_ghz()
    f1, f2 = spin_family(theta1, 0, 3), spin_family(theta2, 1, 3)
    f3 = spin_family(theta3, 2, 3)
    p3 = outcome_probabilities(psi, f3)
    worst = 0.0
    for ii, i in enumerate(f3.labels):
        if p3[ii] < born.ZERO_PROB:
            raise born.ZeroProbabilityError(f"ancilla outcome {i} has zero probability")
        pre = collapse(psi, f3, ii)
        for (k1, j1), (k2, j2) in product(enumerate(f1.labels), enumerate(f2.labels)):
            # preselected: P(j | i) = P(j1 | i) P(j2 | i, j1)
            q1 = outcome_probabilities(pre, f1)[k1]
            lhs = 0.0
            if q1 > born.ZERO_PROB:
                lhs = q1 * outcome_probabilities(collapse(pre, f1, k1), f2)[k2]
            # postselected: P(j), then P(i | j) after collapsing on j
            r1 = outcome_probabilities(psi, f1)[k1]
            p_j, p_i_given_j = 0.0, 0.0
            if r1 > born.ZERO_PROB:
                s1 = collapse(psi, f1, k1)
                r2 = outcome_probabilities(s1, f2)[k2]
                p_j = r1 * r2
                if r2 > born.ZERO_PROB:
                    p_i_given_j = outcome_probabilities(collapse(s1, f2, k2), f3)[ii]
            rhs = p_j * p_i_given_j / p3[ii]
            worst = max(worst, abs(lhs - rhs))
    return worst


__all__ = [
    "FACTORABLE_PRESETS",
    "GHZ_PRESETS",
    "ConditionalBranch",
    "CorrelatorEstimate",
    "Scenario",
    "SubensembleStats",
    "TrialRecord",
    "analyze",
    "bayes_check",
    "build_factorable",
    "build_ghz",
    "chsh_grid_scan",
    "chsh_menu",
    "conditional_given_ancilla",
    "conditional_pair_state",
    "estimate_stats",
    "exact_chsh",
    "exact_joint",
    "matching_bell_label",
    "optimal_chsh_angles",
    "partition_records",
    "preset_menu",
    "read_jsonl",
    "run_trials",
    "swap_outcome_state",
    "write_jsonl",
]
