"""Consistent-histories checks for projector chains.

A chain is an initial projector ``D``, a time-ordered list of projector
families, and a final projector ``F``.  For selections ``a`` and ``b`` (one
projector per family) the decoherence functional is
``Tr(C_a D C_b^dagger F)`` with ``C_a = E_n^{a_n} ... E_1^{a_1}``.  The chain
is consistent when the real part vanishes for every pair of distinct
selections; then ``Tr(C_a D C_a^dagger F) / Tr(D F)`` is a probability.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Sequence

import numpy as np

from .born import ProjectorFamily, bell_family
from .protocols import (
    Scenario,
    build_factorable,
    build_ghz,
    conditional_pair_state,
    matching_bell_label,
    swap_outcome_state,
)
from .qcore import (
    BlochDirection,
    as_operator,
    bell_state,
    is_product_pure,
    is_projector,
    projector,
    spin_state,
    tensor,
)

CONSISTENCY_TOL = 1e-10
DENOM_TOL = 1e-12


class InconsistentChainError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class HistoryChain:
    initial: np.ndarray
    events: tuple
    final: np.ndarray

    def __post_init__(self):
        d = as_operator(self.initial)
        f = as_operator(self.final)
        object.__setattr__(self, "initial", d)
        object.__setattr__(self, "final", f)
        object.__setattr__(self, "events", tuple(self.events))
        if d.shape != f.shape or any(e.dim != d.shape[0] for e in self.events):
            raise ValueError("chain operators differ in dimension")
        if not is_projector(d) or not is_projector(f):
            raise ValueError("initial and final operators must be projectors")

    def selections(self):
        return product(*(range(len(e.projectors)) for e in self.events))

    def class_operator(self, selection: Sequence[int]) -> np.ndarray:
        if len(selection) != len(self.events):
            raise ValueError("need one choice per event time")
        c = np.eye(self.initial.shape[0], dtype=complex)
        for fam, k in zip(self.events, selection):
            c = fam.projectors[k] @ c
        return c


def decoherence(chain: HistoryChain, a: Sequence[int], b: Sequence[int]) -> complex:
    ca, cb = chain.class_operator(a), chain.class_operator(b)
    return complex(np.trace(ca @ chain.initial @ cb.conj().T @ chain.final))


def consistency_defect(chain: HistoryChain) -> float:
    """Largest ``|Re D(a, b)|`` over distinct selections ``a != b``."""
    ops = [chain.class_operator(s) for s in chain.selections()]
    worst = 0.0
    for ca, cb in combinations(ops, 2):
        val = np.trace(ca @ chain.initial @ cb.conj().T @ chain.final).real
        worst = max(worst, abs(val))
    return float(worst)


def history_probability(chain: HistoryChain, selection: Sequence[int], check: bool = True) -> float:
    """Conditional probability of the selected history given ``D`` and ``F``.

    Refuses inconsistent chains unless ``check`` is False (the caller has
    already verified consistency).
    """
    denom = np.trace(chain.initial @ chain.final).real
    if denom <= DENOM_TOL:
        raise ValueError(f"Tr(D F) = {denom:.3g}: final event incompatible with initial state")
    if check:
        defect = consistency_defect(chain)
        if defect >= CONSISTENCY_TOL:
            raise InconsistentChainError(f"consistency defect {defect:.3g}")
    return decoherence(chain, selection, selection).real / denom


def build_final_projector(
    scenario: Scenario,
    outcomes: tuple[int, int],
    ancilla_outcome,
    theta1: BlochDirection,
    theta2: BlochDirection,
) -> np.ndarray:
    """Rank-1 projector onto the recorded final outcomes of particles 1, 2 and the ancilla.

    For the GHZ scenario ``ancilla_outcome`` is the spin result along
    ``scenario.ancilla_direction``; for the factorable one it is a Bell label
    for particles 3, 4.
    """
    i, j = outcomes
    local = tensor(spin_state(theta1, i), spin_state(theta2, j))
    if scenario.kind == "ghz":
        anc = spin_state(scenario.ancilla_direction, ancilla_outcome)
    else:
        anc = bell_state(ancilla_outcome)
    return projector(tensor(local, anc))


_BRANCH_LABELS = ("branch_plus", "branch_minus", "up_down", "down_up")


def _branch_family(direction: BlochDirection) -> ProjectorFamily:
    """Two-qubit family holding both GHZ conditional branches and the anti-aligned pair states."""
    plus = conditional_pair_state(direction, 1).state
    minus = conditional_pair_state(direction, -1).state
    ud = np.array([0, 1, 0, 0], dtype=complex)
    du = np.array([0, 0, 1, 0], dtype=complex)
    return ProjectorFamily(tuple(projector(v) for v in (plus, minus, ud, du)), _BRANCH_LABELS)


@dataclass
class OutcomeEntry:
    i: int
    j: int
    trDF: float
    defect: float | None = None
    probabilities: dict = field(default_factory=dict)
    skipped: bool = False

    def to_dict(self) -> dict:
        return {
            "i": self.i, "j": self.j, "trDF": self.trDF, "skipped": self.skipped,
            "defect": self.defect, "probabilities": self.probabilities,
        }


@dataclass
class Certificate:
    scenario: str
    theta1: BlochDirection
    theta2: BlochDirection
    ancilla_outcome: int | str
    event_basis: str
    designated: str
    designated_entangled: bool
    degenerate: bool
    entries: list[OutcomeEntry]
    passed: bool

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "theta1": [self.theta1.theta, self.theta1.phi],
            "theta2": [self.theta2.theta, self.theta2.phi],
            "ancilla_outcome": self.ancilla_outcome,
            "event_basis": self.event_basis,
            "designated": self.designated,
            "designated_entangled": self.designated_entangled,
            "degenerate": self.degenerate,
            "entries": [e.to_dict() for e in self.entries],
            "pass": self.passed,
        }


def counterfactual_certificate(
    scenario: Scenario,
    theta1: BlochDirection,
    theta2: BlochDirection,
    ancilla_outcome=None,
    tol: float = CONSISTENCY_TOL,
) -> Certificate:
    """Check that an intermediate pair-state projection has probability one.

    The event at the intermediate time is a measurement on particles 1, 2 in
    the Bell basis when the postselected pair state is a Bell state, and
    otherwise in the basis of the GHZ conditional branches.  The certificate
    passes when every final outcome with ``Tr(D F) > 1e-12`` gives a
    consistent chain, probability 1 for the designated projector and 0 for
    the rest, and the designated state is entangled.
    """
    n = scenario.num_qubits
    if scenario.kind == "ghz":
        if ancilla_outcome is None:
            ancilla_outcome = 1
        d = projector(build_ghz())
        branch = conditional_pair_state(scenario.ancilla_direction, ancilla_outcome)
        degenerate = branch.degenerate
        target = branch.state
    else:
        if ancilla_outcome is None:
            ancilla_outcome = "phi_plus"
        d = projector(build_factorable())
        degenerate = False
        target = swap_outcome_state(ancilla_outcome)

    label = None if degenerate else matching_bell_label(target)
    if label is not None:
        family, basis, designated = bell_family(), "bell", label
    else:
        family, basis = _branch_family(scenario.ancilla_direction), "branch"
        designated = "branch_plus" if ancilla_outcome == 1 else "branch_minus"
    events = (family.lifted([0, 1], n),)
    entangled = not is_product_pure(target)

    entries = []
    ok = True
    for i, j in product((1, -1), repeat=2):
        f = build_final_projector(scenario, (i, j), ancilla_outcome, theta1, theta2)
        tr_df = float(np.trace(d @ f).real)
        if tr_df <= DENOM_TOL:
            entries.append(OutcomeEntry(i, j, tr_df, skipped=True))
            continue
        chain = HistoryChain(d, events, f)
        defect = consistency_defect(chain)
        probs = {
            lab: history_probability(chain, (k,), check=False)
            for k, lab in enumerate(family.labels)
        }
        entries.append(OutcomeEntry(i, j, tr_df, defect, probs))
        ok &= defect < tol
        ok &= all(abs(p - (1.0 if lab == designated else 0.0)) <= tol for lab, p in probs.items())
    ok &= any(not e.skipped for e in entries)
    return Certificate(
        scenario=scenario.kind,
        theta1=theta1,
        theta2=theta2,
        ancilla_outcome=ancilla_outcome,
        event_basis=basis,
        designated=designated,
        designated_entangled=entangled,
        degenerate=degenerate,
        entries=entries,
        passed=bool(ok and entangled and not degenerate),
    )

