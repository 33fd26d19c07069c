"""Projective measurement: Born probabilities, collapse and seeded sampling."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Hashable, Sequence

import numpy as np

from .qcore import (
    ATOL,
    BELL_LABELS,
    BlochDirection,
    as_operator,
    as_state,
    bell_basis,
    embed,
    is_hermitian,
    num_qubits,
    projector,
    spin_eigenbasis,
    spin_operator,
    tensor,
)

ZERO_PROB = 1e-12


class ZeroProbabilityError(ValueError):
    """Raised when collapsing onto an outcome that cannot occur."""


@dataclass(frozen=True, eq=False)
class ProjectorFamily:
    """Complete set of mutually orthogonal projectors with outcome labels."""

    projectors: tuple
    labels: tuple

    def __post_init__(self):
        ps = tuple(as_operator(p) for p in self.projectors)
        object.__setattr__(self, "projectors", ps)
        object.__setattr__(self, "labels", tuple(self.labels))
        if not ps or len(ps) != len(self.labels):
            raise ValueError("need one label per projector")
        dim = ps[0].shape[0]
        if any(p.shape != (dim, dim) for p in ps):
            raise ValueError("projectors differ in dimension")
        for i, p in enumerate(ps):
            for q in ps[i + 1 :]:
                if not np.allclose(p @ q, 0, atol=ATOL):
                    raise ValueError("projectors are not mutually orthogonal")
            if not np.allclose(p @ p, p, atol=ATOL) or not is_hermitian(p):
                raise ValueError("family member is not a projector")
        if not np.allclose(sum(ps), np.eye(dim), atol=ATOL):
            raise ValueError("projectors do not sum to the identity")

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def index(self, label: Hashable) -> int:
        return self.labels.index(label)

    def lifted(self, targets: Sequence[int], n: int) -> "ProjectorFamily":
        """The same family acting on ``targets`` of an ``n``-qubit system."""
        return ProjectorFamily(tuple(embed(p, targets, n) for p in self.projectors), self.labels)


def spin_family(direction: BlochDirection, particle: int = 0, n: int = 1) -> ProjectorFamily:
    """Outcomes ``(+1, -1)`` of ``sigma . direction`` on one particle."""
    up, down = spin_eigenbasis(direction)
    fam = ProjectorFamily((projector(up), projector(down)), (1, -1))
    return fam if n == 1 else fam.lifted([particle], n)


def bell_family(targets: Sequence[int] = (0, 1), n: int = 2) -> ProjectorFamily:
    fam = ProjectorFamily(tuple(projector(b) for b in bell_basis()), BELL_LABELS)
    return fam if n == 2 else fam.lifted(targets, n)


@dataclass(frozen=True)
class MeasurementSetting:
    particle: int
    direction: BlochDirection

    def family(self, n: int) -> ProjectorFamily:
        if not 0 <= self.particle < n:
            raise ValueError(f"particle {self.particle} out of range for {n} qubits")
        return spin_family(self.direction, self.particle, n)


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream for one trial.

    Philox is counter-based: the key is ``seed`` and ``stream_id`` occupies the
    third 64-bit word of the counter, so each trial's draws depend only on
    ``(seed, stream_id)`` and never on which other trials ran.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < 2**64 or not 0 <= self.stream_id < 2**64:
            raise ValueError("seed and stream_id must be unsigned 64-bit integers")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(counter=[0, 0, self.stream_id, 0], key=self.seed))


class StreamFactory:
    """Reusable generator that is rewound to ``RngStream(seed, k)`` on demand.

    Produces the same draws as ``RngStream(seed, k).generator()`` without
    constructing a new bit generator per trial.
    """

    def __init__(self, seed: int):
        RngStream(seed)
        self.seed = seed
        self._bitgen = np.random.Philox(key=seed)
        self._gen = np.random.Generator(self._bitgen)
        self._key = np.array([seed, 0], dtype=np.uint64)

    def stream(self, stream_id: int) -> np.random.Generator:
        self._bitgen.state = {
            "bit_generator": "Philox",
            "state": {"counter": np.array([0, 0, stream_id, 0], dtype=np.uint64), "key": self._key},
            "buffer": np.zeros(4, dtype=np.uint64),
            "buffer_pos": 4,
            "has_uint32": 0,
            "uinteger": 0,
        }
        return self._gen


def _check_dims(state: np.ndarray, family: ProjectorFamily):
    if state.shape[0] != family.dim:
        raise ValueError(f"state dim {state.shape[0]} does not match family dim {family.dim}")


def outcome_probabilities(state, family: ProjectorFamily) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    _check_dims(state, family)
    if state.ndim == 1:
        probs = [np.vdot(state, p @ state).real for p in family.projectors]
    else:
        probs = [np.trace(p @ state).real for p in family.projectors]
    return np.clip(np.array(probs), 0.0, 1.0)


def collapse(state, family: ProjectorFamily, outcome_index: int) -> np.ndarray:
    """Post-measurement state ``P|psi>/|P|psi>|``."""
    state = as_state(state)
    _check_dims(state, family)
    v = family.projectors[outcome_index] @ state
    p = np.vdot(v, v).real
    if p < ZERO_PROB:
        raise ZeroProbabilityError(
            f"outcome {family.labels[outcome_index]!r} has probability {p:.3g}"
        )
    return v / np.sqrt(p)


def sample_index(probs: Sequence[float], u: float) -> int:
    """Index selected by the uniform draw ``u`` against cumulative ``probs``.

    Outcomes below the zero-probability threshold are never returned.
    """
    probs = [p if p >= ZERO_PROB else 0.0 for p in probs]
    x = u * sum(probs)
    acc = 0.0
    last = 0
    for k, p in enumerate(probs):
        if p > 0:
            acc += p
            last = k
            if x < acc:
                return k
    return last


def measure_sequence(state, settings: Sequence[MeasurementSetting], rng: RngStream):
    """Measure the settings in list order; return ``(outcomes, final_state)``.

    One uniform is drawn per measurement, so the same stream always gives the
    same outcomes.
    """
    state = as_state(state)
    n = num_qubits(state.shape[0])
    gen = rng.generator()
    outcomes = []
    for s in settings:
        fam = s.family(n)
        k = sample_index(outcome_probabilities(state, fam), gen.random())
        state = collapse(state, fam, k)
        outcomes.append(fam.labels[k])
    return outcomes, state


def joint_distribution(state, families: Sequence[ProjectorFamily]) -> dict[tuple, float]:
    """Exact probability of every outcome path when measuring ``families`` in order.

    Zero-probability paths are included with probability 0.
    """
    state = as_state(state)
    dist = {}

    def walk(psi, prefix, weight, rest):
        if not rest:
            dist[prefix] = weight
            return
        fam = rest[0]
        probs = outcome_probabilities(psi, fam)
        for k, lab in enumerate(fam.labels):
            if probs[k] < ZERO_PROB:
                for tail in product(*(f.labels for f in rest[1:])):
                    dist[prefix + (lab,) + tail] = 0.0
                continue
            walk(collapse(psi, fam, k), prefix + (lab,), weight * probs[k], rest[1:])

    walk(state, (), 1.0, list(families))
    return dist


def expectation(state, obs) -> float:
    obs = as_operator(obs)
    if not is_hermitian(obs):
        raise ValueError("observable is not Hermitian")
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        val = np.vdot(state, obs @ state)
    else:
        val = np.trace(state @ obs)
    if abs(val.imag) > 1e-10:
        raise ValueError(f"expectation has imaginary part {val.imag}")
    return float(val.real)


def correlator(state, a: BlochDirection, b: BlochDirection) -> float:
    """``E(a, b) = <(sigma.a) x (sigma.b)>`` on a two-qubit state."""
    state = np.asarray(state, dtype=complex)
    if state.shape[0] != 4:
        raise ValueError("correlator needs a two-qubit state")
    return expectation(state, tensor(spin_operator(a), spin_operator(b)))
