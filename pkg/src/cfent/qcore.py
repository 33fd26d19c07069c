"""Dense linear algebra for small multi-qubit systems.

States are 1-D complex arrays of length ``2**n``; operators and density
matrices are 2-D complex arrays.  Particle ``0`` is the most significant bit of
the basis index and bit value ``0`` means spin up along z, so ``|up up down>``
is basis index ``0b001``.  Particle indices in this module are 0-based.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

ATOL = 1e-12
EIG_ATOL = 1e-10

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)

UP = np.array([1, 0], dtype=complex)
DOWN = np.array([0, 1], dtype=complex)

BELL_LABELS = ("phi_plus", "phi_minus", "psi_plus", "psi_minus")


@dataclass(frozen=True)
class BlochDirection:
    """Measurement axis given by polar angle ``theta`` and azimuth ``phi``."""

    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.theta) and math.isfinite(self.phi)):
            raise ValueError("direction angles must be finite")
        if not -ATOL <= self.theta <= math.pi + ATOL:
            raise ValueError(f"theta={self.theta} outside [0, pi]")
        if not -ATOL <= self.phi < 2 * math.pi:
            raise ValueError(f"phi={self.phi} outside [0, 2pi)")

    @classmethod
    def from_xz(cls, angle: float) -> "BlochDirection":
        """Direction ``(sin a, 0, cos a)`` in the x-z plane, for any real ``a``."""
        a = math.remainder(angle, 2 * math.pi)  # (-pi, pi]
        if a >= 0:
            return cls(a, 0.0)
        return cls(-a, math.pi)

    @property
    def vector(self) -> np.ndarray:
        st = math.sin(self.theta)
        return np.array([st * math.cos(self.phi), st * math.sin(self.phi), math.cos(self.theta)])

    def is_z_parallel(self, tol: float = 1e-9) -> bool:
        return abs(math.sin(self.theta)) < tol


def random_direction(rng: np.random.Generator) -> BlochDirection:
    """Direction drawn uniformly from the Bloch sphere."""
    return BlochDirection(math.acos(rng.uniform(-1.0, 1.0)), rng.uniform(0.0, 2 * math.pi))


Z = BlochDirection(0.0, 0.0)
X = BlochDirection(math.pi / 2, 0.0)
Y = BlochDirection(math.pi / 2, math.pi / 2)


def num_qubits(dim: int) -> int:
    n = int(dim).bit_length() - 1
    if n < 1 or 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two >= 2")
    return n


def as_state(v, atol: float = ATOL) -> np.ndarray:
    """Validate ``v`` as a normalized n-qubit state and return it as an array."""
    v = np.asarray(v, dtype=complex)
    if v.ndim != 1:
        raise ValueError("state vector must be one-dimensional")
    num_qubits(v.shape[0])
    if not np.all(np.isfinite(v)):
        raise ValueError("state vector has non-finite amplitudes")
    norm2 = float(np.vdot(v, v).real)
    if abs(norm2 - 1.0) > atol:
        raise ValueError(f"state vector not normalized (|v|^2 = {norm2!r})")
    return v


def as_operator(a) -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"operator must be a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("operator has non-finite entries")
    return a


def is_hermitian(a: np.ndarray, atol: float = ATOL) -> bool:
    return bool(np.allclose(a, a.conj().T, rtol=0, atol=atol))


def is_projector(p: np.ndarray, atol: float = ATOL) -> bool:
    return is_hermitian(p, atol) and bool(np.allclose(p @ p, p, rtol=0, atol=atol))


def as_density(rho, atol: float = ATOL) -> np.ndarray:
    """Validate a density matrix: Hermitian, unit trace, positive semidefinite."""
    rho = as_operator(rho)
    num_qubits(rho.shape[0])
    if not is_hermitian(rho, atol):
        raise ValueError("density matrix is not Hermitian")
    tr = np.trace(rho)
    if abs(tr - 1.0) > atol:
        raise ValueError(f"density matrix trace is {tr}, expected 1")
    if np.linalg.eigvalsh(rho).min() < -EIG_ATOL:
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def density(state) -> np.ndarray:
    """``|v><v|`` for a state, or a validated copy of a density matrix."""
    arr = np.asarray(state, dtype=complex)
    if arr.ndim == 1:
        return projector(arr)
    return as_density(arr)


def tensor(*factors) -> np.ndarray:
    """Kronecker product; earlier factors occupy the high-order bits.

    All factors must be of one kind: all vectors or all matrices.
    """
    if not factors:
        raise ValueError("tensor needs at least one factor")
    arrs = [np.asarray(f, dtype=complex) for f in factors]
    kinds = {a.ndim for a in arrs}
    if len(kinds) != 1 or kinds.pop() not in (1, 2):
        raise TypeError("tensor operands must all be state vectors or all be operators")
    return reduce(np.kron, arrs)


def projector(v) -> np.ndarray:
    v = as_state(v)
    return np.outer(v, v.conj())


def partial_trace(rho, keep: Iterable[int]) -> np.ndarray:
    """Reduced density matrix on the particles in ``keep`` (kept in ascending order)."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim == 1:
        rho = projector(rho)
    n = num_qubits(rho.shape[0])
    keep = sorted(set(keep))
    if not keep:
        raise ValueError("keep set must be nonempty")
    if keep[0] < 0 or keep[-1] >= n:
        raise ValueError(f"particle index out of range for {n} qubits: {keep}")
    traced = [q for q in range(n) if q not in keep]
    t = rho.reshape([2] * (2 * n))
    # Trace from the highest axis down so remaining axis numbers stay valid.
    for q in reversed(traced):
        m = t.ndim // 2
        t = np.trace(t, axis1=q, axis2=q + m)
    d = 2 ** len(keep)
    return t.reshape(d, d)


def permute_qubits(x, order: Sequence[int]) -> np.ndarray:
    """Reorder particles so that new particle ``k`` is old particle ``order[k]``.

    Works for state vectors and for operators.
    """
    x = np.asarray(x, dtype=complex)
    n = num_qubits(x.shape[0])
    order = list(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of {n} particles")
    if x.ndim == 1:
        return x.reshape([2] * n).transpose(order).reshape(-1)
    axes = order + [n + q for q in order]
    return x.reshape([2] * (2 * n)).transpose(axes).reshape(2**n, 2**n)


def embed(op, targets: Sequence[int], n: int) -> np.ndarray:
    """Lift an operator on ``targets`` (in that order) to the full ``n``-qubit space."""
    op = as_operator(op)
    targets = list(targets)
    k = len(targets)
    if op.shape[0] != 2**k:
        raise ValueError(f"operator of dim {op.shape[0]} does not act on {k} qubits")
    if len(set(targets)) != k or min(targets) < 0 or max(targets) >= n:
        raise ValueError(f"bad targets {targets} for {n} qubits")
    rest = [q for q in range(n) if q not in targets]
    full = np.kron(op, np.eye(2 ** len(rest), dtype=complex))
    # full acts on particle order targets + rest; move back to natural order.
    current = targets + rest
    inverse = [current.index(q) for q in range(n)]
    return permute_qubits(full, inverse)


def spin_operator(n: BlochDirection) -> np.ndarray:
    x, y, z = n.vector
    return x * SX + y * SY + z * SZ


def spin_eigenbasis(n: BlochDirection) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvectors of ``sigma . n`` for eigenvalues +1 and -1.

    Phase convention: ``up = (cos t/2, e^{i phi} sin t/2)`` and
    ``down = (sin t/2, -e^{i phi} cos t/2)``; real in the x-z plane.
    """
    c, s = math.cos(n.theta / 2), math.sin(n.theta / 2)
    ph = complex(math.cos(n.phi), math.sin(n.phi))
    return np.array([c, ph * s]), np.array([s, -ph * c])


def spin_state(n: BlochDirection, outcome: int) -> np.ndarray:
    up, down = spin_eigenbasis(n)
    if outcome == 1:
        return up
    if outcome == -1:
        return down
    raise ValueError(f"spin outcome must be +1 or -1, got {outcome!r}")


def bell_basis() -> list[np.ndarray]:
    """``[phi_plus, phi_minus, psi_plus, psi_minus]`` in the z basis."""
    r = 1 / math.sqrt(2)
    return [
        np.array([r, 0, 0, r], dtype=complex),
        np.array([r, 0, 0, -r], dtype=complex),
        np.array([0, r, r, 0], dtype=complex),
        np.array([0, r, -r, 0], dtype=complex),
    ]


def bell_state(label: str) -> np.ndarray:
    try:
        return bell_basis()[BELL_LABELS.index(label)]
    except ValueError:
        raise ValueError(f"unknown Bell label {label!r}") from None


def fidelity(a, b) -> float:
    """``|<a|b>|^2`` for pure states; insensitive to global phase."""
    return float(abs(np.vdot(a, b)) ** 2)


def is_product_pure(v, atol: float = ATOL) -> bool:
    """True when every single-qubit reduction of the pure state ``v`` is pure."""
    v = as_state(v)
    n = num_qubits(v.shape[0])
    for q in range(n):
        r = partial_trace(v, [q])
        if abs(np.trace(r @ r).real - 1.0) > atol:
            return False
    return True
