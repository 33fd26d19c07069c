import math

import numpy as np
import pytest
from hypothesis import strategies as st

from cfent.qcore import BlochDirection

_ACCEPTANCE = []


@st.composite
def directions(draw):
    theta = draw(st.floats(0.0, math.pi, allow_nan=False))
    phi = draw(st.floats(0.0, 2 * math.pi, exclude_max=True, allow_nan=False))
    return BlochDirection(theta, phi)


@st.composite
def states(draw, n_qubits=2):
    dim = 2**n_qubits
    parts = draw(st.lists(st.floats(-1, 1, allow_nan=False), min_size=2 * dim, max_size=2 * dim))
    v = np.array(parts[:dim]) + 1j * np.array(parts[dim:])
    norm = np.linalg.norm(v)
    if norm < 1e-3:
        v = np.zeros(dim, dtype=complex)
        v[0] = 1
        return v
    return v / norm


def random_state(rng, n_qubits):
    v = rng.normal(size=2**n_qubits) + 1j * rng.normal(size=2**n_qubits)
    return v / np.linalg.norm(v)


def random_density(rng, n_qubits):
    a = rng.normal(size=(2**n_qubits,) * 2) + 1j * rng.normal(size=(2**n_qubits,) * 2)
    rho = a @ a.conj().T
    return rho / np.trace(rho)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
