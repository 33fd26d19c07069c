"""Postselected Bell statistics from separable and factorable two-qubit mixtures."""

__version__ = "0.1.0"
