"""Shared small problem instances.

Everything here is deliberately tiny: unit tests that need a real network
should still run in milliseconds.  The desk-scale experiment lives in
test_acceptance.py with its own (larger) setup.
"""
import numpy as np
import pytest

from adamdo import build_ring, random_quadratic, synthetic_logistic


@pytest.fixture(scope="session")
def ring5():
    return build_ring(5)


@pytest.fixture(scope="session")
def synth_small():
    """m=5 nodes, n=30 samples each, d=8 — fast nonconvex sigmoid network."""
    return synthetic_logistic(5, 30, 8, seed=7)


@pytest.fixture(scope="session")
def quad_small():
    """m=5 deterministic quadratics (n=1 per node), d=6."""
    return random_quadratic(5, 6, seed=11)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
