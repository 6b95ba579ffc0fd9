"""Shared instances and random-model generators for the test suite."""

import numpy as np
import pytest

import losscost as lc


def k1_instance():
    """Single class, lam = mu = omega = bandwidth = 1, capacity 2.

    Hand-derived reference values: pi = (0.4, 0.4, 0.2), G = 2.5, g = 0.2,
    relative costs (0, 0.2, 0.6), shadow prices (0.2, 0.4).
    """
    classes = (lc.TrafficClass(lam=1.0, mu=1.0, bandwidth=1, omega=1),)
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=2))
    return classes, space


def k2_reference():
    """Two classes with distinct bandwidths and costs on a shared link."""
    classes = (
        lc.TrafficClass(lam=1.0, mu=1.0, bandwidth=1, omega=1),
        lc.TrafficClass(lam=0.5, mu=1.0, bandwidth=2, omega=2),
    )
    space = lc.enumerate_states(classes, lc.FullSharing(capacity=4))
    return classes, space


def random_instance(rng, symmetric=False, max_classes=3, max_capacity=12):
    """Random small instance; both policy kinds, loads spanning light to heavy."""
    K = int(rng.integers(1, max_classes + 1))
    if symmetric:
        mu = float(rng.uniform(0.5, 2.0))
        b = int(rng.integers(1, 3))
        classes = tuple(
            lc.TrafficClass(lam=float(rng.uniform(0.1, 3.0)), mu=mu, bandwidth=b,
                            omega=int(rng.integers(0, 4)))
            for _ in range(K)
        )
        policy = lc.FullSharing(capacity=b * int(rng.integers(2, max_capacity + 1)))
    else:
        classes = tuple(
            lc.TrafficClass(
                lam=float(rng.uniform(0.1, 3.0)),
                mu=float(rng.uniform(0.3, 3.0)),
                bandwidth=int(rng.integers(1, 4)),
                omega=int(rng.integers(0, 4)),
            )
            for _ in range(K)
        )
        if rng.random() < 0.5:
            policy = lc.FullSharing(capacity=int(rng.integers(2, max_capacity + 1)))
        else:
            policy = lc.PerClassThreshold(
                thresholds=tuple(int(rng.integers(1, 5)) for _ in range(K))
            )
    return classes, lc.enumerate_states(classes, policy)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
