import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, d=2):
    X = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = X @ X.conj().T
    return rho / np.trace(rho)


def random_kraus(rng, d=2, n_ops=3):
    """Kraus operators of a random CPTP map (isometry from a random matrix)."""
    X = rng.normal(size=(n_ops * d, d)) + 1j * rng.normal(size=(n_ops * d, d))
    Q, _ = np.linalg.qr(X)
    return Q.reshape(n_ops, d, d)


def kraus_superop(kraus):
    return sum(np.kron(K.conj(), K) for K in kraus)
