import numpy as np
import pytest


def rel_err(value, reference) -> float:
    """Relative Frobenius error with denominator max(1, ||reference||_F)."""
    value = np.asarray(value, dtype=float)
    reference = np.asarray(reference, dtype=float)
    return float(np.linalg.norm(value - reference)
                 / max(1.0, np.linalg.norm(reference)))


def random_spd(rng, n, jitter=1.0):
    a = rng.standard_normal((n, n))
    return a @ a.T + jitter * np.eye(n)


def random_sym(rng, n, scale=1.0):
    a = rng.standard_normal((n, n))
    return 0.5 * scale * (a + a.T)


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@pytest.fixture
def rng():
    return np.random.default_rng(20240831)
