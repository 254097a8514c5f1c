import numpy as np
import pytest


def random_spd(rng, d, cond=None):
    """Random SPD matrix from a random orthogonal basis and a chosen spectrum.

    With ``cond`` set, eigenvalues are log-spaced to hit that condition
    number exactly; otherwise they are drawn uniformly from [0.5, 2.5].
    """
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    if cond is None:
        eigs = rng.uniform(0.5, 2.5, size=d)
    else:
        eigs = np.logspace(0, np.log10(cond), d)
    m = (q * eigs) @ q.T
    return 0.5 * (m + m.T)


def random_correlation(rng, d):
    """Random full-rank correlation matrix (unit diagonal, SPD)."""
    a = rng.standard_normal((d, 2 * d))
    s = a @ a.T / (2 * d) + 0.05 * np.eye(d)
    inv = 1.0 / np.sqrt(np.diag(s))
    c = s * np.outer(inv, inv)
    return 0.5 * (c + c.T)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
