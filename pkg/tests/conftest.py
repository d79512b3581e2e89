import numpy as np
import pytest

from notefactor.model import LatentParams


def dense_reconstruction_oracle(theta: LatentParams) -> np.ndarray:
    """Entry-by-entry model matrix via explicit loops (independent of predict)."""
    out = np.empty((theta.n_users, theta.n_notes))
    for u in range(theta.n_users):
        for n in range(theta.n_notes):
            out[u, n] = theta.mu + theta.h[u] + theta.i[n] + theta.f[u] * theta.g[n]
    return out


def random_theta(rng: np.random.Generator, n_users: int, n_notes: int, scale: float = 1.0) -> LatentParams:
    return LatentParams(
        float(rng.uniform(-scale, scale)),
        rng.uniform(-scale, scale, n_users),
        rng.uniform(-scale, scale, n_notes),
        rng.uniform(-scale, scale, n_users),
        rng.uniform(-scale, scale, n_notes),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
