"""Shared generators for the test suite."""

import numpy as np

from higsni.plant import PlantModel

# lines printed by the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    return Q @ np.diag(np.geomspace(1.0, cond, n)) @ Q.T


def random_ni_plant(rng, n, m):
    """Strictly NI plant built from its certificate.

    ``A = (J - Gamma) Y^{-1}`` with ``J`` skew makes ``AY + YA^T = -2 Gamma``
    and ``B = -A Y C^T`` closes the NI lemma, so ``Y`` is returned too.
    """
    Y = random_spd(rng, n)
    G = random_spd(rng, n, cond=5.0)
    J = rng.normal(size=(n, n))
    J = J - J.T
    A = (J - G) @ np.linalg.inv(Y)
    C = rng.normal(size=(m, n))
    B = -A @ Y @ C.T
    return PlantModel(A, B, C), Y


def random_q0_plant(rng, n, m):
    """Stable plant with ``CB + B^T C^T`` positive definite; NI or not."""
    while True:
        A = rng.normal(size=(n, n))
        A -= (np.max(np.linalg.eigvals(A).real) + rng.uniform(0.1, 2.0)) \
            * np.eye(n)
        B = rng.normal(size=(n, m))
        C = B.T @ random_spd(rng, n, cond=4.0)
        if np.linalg.matrix_rank(B) == m:
            return PlantModel(A, B, C)


def scalar_plant(a, b, c):
    return PlantModel(np.array([[a]]), np.array([[b]]), np.array([[c]]))
