import numpy as np
import pytest

from lqrac.linalg import controllability_matrix
from lqrac.oracle import optimal_policy
from lqrac.system import LinearSystem, Policy, scalar_benchmark_system


def random_system(
    rng: np.random.Generator,
    n: int,
    k: int,
    cost_scale: float = 1.0,
    psi_scale: float = 1.0,
    sigma2: float | None = None,
) -> LinearSystem:
    """Random controllable desk-scale plant with SPD cost/noise matrices."""
    while True:
        a = rng.normal(size=(n, n)) * 0.6
        b = rng.normal(size=(n, k)) * 0.8
        if np.linalg.matrix_rank(controllability_matrix(a, b)) == n:
            break
    mq = rng.normal(size=(n, n))
    q = cost_scale * (mq @ mq.T + n * np.eye(n))
    mr = rng.normal(size=(k, k))
    r = cost_scale * (mr @ mr.T + k * np.eye(k))
    mp = rng.normal(size=(n, n))
    psi = psi_scale * (0.1 * mp @ mp.T + 0.2 * np.eye(n))
    if sigma2 is None:
        sigma2 = float(rng.uniform(0.02, 0.3))
    return LinearSystem(a, b, q, r, psi, sigma2)


def random_stable_policy(
    sys: LinearSystem, rng: np.random.Generator, rho_cap: float = 0.95
) -> Policy:
    """A stable gain: the Riccati gain perturbed until just inside the cap."""
    kstar, _ = optimal_policy(sys)
    for _ in range(500):
        scale = rng.uniform(0.02, 0.6)
        pol = Policy.for_system(sys, kstar.gain + scale * rng.normal(size=kstar.gain.shape))
        if pol.stable and pol.rho < rho_cap:
            return pol
    return kstar


def benchmark_like_system(
    rng: np.random.Generator, n: int, k: int
) -> LinearSystem:
    """Random plant on the benchmark's scales: strong cost penalties and
    small process noise, where the closed-form magnitude bounds are live."""
    return random_system(rng, n, k, cost_scale=50.0, psi_scale=0.05,
                         sigma2=float(rng.uniform(0.02, 0.1)))


@pytest.fixture
def bench():
    return scalar_benchmark_system()


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
