"""Seeded closed-loop simulation and Markovian temporal-difference samples.

Determinism contract
--------------------
All Gaussian variates are produced by inverse-CDF transform of PCG64
uniforms (``ndtri((counter + 0.5) / 2^53)`` style open-interval uniforms),
so a (seed, config) pair fully determines every trajectory.  Per-run seeds
are derived from a master seed with a SplitMix64 hash of the run index,
giving independent streams for parallel runs.

Per step the draw order is fixed: first the n process-noise coordinates,
then the k exploration-noise coordinates.

Sample shape
------------
One temporal-difference sample is a consecutive state-action pair
(z_t, z_{t+1}) under the randomized feedback u = -K x + v.  From it the
stochastic Bellman estimates are

    H~ = [[1, 0], [phi_t, phi_t (phi_t - phi_{t+1})^T]],
    b~ = [c_t, c_t phi_t],

whose stationary expectations are the exact (H, b).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import NumericalOverflow
from .linalg import svec
from .system import LinearSystem, as_policy

# State-norm cap: beyond this the closed loop is declared divergent.
DIVERGENCE_CAP = 1e12

_INV_2_53 = 1.0 / 2.0**53


def derive_seed(master_seed: int, index: int) -> int:
    """Mix a run index into a master seed (SplitMix64 finalizer)."""
    z = (master_seed + 0x9E3779B97F4A7C15 * (index + 1)) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Inverse-CDF standard normals from open-interval PCG64 uniforms."""
    u = (rng.integers(0, 2**53, size=size).astype(float) + 0.5) * _INV_2_53
    return ndtri(u)


@dataclass
class TrajectoryState:
    """Single-owner simulation state: current (x, u), step count, RNG."""

    x: np.ndarray
    u: np.ndarray
    t: int
    rng: np.random.Generator


def start_trajectory(
    sys: LinearSystem, policy, seed: int | np.random.Generator, x0: np.ndarray | None = None
) -> TrajectoryState:
    """Draw x0 ~ N(0, Psi) (unless given) and the first action u0 = -K x0 + v0."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.Generator(np.random.PCG64(seed))
    pol = as_policy(sys, policy)
    if x0 is None:
        x0 = sys.psi_sqrt @ standard_normal(rng, sys.n)
    else:
        x0 = np.asarray(x0, dtype=float).reshape(sys.n)
    sig = np.sqrt(sys.sigma2)
    u0 = -pol.gain @ x0 + sig * standard_normal(rng, sys.k)
    return TrajectoryState(x=x0, u=u0, t=0, rng=rng)


def rollout_step(
    sys: LinearSystem,
    policy,
    state: TrajectoryState,
    w_std: np.ndarray | None = None,
    v_std: np.ndarray | None = None,
) -> TrajectoryState:
    """Advance one step: x' = A x + B u + w, then u' = -K x' + v'.

    ``w_std``/``v_std`` allow pre-drawn standard normals (block draws
    consume the PCG64 stream identically to per-step draws, so batching
    does not change trajectories).  Raises NumericalOverflow once ||x||
    exceeds the divergence cap, which converts an unstable policy's
    blow-up into a clean error.
    """
    pol = as_policy(sys, policy)
    if w_std is None:
        w_std = standard_normal(state.rng, sys.n)
    x_next = sys.a @ state.x + sys.b @ state.u + sys.psi_sqrt @ w_std
    if float(x_next @ x_next) > DIVERGENCE_CAP**2:
        raise NumericalOverflow(f"state norm exceeded {DIVERGENCE_CAP:g} at step {state.t + 1}")
    if v_std is None:
        v_std = standard_normal(state.rng, sys.k)
    state.x = x_next
    state.u = -pol.gain @ x_next + np.sqrt(sys.sigma2) * v_std
    state.t += 1
    return state


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """One stochastic (H~, b~) built from a consecutive state-action pair."""

    h_tilde: np.ndarray
    b_tilde: np.ndarray
    source_step: int
    samples_consumed: int


def _batch_from_pair(sys: LinearSystem, z_prev: np.ndarray, z_curr: np.ndarray,
                     source_step: int, consumed: int) -> SampleBatch:
    phi_prev = svec(np.outer(z_prev, z_prev))
    phi_curr = svec(np.outer(z_curr, z_curr))
    cost = float(z_prev @ sys.cost_block @ z_prev)
    d = phi_prev.shape[0]
    h = np.zeros((1 + d, 1 + d))
    h[0, 0] = 1.0
    h[1:, 0] = phi_prev
    h[1:, 1:] = np.outer(phi_prev, phi_prev - phi_curr)
    b = np.concatenate([[cost], cost * phi_prev])
    return SampleBatch(h_tilde=h, b_tilde=b, source_step=source_step, samples_consumed=consumed)


def markov_sample(
    sys: LinearSystem, policy, state: TrajectoryState, tau: int
) -> tuple[SampleBatch, TrajectoryState]:
    """Advance tau steps along the single trajectory (no restart) and build
    the estimate from the final consecutive pair; the first tau - 1
    transitions are skipped to let the chain mix.

    All tau steps' variates come from one block draw consumed in per-step
    (w, v) order, which is stream-identical to tau single steps.
    """
    if tau < 1:
        raise ValueError("tau must be >= 1")
    pol = as_policy(sys, policy)
    n, k = sys.n, sys.k
    block = standard_normal(state.rng, tau * (n + k)).reshape(tau, n + k)
    if n == 1 and k == 1:
        z_prev, z_curr = _advance_scalar(sys, pol, state, block)
    else:
        for i in range(tau - 1):
            rollout_step(sys, pol, state, w_std=block[i, :n], v_std=block[i, n:])
        z_prev = np.concatenate([state.x, state.u])
        rollout_step(sys, pol, state, w_std=block[tau - 1, :n], v_std=block[tau - 1, n:])
        z_curr = np.concatenate([state.x, state.u])
    return _batch_from_pair(sys, z_prev, z_curr, state.t, tau), state


def _advance_scalar(sys: LinearSystem, pol, state: TrajectoryState, block: np.ndarray):
    """Pure-float advance for n = k = 1; arithmetic ordered exactly as in
    rollout_step, so trajectories stay bit-identical to the generic path."""
    a = float(sys.a[0, 0])
    b = float(sys.b[0, 0])
    g = float(pol.gain[0, 0])
    psi_s = float(sys.psi_sqrt[0, 0])
    sig = float(np.sqrt(sys.sigma2))
    x = float(state.x[0])
    u = float(state.u[0])
    cap = DIVERGENCE_CAP**2
    rows = block.tolist()
    x_prev = u_prev = 0.0
    for i, (w_std, v_std) in enumerate(rows):
        x_prev, u_prev = x, u
        x_new = a * x + b * u + psi_s * w_std
        if x_new * x_new > cap:
            # leave the state at the last valid pair, as the generic path does
            state.x = np.array([x])
            state.u = np.array([u])
            state.t += i
            raise NumericalOverflow(
                f"state norm exceeded {DIVERGENCE_CAP:g} at step {state.t + 1}"
            )
        x = x_new
        u = -g * x + sig * v_std
    state.x = np.array([x])
    state.u = np.array([u])
    state.t += len(rows)
    return np.array([x_prev, u_prev]), np.array([x, u])


def svec_dim(sys: LinearSystem) -> int:
    m = sys.n + sys.k
    return m * (m + 1) // 2


def _phi_batch(z: np.ndarray) -> np.ndarray:
    """svec(z z^T) for a batch of vectors z (rows)."""
    m = z.shape[1]
    iu, ju = np.triu_indices(m)
    scale = np.where(iu == ju, 1.0, np.sqrt(2.0))
    return z[:, iu] * z[:, ju] * scale


def empirical_state_action_cov(
    sys: LinearSystem, policy, num_samples: int, seed: int, burn_in: int = 500,
    chains: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Long-run empirical covariance of (x, u), vectorized over independent
    chains; standard errors come from the spread of per-chain means."""
    pol = as_policy(sys, policy)
    rng = np.random.Generator(np.random.PCG64(seed))
    steps = max(1, num_samples // chains)
    x, u = _init_chain_block(sys, pol, rng, chains)
    for _ in range(burn_in):
        x, u = _step_chain_block(sys, pol, rng, x, u)
    m = sys.n + sys.k
    acc = np.zeros((chains, m, m))
    for _ in range(steps):
        z = np.hstack([x, u])
        acc += np.einsum("ci,cj->cij", z, z)
        x, u = _step_chain_block(sys, pol, rng, x, u)
    chain_means = acc / steps
    mean = chain_means.mean(axis=0)
    se = chain_means.std(axis=0, ddof=1) / np.sqrt(chains)
    return mean, se


def empirical_bellman_system(
    sys: LinearSystem,
    policy,
    num_pairs: int,
    seed: int,
    burn_in: int = 500,
    chains: int = 100,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Monte-Carlo (H, b) from stationary consecutive pairs, vectorized
    over independent chains.

    Returns (H_mean, b_mean, H_se, b_se); the standard errors are the
    spread of per-chain means over sqrt(chains), valid under arbitrary
    within-chain autocorrelation.
    """
    pol = as_policy(sys, policy)
    rng = np.random.Generator(np.random.PCG64(seed))
    steps = max(1, num_pairs // chains)
    x, u = _init_chain_block(sys, pol, rng, chains)
    for _ in range(burn_in):
        x, u = _step_chain_block(sys, pol, rng, x, u)
    d = svec_dim(sys)
    dim = 1 + d
    h_acc = np.zeros((chains, dim, dim))
    b_acc = np.zeros((chains, dim))
    cost = sys.cost_block
    for _ in range(steps):
        z_prev = np.hstack([x, u])
        x, u = _step_chain_block(sys, pol, rng, x, u)
        z_curr = np.hstack([x, u])
        phi_prev = _phi_batch(z_prev)
        phi_curr = _phi_batch(z_curr)
        c_prev = np.einsum("ci,ij,cj->c", z_prev, cost, z_prev)
        h_acc[:, 0, 0] += 1.0
        h_acc[:, 1:, 0] += phi_prev
        h_acc[:, 1:, 1:] += np.einsum("ca,cb->cab", phi_prev, phi_prev - phi_curr)
        b_acc[:, 0] += c_prev
        b_acc[:, 1:] += c_prev[:, None] * phi_prev
    h_means = h_acc / steps
    b_means = b_acc / steps
    return (
        h_means.mean(axis=0),
        b_means.mean(axis=0),
        h_means.std(axis=0, ddof=1) / np.sqrt(chains),
        b_means.std(axis=0, ddof=1) / np.sqrt(chains),
    )


def conditional_mean_bellman(
    sys: LinearSystem,
    policy,
    tau_grid,
    num_chains: int,
    seed: int,
    x0: np.ndarray | None = None,
) -> dict[int, np.ndarray]:
    """Monte-Carlo E[H~ built on the pair (z_{tau-1}, z_tau) | x_0] for every
    tau in the grid, all chains started from the same x0 (default 0);
    traces the Markovian bias decay in the mixing offset."""
    pol = as_policy(sys, policy)
    rng = np.random.Generator(np.random.PCG64(seed))
    if x0 is None:
        x0 = np.zeros(sys.n)
    x = np.tile(np.asarray(x0, dtype=float).reshape(1, sys.n), (num_chains, 1))
    v0 = np.sqrt(sys.sigma2) * standard_normal(rng, num_chains * sys.k).reshape(num_chains, sys.k)
    u = x @ (-pol.gain.T) + v0
    tau_grid = sorted(int(t) for t in tau_grid)
    d = svec_dim(sys)
    out: dict[int, np.ndarray] = {}
    prev = np.hstack([x, u])
    t = 0
    for tau in tau_grid:
        while t < tau:
            prev = np.hstack([x, u])
            x, u = _step_chain_block(sys, pol, rng, x, u)
            t += 1
        z_curr = np.hstack([x, u])
        phi_prev = _phi_batch(prev)
        phi_curr = _phi_batch(z_curr)
        h = np.zeros((1 + d, 1 + d))
        h[0, 0] = 1.0
        h[1:, 0] = phi_prev.mean(axis=0)
        h[1:, 1:] = np.einsum("ca,cb->ab", phi_prev, phi_prev - phi_curr) / num_chains
        out[tau] = h
    return out


def _init_chain_block(sys, pol, rng, chains):
    x = standard_normal(rng, chains * sys.n).reshape(chains, sys.n) @ sys.psi_sqrt.T
    v = np.sqrt(sys.sigma2) * standard_normal(rng, chains * sys.k).reshape(chains, sys.k)
    return x, x @ (-pol.gain.T) + v


def _step_chain_block(sys, pol, rng, x, u):
    c = x.shape[0]
    w = standard_normal(rng, c * sys.n).reshape(c, sys.n) @ sys.psi_sqrt.T
    x_next = x @ sys.a.T + u @ sys.b.T + w
    v = np.sqrt(sys.sigma2) * standard_normal(rng, c * sys.k).reshape(c, sys.k)
    return x_next, x_next @ (-pol.gain.T) + v
