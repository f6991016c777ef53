"""Closed-form Gaussian moment machinery for the Bellman linear system.

Under a stable gain K the state-action pair z = (x, u) with u = -K x + v
is stationary Gaussian.  The temporal-difference features
phi(z) = svec(z z^T) then satisfy an exact linear system

    H vartheta(K) = b,
    H = [[1, 0], [E phi(z_t), Xi_K]],       b = [E c_t, E c_t phi(z_t)],
    Xi_K = E[ phi(z_t) (phi(z_t) - phi(z_{t+1}))^T ],

where c_t = x_t^T Q x_t + u_t^T R u_t and z_{t+1} = (x_{t+1}, u_{t+1}) is
the *next state-action pair actually generated by the randomized policy*
(u_{t+1} = -K x_{t+1} + v_{t+1}).  Every entry of H and b is a second- or
fourth-order moment of the joint Gaussian (z_t, z_{t+1}) and is evaluated
here exactly through pair-partition (Isserlis) sums, giving a noise-free
oracle against which every stochastic estimate can be tested.

Including the fresh exploration noise in the next action is what makes
the system exactly consistent with the canonical average cost: replacing
u_{t+1} by its conditional mean -K x_{t+1} shifts the second block of
H vartheta - b by svec(Cov(z)) * sigma2 * trace(R + B^T P_K B) != 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .linalg import sigma_min, solve_dlyap
from .oracle import policy_quantities
from .system import LinearSystem, require_stable

_SQRT2 = math.sqrt(2.0)


@lru_cache(maxsize=None)
def _pairings(p: int) -> tuple[tuple[tuple[int, int], ...], ...]:
    """All perfect matchings of {0, ..., 2p-1}; (2p-1)!! of them."""
    if p == 0:
        return ((),)
    idx = tuple(range(2 * p))
    out = []

    def rec(remaining, acc):
        if not remaining:
            out.append(tuple(acc))
            return
        first = remaining[0]
        for j in range(1, len(remaining)):
            rec(
                remaining[1:j] + remaining[j + 1:],
                acc + [(first, remaining[j])],
            )

    rec(list(idx), [])
    return tuple(out)


def isserlis_moment(sigma: np.ndarray, indices) -> float:
    """E[prod_j X_{i_j}] for X ~ N(0, Sigma), by pair-partition summation.

    Odd-length index lists return 0.0 (mean-zero symmetry), which keeps
    assembly code free of special cases.
    """
    sigma = np.asarray(sigma, dtype=float)
    idx = tuple(int(i) for i in indices)
    if any(i < 0 or i >= sigma.shape[0] for i in idx):
        raise IndexError("moment index out of range")
    if len(idx) % 2 == 1:
        return 0.0
    p = len(idx) // 2
    total = 0.0
    for pairing in _pairings(p):
        term = 1.0
        for a, b in pairing:
            term *= sigma[idx[a], idx[b]]
        total += term
    return total


@dataclass(frozen=True, eq=False)
class StationaryModel:
    """Joint second-order description of consecutive state-action pairs.

    ``sigma_tilde`` is the stationary covariance of z = (x, u);
    ``cross_cov`` is Cov(z_t, z_{t+1}); ``joint`` stacks them into the
    covariance of (z_t, z_{t+1}).
    """

    sigma_tilde: np.ndarray
    cross_cov: np.ndarray
    rho: float

    @property
    def joint(self) -> np.ndarray:
        m = self.sigma_tilde.shape[0]
        out = np.zeros((2 * m, 2 * m))
        out[:m, :m] = self.sigma_tilde
        out[m:, m:] = self.sigma_tilde
        out[:m, m:] = self.cross_cov
        out[m:, :m] = self.cross_cov.T
        return out


def stationary_model(sys: LinearSystem, policy) -> StationaryModel:
    """Stationary covariance Sigma~ of (x, u) and the one-step cross
    covariance implied by x' = (A - B K) x + w + B v, u = -K x + v."""
    pol = require_stable(sys, policy)
    k = pol.gain
    f = sys.closed_loop(k)
    sig = solve_dlyap(f, sys.psi_sigma).solution
    sig_kt = sig @ k.T
    sigma_tilde = np.block([
        [sig, -sig_kt],
        [-sig_kt.T, k @ sig_kt + sys.sigma2 * np.eye(sys.k)],
    ])
    sigma_tilde = 0.5 * (sigma_tilde + sigma_tilde.T)
    # Cov(x_t, x_{t+1}) = Sigma F^T; the exploration noise v_t feeds both
    # u_t and x_{t+1}, hence the sigma2 B^T term in the (u, x') block.
    sf = sig @ f.T
    ux = -k @ sf + sys.sigma2 * sys.b.T
    cross = np.block([
        [sf, -sf @ k.T],
        [ux, -ux @ k.T],
    ])
    return StationaryModel(sigma_tilde=sigma_tilde, cross_cov=cross, rho=pol.rho)


def conditional_state_action_cov(sys: LinearSystem, policy, steps: int | None) -> np.ndarray:
    """Covariance of (x_t, u_t) given x_0, after ``steps`` transitions
    (None means the stationary limit)."""
    pol = require_stable(sys, policy)
    k = pol.gain
    f = sys.closed_loop(k)
    if steps is None:
        sig = solve_dlyap(f, sys.psi_sigma).solution
    else:
        sig = np.zeros_like(sys.psi)
        pw = np.eye(sys.n)
        for _ in range(steps):
            sig = sig + pw @ sys.psi_sigma @ pw.T
            pw = f @ pw
    sig_kt = sig @ k.T
    out = np.block([
        [sig, -sig_kt],
        [-sig_kt.T, k @ sig_kt + sys.sigma2 * np.eye(sys.k)],
    ])
    return 0.5 * (out + out.T)


@dataclass(frozen=True, eq=False)
class BellmanSystem:
    """The pair (H, b); ``exact`` records analytic vs Monte-Carlo origin."""

    h: np.ndarray
    b: np.ndarray
    exact: bool

    @property
    def dim(self) -> int:
        return self.h.shape[0]


def _triu_pairs(m: int) -> list[tuple[int, int, float]]:
    """Row-major upper-triangle index pairs with their svec scale factors."""
    out = []
    for i in range(m):
        for j in range(i, m):
            out.append((i, j, 1.0 if i == j else _SQRT2))
    return out


def exact_bellman_system(sys: LinearSystem, policy) -> BellmanSystem:
    """Assemble H and b entry by entry from exact Gaussian moments of the
    joint distribution of consecutive state-action pairs."""
    pol = require_stable(sys, policy)
    model = stationary_model(sys, pol)
    joint = model.joint
    m = sys.n + sys.k
    pairs = _triu_pairs(m)
    d = len(pairs)
    cost = sys.cost_block

    h = np.zeros((1 + d, 1 + d))
    b = np.zeros(1 + d)
    h[0, 0] = 1.0
    b[0] = float(np.trace(cost @ model.sigma_tilde))

    for a, (i, j, s_a) in enumerate(pairs):
        h[1 + a, 0] = s_a * isserlis_moment(joint, (i, j))
        # b entry: E[(z^T M z) z_i z_j] summed over the cost quadratic form.
        acc = 0.0
        for u in range(m):
            for v in range(m):
                if cost[u, v] != 0.0:
                    acc += cost[u, v] * isserlis_moment(joint, (u, v, i, j))
        b[1 + a] = s_a * acc
        for c, (u, v, s_c) in enumerate(pairs):
            same = isserlis_moment(joint, (i, j, u, v))
            nxt = isserlis_moment(joint, (i, j, m + u, m + v))
            h[1 + a, 1 + c] = s_a * s_c * (same - nxt)
    return BellmanSystem(h=h, b=b, exact=True)


def bellman_residual(sys: LinearSystem, policy, system: BellmanSystem | None = None) -> float:
    """|| H vartheta(K) - b ||, the central consistency check."""
    if system is None:
        system = exact_bellman_system(sys, policy)
    vartheta = policy_quantities(sys, policy).vartheta
    return float(np.linalg.norm(system.h @ vartheta - system.b))


def sharpness_lower_bound(sys: LinearSystem, policy) -> float:
    """Closed-form lower bound on sigma_min(H) for a stable policy.

    The bound is

        1/4 * min{1, (1 - rho^2) * nu^2
                     / (1 + (1+||K||)^2 J(K)/sigma_min(Q) + sigma2 k)}

    with nu = min{max(0, sigma2 - sigma_min(Psi)||K||^2), sigma_min(Psi)}.
    nu enters squared because H is built from fourth-order moments, so its
    small singular values carry squared-covariance units; the 1/4 prefactor
    absorbs the constant lost in that normalization.  The bound is 0
    (vacuously true) when sigma2 <= sigma_min(Psi) ||K||^2, and positive
    whenever the exploration noise dominates, which is what sharpness of
    the primal-dual gap function needs.
    """
    pol = require_stable(sys, policy)
    q = policy_quantities(sys, pol)
    k_norm = float(np.linalg.norm(pol.gain, 2))
    s_psi = sigma_min(sys.psi)
    nu = min(max(0.0, sys.sigma2 - s_psi * k_norm**2), s_psi)
    denom = 1.0 + (1.0 + k_norm) ** 2 * q.j / sigma_min(sys.q) + sys.sigma2 * sys.k
    return 0.25 * min(1.0, (1.0 - pol.rho**2) * nu**2 / denom)


def gaussian_norm_tail(mu, sigma, delta: float) -> float:
    """Threshold T with P{ ||l||^2 > T } <= delta for l ~ N(mu, Sigma):

        T = [(4||Sigma|| sqrt(ln 1/delta) + ||Sigma||_F)^2 - ||Sigma||_F^2]
            / (8 ||Sigma||) + tr(Sigma) + 2 ||mu||^2.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    s_op = float(np.linalg.norm(sigma, 2))
    s_fro = float(np.linalg.norm(sigma, "fro"))
    root = math.sqrt(math.log(1.0 / delta))
    quad = ((4.0 * s_op * root + s_fro) ** 2 - s_fro**2) / (8.0 * s_op)
    return quad + float(np.trace(sigma)) + 2.0 * float(mu @ mu)


def event_threshold(sigma_tilde: np.ndarray, z0_sq_norm: float, delta: float) -> float:
    """Bounding threshold of the per-sample concentration event:

        ||x_t||^2 + ||u_t||^2 <= (4||Sigma~(t)|| + tr Sigma~(t)
                                  + 2(||x_0||^2 + ||u_0||^2)) sqrt(ln(e/delta)).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    s_op = float(np.linalg.norm(sigma_tilde, 2))
    return (4.0 * s_op + float(np.trace(sigma_tilde)) + 2.0 * z0_sq_norm) * math.sqrt(
        math.log(math.e / delta)
    )


def event_holds(x: np.ndarray, u: np.ndarray, threshold: float) -> bool:
    """Diagnostic predicate: does the sampled pair sit inside the event?"""
    return float(x @ x + u @ u) <= threshold


def fit_power_envelope(f: np.ndarray, rho_star: float, k_max: int = 200) -> float:
    """Smallest Gamma with ||F^k|| <= Gamma rho_star^k for k = 0..k_max."""
    gamma = 1.0
    pw = np.eye(f.shape[0])
    scale = 1.0
    for _ in range(k_max):
        pw = pw @ f
        scale *= rho_star
        gamma = max(gamma, float(np.linalg.norm(pw, 2)) / scale)
    return gamma


@dataclass(frozen=True)
class BiasConstants:
    """High-probability magnitude / bias constants for the TD estimates.

    m_h, m_b bound the sampled matrix/vector norms on the concentration
    event; r_star bounds ||vartheta(K)||; l_h bounds ||H|| (and l_h * r_star
    bounds ||b||); c, o_h, o_b parameterize the Markovian bias envelope
    c * m_h * ln(e/delta)^(5/4) * rho^tau + o_h * sqrt(delta); the mixing
    prefactor comes from the total-variation contraction of the stable
    closed loop, with Gamma fitted at rho_star = (1 + rho) / 2.
    """

    m_h: float
    m_b: float
    r_star: float
    l_h: float
    b_bound: float
    c: float
    o_h: float
    o_b: float
    mixing_prefactor: float
    rho: float
    rho_star: float
    gamma: float


def bias_constants(sys: LinearSystem, policy, x0_norm: float = 0.0, delta: float = 0.01) -> BiasConstants:
    pol = require_stable(sys, policy)
    q = policy_quantities(sys, pol)
    model = stationary_model(sys, pol)
    k_norm = float(np.linalg.norm(pol.gain, 2))
    qr_max = max(float(np.linalg.norm(sys.q, 2)), float(np.linalg.norm(sys.r, 2)))
    s_q = sigma_min(sys.q)
    m_h = 17.0 * (1.0 + k_norm) ** 4 * max(
        1.0,
        (5.0 * q.j / s_q + 2.0 * x0_norm**2 + (4.0 + sys.k) * sys.sigma2) ** 2,
    )
    m_b = m_h * qr_max
    r_star = (
        float(np.linalg.norm(sys.q, "fro"))
        + float(np.linalg.norm(sys.r, "fro"))
        + (float(np.linalg.norm(sys.a, "fro")) ** 2 + float(np.linalg.norm(sys.b, "fro")) ** 2)
        * q.j
        / sigma_min(sys.psi)
    )
    l_h = 1.0 + 4.0 * (1.0 + float(np.linalg.norm(pol.gain, "fro")) ** 2) * q.j / s_q + sys.sigma2 * (sys.k + 2)
    c = 0.5 * (m_h + math.sqrt(sys.n / (1.0 - pol.rho)))
    st_norm = float(np.linalg.norm(model.sigma_tilde, 2))
    moment_scale = max(st_norm**2, st_norm**4)
    o_h = 65.0 * (sys.n + sys.k) * moment_scale
    o_b = 41.0 * qr_max * (sys.n + sys.k) ** 2 * moment_scale
    rho_star = 0.5 * (1.0 + pol.rho)
    gamma = fit_power_envelope(sys.closed_loop(pol.gain), rho_star)
    mixing = 0.5 * gamma * math.sqrt(x0_norm**2 + sys.n / (1.0 - pol.rho**2))
    return BiasConstants(
        m_h=m_h,
        m_b=m_b,
        r_star=r_star,
        l_h=l_h,
        b_bound=l_h * r_star,
        c=c,
        o_h=o_h,
        o_b=o_b,
        mixing_prefactor=mixing,
        rho=pol.rho,
        rho_star=rho_star,
        gamma=gamma,
    )
