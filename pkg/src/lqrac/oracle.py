"""Model-based ground truth for policy evaluation and improvement.

For a stable gain K the closed loop F = A - B K admits

* the stationary state covariance  Sigma_K = Psi_sigma + F Sigma_K F^T,
* the value matrix                 P_K = Q + K^T R K + F^T P_K F,

and from those the average cost J(K), the natural gradient
E_K = (R + B^T P_K B) K - B^T P_K A, the policy gradient 2 E_K Sigma_K,
the state-action Q-matrix Theta(K), and the stacked Bellman unknown
vartheta(K) = (J(K), svec Theta(K)).

The canonical average cost used everywhere in this package is

    J(K) = trace((Q + K^T R K) Sigma_K) + sigma2 * trace(R),

the stationary expectation of the stage cost under the randomized
feedback u = -K x + v.  The two trace expressions

    trace((Q + K^T R K) Sigma_K) == trace(P_K (Psi + sigma2 B B^T))

coincide exactly (that identity is what :func:`cost_identity_gap`
monitors); the exploration penalty sigma2 * trace(R) is an additive
constant that shifts neither the minimizer nor any gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import sigma_min, solve_dare, solve_dlyap, svec
from .system import LinearSystem, Policy, as_policy, require_stable


@dataclass(frozen=True, eq=False)
class PolicyQuantities:
    """Everything the model knows about one stable policy."""

    sigma_k: np.ndarray     # stationary state covariance
    p_k: np.ndarray         # value matrix
    j: float                # average cost (canonical, incl. sigma2 tr R)
    e_k: np.ndarray         # natural gradient
    grad_j: np.ndarray      # policy gradient = 2 E_K Sigma_K
    theta: np.ndarray       # (n+k) x (n+k) Q-function matrix
    vartheta: np.ndarray    # (J, svec Theta)


def policy_quantities(sys: LinearSystem, policy) -> PolicyQuantities:
    """Exact Lyapunov-based quantities for a stable policy.

    Raises UnstablePolicy when rho(A - B K) >= 1.
    """
    pol = require_stable(sys, policy)
    k = pol.gain
    f = sys.closed_loop(k)
    ktrk = k.T @ sys.r @ k
    sigma_k = solve_dlyap(f, sys.psi_sigma).solution
    p_k = solve_dlyap(f.T, sys.q + ktrk).solution
    j = float(np.trace((sys.q + ktrk) @ sigma_k)) + sys.sigma2 * float(np.trace(sys.r))
    btp = sys.b.T @ p_k
    e_k = (sys.r + btp @ sys.b) @ k - btp @ sys.a
    ab = np.hstack([sys.a, sys.b])
    theta = ab.T @ p_k @ ab + sys.cost_block
    theta = 0.5 * (theta + theta.T)
    vartheta = np.concatenate([[j], svec(theta)])
    return PolicyQuantities(
        sigma_k=sigma_k,
        p_k=p_k,
        j=j,
        e_k=e_k,
        grad_j=2.0 * e_k @ sigma_k,
        theta=theta,
        vartheta=vartheta,
    )


def average_cost(sys: LinearSystem, policy) -> float:
    return policy_quantities(sys, policy).j


def cost_identity_gap(sys: LinearSystem, policy) -> float:
    """Relative defect between the two exact trace expressions for the
    noise-driven part of the cost; a standing self-test that should sit
    at rounding level for every stable policy."""
    pol = require_stable(sys, policy)
    q = policy_quantities(sys, pol)
    lhs = float(np.trace((sys.q + pol.gain.T @ sys.r @ pol.gain) @ q.sigma_k))
    rhs = float(np.trace(q.p_k @ sys.psi_sigma))
    return abs(lhs - rhs) / max(1.0, q.j)


def performance_difference(sys: LinearSystem, policy, policy_prime) -> tuple[float, float]:
    """Both sides of the exact cost-difference identity.

    Returns (J(K') - J(K),  2 tr(Sigma_K' (K'-K)^T E_K)
                           + tr(Sigma_K' (K'-K)^T (R + B^T P_K B) (K'-K))).
    The two must agree to rounding for any pair of stable policies.
    """
    pol = require_stable(sys, policy)
    pol_p = require_stable(sys, policy_prime)
    qk = policy_quantities(sys, pol)
    qp = policy_quantities(sys, pol_p)
    dk = pol_p.gain - pol.gain
    lhs = qp.j - qk.j
    rk = sys.r + sys.b.T @ qk.p_k @ sys.b
    rhs = 2.0 * float(np.trace(qp.sigma_k @ dk.T @ qk.e_k)) + float(
        np.trace(qp.sigma_k @ dk.T @ rk @ dk)
    )
    return lhs, rhs


def optimal_policy(sys: LinearSystem) -> tuple[Policy, np.ndarray]:
    """Riccati solution: the optimal gain K* and value matrix P*."""
    p_star, k_star = solve_dare(sys.a, sys.b, sys.q, sys.r)
    return Policy.for_system(sys, k_star), p_star


def pl_sandwich(
    sys: LinearSystem, policy, optimal: tuple[Policy, np.ndarray] | None = None
) -> tuple[float, float, float]:
    """Gradient-dominance sandwich around the optimality gap.

    Returns (lower, J(K) - J(K*), upper) with

        lower = sigma_min(Psi) / ||R + B^T P_K B||  * ||E_K||_F^2
        upper = ||Sigma_K*|| / sigma_min(R)         * ||E_K||_F^2

    and lower <= mid <= upper for every stable policy.
    """
    pol = require_stable(sys, policy)
    if optimal is None:
        optimal = optimal_policy(sys)
    pol_star, _ = optimal
    qk = policy_quantities(sys, pol)
    q_star = policy_quantities(sys, pol_star)
    e_sq = float(np.linalg.norm(qk.e_k, "fro")) ** 2
    rk_norm = float(np.linalg.norm(sys.r + sys.b.T @ qk.p_k @ sys.b, 2))
    lower = sigma_min(sys.psi) / rk_norm * e_sq
    upper = float(np.linalg.norm(q_star.sigma_k, 2)) / sigma_min(sys.r) * e_sq
    return lower, qk.j - q_star.j, upper


def gradient_fd(sys: LinearSystem, policy, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite differences of J(K), entry by entry; an oracle for
    the closed-form policy gradient."""
    pol = as_policy(sys, policy)
    h = rel_step * max(1.0, float(np.linalg.norm(pol.gain)))
    grad = np.zeros_like(pol.gain)
    for i in range(pol.gain.shape[0]):
        for j in range(pol.gain.shape[1]):
            kp = pol.gain.copy()
            km = pol.gain.copy()
            kp[i, j] += h
            km[i, j] -= h
            grad[i, j] = (average_cost(sys, kp) - average_cost(sys, km)) / (2.0 * h)
    return grad


@dataclass(frozen=True)
class ActorConstants:
    """Step-size, conditioning, and accuracy constants for the outer loop.

    c1..c3 control the contraction rate, c4..c6 are the natural-gradient
    accuracy targets for a cost tolerance ``epsilon``, eta = 1/(2 c1) is
    the guaranteed step size, kappa the condition number with stage count
    l = max(1, ceil(kappa)), and rho_bar the uniform closed-loop
    spectral-radius envelope sqrt(1 - sigma_min(Psi) sigma_min(Q) / J0).
    """

    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    eta: float
    kappa: float
    l: int
    rho_bar: float
    epsilon: float


def actor_constants(
    sys: LinearSystem, j0: float, jstar: float, epsilon: float = 1e-3
) -> ActorConstants:
    """Evaluate the outer-loop constants at initial cost j0 and optimal
    cost jstar (j0 >= jstar > 0)."""
    b_norm = float(np.linalg.norm(sys.b, 2))
    r_norm = float(np.linalg.norm(sys.r, 2))
    s_psi = sigma_min(sys.psi)
    s_q = sigma_min(sys.q)
    s_r = sigma_min(sys.r)
    c1 = 2.0 * (r_norm + 2.0 * b_norm**2 * j0 / s_psi)
    c2 = s_psi * s_q * s_r
    c3 = j0 / s_q
    c4 = (s_q * s_psi * c1 / (16.0 * j0 * b_norm)) ** 2 if b_norm > 0 else math.inf
    c5 = (sigma_min(sys.psi_sigma) * c2 * epsilon / (3840.0 * j0 * b_norm * c3**2)) ** (2.0 / 3.0) if b_norm > 0 else math.inf
    c6 = c2 / (120.0 * j0 * c1) * min(c2 / (s_psi * jstar), 1.0 / (2.0 * c3)) * epsilon
    kappa = 8.0 * jstar * c1 / c2
    return ActorConstants(
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        c5=c5,
        c6=c6,
        eta=1.0 / (2.0 * c1),
        kappa=kappa,
        l=max(1, math.ceil(kappa)),
        rho_bar=math.sqrt(max(0.0, 1.0 - s_psi * s_q / j0)),
        epsilon=epsilon,
    )


def sigma_perturbation_radius(sys: LinearSystem, policy) -> float:
    """Gain-perturbation radius inside which stability is preserved:
    sigma_min(Q) sigma_min(Sigma_K) / (4 J(K) ||B|| (||A - B K|| + 1))."""
    pol = require_stable(sys, policy)
    q = policy_quantities(sys, pol)
    f_norm = float(np.linalg.norm(sys.closed_loop(pol.gain), 2))
    b_norm = float(np.linalg.norm(sys.b, 2))
    return sigma_min(sys.q) * sigma_min(q.sigma_k) / (4.0 * q.j * b_norm * (f_norm + 1.0))


def sigma_perturbation_bound(sys: LinearSystem, policy, policy_prime) -> float:
    """Covariance-perturbation bound
    4 (J/sigma_min(Q))^2 ||B|| (||A - B K|| + 1) / sigma_min(Sigma_K) * ||K' - K||,
    valid whenever ||K' - K|| is within :func:`sigma_perturbation_radius`."""
    pol = require_stable(sys, policy)
    pol_p = as_policy(sys, policy_prime)
    q = policy_quantities(sys, pol)
    f_norm = float(np.linalg.norm(sys.closed_loop(pol.gain), 2))
    b_norm = float(np.linalg.norm(sys.b, 2))
    dk = float(np.linalg.norm(pol_p.gain - pol.gain, 2))
    return (
        4.0
        * (q.j / sigma_min(sys.q)) ** 2
        * b_norm
        * (f_norm + 1.0)
        / sigma_min(q.sigma_k)
        * dk
    )
