"""Outer loop: natural policy gradient with a pluggable gradient source.

The update is the closed form of the proximal step

    K_{t+1} = argmin_K  eta <2 E_hat, K> + ||K - K_t||_F^2 / 2
            = K_t - 2 eta E_hat.

In oracle mode E_hat is the exact natural gradient from the Lyapunov
solves; in critic mode it is extracted from the multi-epoch primal-dual
estimate of vartheta(K_t) = (J, svec Theta) via the block identity
E = Theta_22 K - Theta_21.  The critic consumes one shared trajectory
that is never restarted across iterations (configurable for ablation).

Guards assert the exact-gradient invariants (cost never exceeds 2 J(K0),
spectral radius stays below the rho_bar envelope): violations are bugs in
oracle mode and raise; in critic mode they are recorded as structured
warnings, since the theory only makes them improbable, not impossible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .critic import ExactBellmanOracle, MarkovBellmanOracle, MultiEpochResult, multi_epoch_run
from .errors import (
    DimensionMismatch,
    GuardViolation,
    NumericalOverflow,
    UnstableInitialPolicy,
    UnstablePolicy,
)
from .linalg import smat, svec_length
from .moments import bias_constants, exact_bellman_system
from .oracle import actor_constants, policy_quantities
from .simulate import derive_seed, start_trajectory
from .system import LinearSystem, Policy, as_policy


def extract_natural_gradient(vartheta_hat: np.ndarray, gain: np.ndarray, dims: tuple[int, int]) -> np.ndarray:
    """E_hat = Theta_22 K - Theta_21 from an estimated (J, svec Theta)."""
    n, k = dims
    expected = 1 + svec_length(n + k)
    vartheta_hat = np.asarray(vartheta_hat, dtype=float)
    if vartheta_hat.shape != (expected,):
        raise DimensionMismatch(
            f"vartheta estimate must have length {expected}, got {vartheta_hat.shape}"
        )
    theta = smat(vartheta_hat[1:])
    theta_21 = theta[n:, :n]
    theta_22 = theta[n:, n:]
    return theta_22 @ np.asarray(gain, dtype=float) - theta_21


def npg_step(sys: LinearSystem, policy, e_hat: np.ndarray, eta: float) -> Policy:
    """One proximal natural-gradient step; the new Policy carries a freshly
    computed closed-loop spectral radius (instability is the caller's to
    detect, not an error here)."""
    pol = as_policy(sys, policy)
    return Policy.for_system(sys, pol.gain - 2.0 * eta * np.asarray(e_hat, dtype=float))


@dataclass
class CriticConfig:
    """Per-actor-step critic settings (practical mode).

    epoch_iterations is the explicit k_s list (its length is the epoch
    count S); tau is the per-sample mixing skip; d0 the initial primal
    ball parameter; sigma_x/sigma_y the schedule noise terms (theory
    values are far too conservative at desk scale, so these are plain
    tuning constants); h_norm None means "use the bias-constants bound
    L_H" (model-free), a float pins it explicitly.
    """

    epoch_iterations: tuple[int, ...] = (100, 200, 400)
    tau: int = 20
    delta: float = 0.01
    d0: float = 600.0
    sigma_x: float = 0.0
    sigma_y: float = 0.0
    calibrate_draws: int = 50
    h_norm: float | None = None
    warm_start: str = "zero"  # "zero" | "previous"
    restart_chain: bool = False


@dataclass
class ActorConfig:
    """Outer-loop settings.

    eta None means the guaranteed step 1/(2 C1) evaluated at J(K0).
    gradient_mode "oracle" uses exact natural gradients; "critic" runs the
    sampled primal-dual evaluation.  oracle_diagnostics co-computes the
    exact gradient in critic mode for the error trace only; it never feeds
    the update.
    """

    iterations: int = 50
    eta: float | None = None
    epsilon: float = 1e-3
    gradient_mode: str = "oracle"
    critic: CriticConfig = field(default_factory=CriticConfig)
    guards_enabled: bool = True
    oracle_diagnostics: bool = False


@dataclass
class ActorTrace:
    """Per-iteration records (row t describes K_t before the t-th update)."""

    iterations: list[int] = field(default_factory=list)
    cost: list[float] = field(default_factory=list)
    e_norm: list[float] = field(default_factory=list)
    delta_norm: list[float] = field(default_factory=list)
    rho: list[float] = field(default_factory=list)
    samples: list[int] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)
    warnings: list[tuple[int, str]] = field(default_factory=list)
    diverged_at: int | None = None

    def append(self, t, cost, e_norm, delta_norm, rho, samples, wall):
        self.iterations.append(t)
        self.cost.append(cost)
        self.e_norm.append(e_norm)
        self.delta_norm.append(delta_norm)
        self.rho.append(rho)
        self.samples.append(samples)
        self.wall_time.append(wall)


def train(
    sys: LinearSystem, k0, config: ActorConfig, seed: int = 0
) -> tuple[Policy, ActorTrace]:
    """Run the natural policy gradient loop from a stable initial gain.

    Returns the final policy and the full trace.  In critic mode a
    divergent closed loop ends the run early with ``trace.diverged_at``
    set; rows up to the divergence are kept.
    """
    pol = as_policy(sys, k0)
    if not pol.stable:
        raise UnstableInitialPolicy(f"rho(A - B K0) = {pol.rho:.6g} >= 1")
    q0 = policy_quantities(sys, pol)
    # jstar enters only kappa/l, neither of which this loop consumes.
    consts = actor_constants(sys, q0.j, jstar=q0.j, epsilon=config.epsilon)
    eta = config.eta if config.eta is not None else consts.eta
    trace = ActorTrace()
    dims = (sys.n, sys.k)
    d = 1 + svec_length(sys.n + sys.k)

    chain = None
    vartheta_prev = np.zeros(d)
    cum_samples = 0
    t_start = time.perf_counter()
    cc = config.critic

    if config.gradient_mode == "critic" and not cc.restart_chain:
        chain = start_trajectory(sys, pol, seed)

    guard_j_cap = 2.0 * q0.j
    guard_rho = consts.rho_bar

    for t in range(config.iterations + 1):
        stable_now = pol.stable
        j_t = np.nan
        e_true = None
        if stable_now:
            q_t = policy_quantities(sys, pol)
            j_t = q_t.j
            e_true = q_t.e_k

        if config.guards_enabled and stable_now:
            rho_bad = pol.rho > guard_rho + 1e-9
            j_bad = j_t > guard_j_cap * (1 + 1e-9)
            if rho_bad or j_bad:
                msg = f"rho={pol.rho:.6g} (cap {guard_rho:.6g})" if rho_bad else \
                    f"J={j_t:.6g} (cap {guard_j_cap:.6g})"
                if config.gradient_mode == "oracle":
                    raise GuardViolation(f"iteration {t}: {msg}")
                trace.warnings.append((t, msg))
        elif config.guards_enabled and not stable_now:
            if config.gradient_mode == "oracle":
                raise GuardViolation(f"iteration {t}: unstable policy rho={pol.rho:.6g}")
            trace.warnings.append((t, f"unstable rho={pol.rho:.6g}"))

        if t == config.iterations:
            trace.append(t, j_t, _norm_or_nan(e_true), np.nan, pol.rho,
                         cum_samples, time.perf_counter() - t_start)
            break

        if config.gradient_mode == "oracle":
            if not stable_now:
                raise UnstablePolicy(f"oracle mode reached an unstable policy at t={t}")
            e_hat = e_true
            delta_norm = 0.0
        else:
            try:
                e_hat, vartheta_prev, used = _critic_estimate(
                    sys, pol, cc, chain, vartheta_prev, seed, t
                )
            except (NumericalOverflow, UnstablePolicy):
                trace.append(t, j_t, _norm_or_nan(e_true), np.nan, pol.rho,
                             cum_samples, time.perf_counter() - t_start)
                trace.diverged_at = t
                break
            cum_samples += used
            delta_norm = (
                float(np.linalg.norm(e_true - e_hat, "fro"))
                if (config.oracle_diagnostics and e_true is not None)
                else np.nan
            )

        trace.append(t, j_t, _norm_or_nan(e_true), delta_norm, pol.rho,
                     cum_samples, time.perf_counter() - t_start)
        pol = npg_step(sys, pol, e_hat, eta)

    return pol, trace


def _norm_or_nan(m) -> float:
    return float(np.linalg.norm(m, "fro")) if m is not None else np.nan


def _critic_estimate(sys, pol, cc: CriticConfig, chain, vartheta_prev, seed, t):
    """One multi-epoch critic call for the current policy; returns
    (E_hat, vartheta_hat, samples_used)."""
    if cc.restart_chain or chain is None:
        chain = start_trajectory(sys, pol, derive_seed(seed, t))
    oracle = MarkovBellmanOracle(sys, pol, chain, cc.tau)
    if cc.h_norm is not None:
        h_norm = cc.h_norm
    else:
        h_norm = bias_constants(sys, pol).l_h if pol.stable else 1.0
    p0 = vartheta_prev if cc.warm_start == "previous" else np.zeros_like(vartheta_prev)
    result: MultiEpochResult = multi_epoch_run(
        oracle, p0, cc.d0, cc.epoch_iterations, h_norm=h_norm,
        sigma_x=cc.sigma_x, sigma_y=cc.sigma_y, tau=cc.tau, delta=cc.delta,
        calibrate_draws=cc.calibrate_draws,
    )
    e_hat = extract_natural_gradient(result.p_s, pol.gain, (sys.n, sys.k))
    return e_hat, result.p_s, result.samples_used


def oracle_vartheta(sys: LinearSystem, policy) -> np.ndarray:
    """Exact vartheta(K), for warm starts and diagnostics."""
    return policy_quantities(sys, policy).vartheta


def exact_critic_oracle(sys: LinearSystem, policy) -> ExactBellmanOracle:
    bs = exact_bellman_system(sys, policy)
    return ExactBellmanOracle(bs.h, bs.b)
