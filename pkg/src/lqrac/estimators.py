"""Scikit-learn style facade over the learners.

Both estimators follow the fit/predict + get_params conventions so they
compose with ecosystem tooling (cloning, grid configuration, pipelines
that treat the gain as a learned linear map).  ``fit`` takes the plant
description instead of a data matrix: the training data here is generated
by interacting with the system.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .actor import ActorConfig, CriticConfig, extract_natural_gradient, train
from .critic import MarkovBellmanOracle, multi_epoch_run
from .moments import bias_constants
from .oracle import policy_quantities
from .simulate import start_trajectory
from .system import require_stable
from .validation import check_states, check_system


class NaturalPolicyGradientRegulator(BaseEstimator):
    """Learn a feedback gain for a linear-quadratic plant.

    Parameters mirror the training configuration: ``mode`` selects exact
    natural gradients ("oracle") or the sampled primal-dual critic
    ("critic"); ``eta`` None uses the guaranteed step 1/(2 C1).

    After ``fit(system, gain0=...)`` the learned gain is in ``gain_`` and
    ``predict(X)`` maps states (rows) to control actions u = -K x.
    """

    def __init__(
        self,
        iterations: int = 50,
        eta: float | None = None,
        epsilon: float = 1e-3,
        mode: str = "oracle",
        epoch_iterations: tuple = (100, 200, 400),
        mixing_skip: int = 20,
        failure_rate: float = 0.01,
        primal_radius: float = 600.0,
        calibrate_draws: int = 50,
        guards: bool = True,
        oracle_diagnostics: bool = False,
        restart_chain: bool = False,
        random_state: int = 0,
    ):
        self.iterations = iterations
        self.eta = eta
        self.epsilon = epsilon
        self.mode = mode
        self.epoch_iterations = epoch_iterations
        self.mixing_skip = mixing_skip
        self.failure_rate = failure_rate
        self.primal_radius = primal_radius
        self.calibrate_draws = calibrate_draws
        self.guards = guards
        self.oracle_diagnostics = oracle_diagnostics
        self.restart_chain = restart_chain
        self.random_state = random_state

    def fit(self, system, gain0=None):
        sys = check_system(system)
        if gain0 is None:
            raise ValueError("fit requires a stabilizing initial gain (gain0)")
        config = ActorConfig(
            iterations=self.iterations,
            eta=self.eta,
            epsilon=self.epsilon,
            gradient_mode=self.mode,
            critic=CriticConfig(
                epoch_iterations=tuple(self.epoch_iterations),
                tau=self.mixing_skip,
                delta=self.failure_rate,
                d0=self.primal_radius,
                calibrate_draws=self.calibrate_draws,
                restart_chain=self.restart_chain,
            ),
            guards_enabled=self.guards,
            oracle_diagnostics=self.oracle_diagnostics,
        )
        policy, trace = train(sys, gain0, config, seed=self.random_state)
        self.system_ = sys
        self.gain_ = policy.gain
        self.rho_ = policy.rho
        self.trace_ = trace
        self.n_features_in_ = sys.n
        self.cost_ = trace.cost[-1] if trace.cost else np.nan
        self.n_samples_ = trace.samples[-1] if trace.samples else 0
        return self

    def predict(self, X):
        if not hasattr(self, "gain_"):
            raise RuntimeError("call fit before predict")
        states = check_states(X, self.n_features_in_)
        return -(states @ self.gain_.T)


class BellmanCriticEstimator(BaseEstimator):
    """Estimate the Bellman unknown (J, svec Theta) for one fixed policy
    from a single simulated trajectory, via the shrinking multi-epoch
    primal-dual method.

    After ``fit(system, gain)``: ``vartheta_`` holds the estimate,
    ``cost_`` its first component, ``natural_gradient_`` the extracted
    Theta-block gradient, and ``samples_used_`` the raw transition count.
    """

    def __init__(
        self,
        epoch_iterations: tuple = (100, 200, 400),
        mixing_skip: int = 20,
        failure_rate: float = 0.01,
        primal_radius: float = 600.0,
        calibrate_draws: int = 50,
        h_norm: float | None = None,
        random_state: int = 0,
    ):
        self.epoch_iterations = epoch_iterations
        self.mixing_skip = mixing_skip
        self.failure_rate = failure_rate
        self.primal_radius = primal_radius
        self.calibrate_draws = calibrate_draws
        self.h_norm = h_norm
        self.random_state = random_state

    def fit(self, system, gain):
        sys = check_system(system)
        pol = require_stable(sys, gain)
        chain = start_trajectory(sys, pol, self.random_state)
        oracle = MarkovBellmanOracle(sys, pol, chain, self.mixing_skip)
        h_norm = self.h_norm if self.h_norm is not None else bias_constants(sys, pol).l_h
        dim = policy_quantities(sys, pol).vartheta.shape[0]
        result = multi_epoch_run(
            oracle,
            np.zeros(dim),
            self.primal_radius,
            tuple(self.epoch_iterations),
            h_norm=h_norm,
            tau=self.mixing_skip,
            delta=self.failure_rate,
            calibrate_draws=self.calibrate_draws,
        )
        self.system_ = sys
        self.vartheta_ = result.p_s
        self.cost_ = float(result.p_s[0])
        self.natural_gradient_ = extract_natural_gradient(result.p_s, pol.gain, (sys.n, sys.k))
        self.samples_used_ = result.samples_used
        self.n_features_in_ = sys.n
        return self

    def predict(self, X):
        """Differential state values x^T Theta_11 x (up to the constant
        offset) for state rows X, from the fitted quadratic model."""
        if not hasattr(self, "vartheta_"):
            raise RuntimeError("call fit before predict")
        from .linalg import smat

        theta = smat(self.vartheta_[1:])
        n = self.n_features_in_
        states = check_states(X, n)
        return np.einsum("bi,ij,bj->b", states, theta[:n, :n], states)
