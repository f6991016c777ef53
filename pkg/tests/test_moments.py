import math

import numpy as np
import pytest
from conftest import benchmark_like_system, random_stable_policy, random_system

from lqrac.errors import UnstablePolicy
from lqrac.linalg import psd_sqrt, sigma_min
from lqrac.moments import (
    bellman_residual,
    bias_constants,
    conditional_state_action_cov,
    event_holds,
    event_threshold,
    exact_bellman_system,
    fit_power_envelope,
    gaussian_norm_tail,
    isserlis_moment,
    sharpness_lower_bound,
    stationary_model,
)
from lqrac.oracle import policy_quantities
from lqrac.simulate import empirical_state_action_cov
from lqrac.system import Policy


class TestIsserlis:
    def test_second_order_is_covariance(self, rng):
        sigma = rng.normal(size=(3, 3))
        sigma = sigma @ sigma.T
        assert isserlis_moment(sigma, (0, 2)) == sigma[0, 2]

    def test_fourth_moment_standard_normal(self):
        assert isserlis_moment(np.eye(2), (0, 0, 0, 0)) == 3.0

    def test_odd_orders_vanish(self, rng):
        sigma = rng.normal(size=(2, 2))
        sigma = sigma @ sigma.T
        assert isserlis_moment(sigma, (0,)) == 0.0
        assert isserlis_moment(sigma, (0, 1, 1)) == 0.0

    def test_fourth_order_pair_sum(self, rng):
        sigma = rng.normal(size=(4, 4))
        sigma = sigma @ sigma.T + np.eye(4)
        i, j, u, v = 0, 1, 2, 3
        expect = sigma[i, j] * sigma[u, v] + sigma[i, u] * sigma[j, v] + sigma[i, v] * sigma[j, u]
        assert abs(isserlis_moment(sigma, (i, j, u, v)) - expect) < 1e-12

    def test_monte_carlo_cross_check(self):
        rng = np.random.default_rng(42)
        sigma = np.array([[1.3, 0.4], [0.4, 1.1]])
        draws = rng.multivariate_normal(np.zeros(2), sigma, size=2_000_000)
        mc = float(np.mean(draws[:, 0] ** 2 * draws[:, 1] ** 2))
        se = float(np.std(draws[:, 0] ** 2 * draws[:, 1] ** 2, ddof=1)) / math.sqrt(len(draws))
        assert abs(isserlis_moment(sigma, (0, 0, 1, 1)) - mc) <= 3.0 * se

    def test_double_factorial_bound(self, rng):
        # |E prod X| <= (2p-1)!! ||Sigma||^p on random index sets
        sigma = rng.normal(size=(4, 4))
        sigma = sigma @ sigma.T + 0.5 * np.eye(4)
        s_norm = np.linalg.norm(sigma, 2)
        for p, dfac in ((1, 1.0), (2, 3.0), (3, 15.0), (4, 105.0)):
            for _ in range(20):
                idx = rng.integers(0, 4, size=2 * p)
                assert abs(isserlis_moment(sigma, idx)) <= dfac * s_norm**p + 1e-12


class TestStationaryModel:
    def test_benchmark_deadbeat_blocks(self, bench):
        model = stationary_model(bench, [[1.0]])
        np.testing.assert_allclose(
            model.sigma_tilde, [[0.02, -0.02], [-0.02, 0.03]], rtol=1e-12
        )
        # A - B K = 0: the state transition carries no signal from x_t
        assert model.cross_cov[0, 0] == 0.0
        assert model.cross_cov[0, 1] == 0.0

    def test_state_block_matches_oracle(self, rng):
        for _ in range(10):
            sys = random_system(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            pol = random_stable_policy(sys, rng)
            model = stationary_model(sys, pol)
            q = policy_quantities(sys, pol)
            assert np.linalg.norm(model.sigma_tilde[: sys.n, : sys.n] - q.sigma_k) <= 1e-9

    def test_simulated_covariance_matches(self, rng):
        sys = random_system(rng, 2, 1)
        pol = random_stable_policy(sys, rng, rho_cap=0.85)
        model = stationary_model(sys, pol)
        mean, se = empirical_state_action_cov(sys, pol, num_samples=400_000, seed=77)
        dev = np.abs(mean - model.sigma_tilde) / np.maximum(se, 1e-300)
        assert dev.max() <= 3.0

    def test_unstable_rejected(self, bench):
        with pytest.raises(UnstablePolicy):
            stationary_model(bench, [[2.5]])

    def test_joint_is_psd(self, bench):
        joint = stationary_model(bench, [[0.5]]).joint
        assert np.min(np.linalg.eigvalsh(joint)) >= -1e-12


class TestExactBellman:
    def test_first_row_structure(self, bench):
        bs = exact_bellman_system(bench, [[0.7]])
        assert bs.h[0, 0] == 1.0
        assert np.all(bs.h[0, 1:] == 0.0)
        assert bs.exact

    def test_first_entry_is_average_cost(self, bench):
        bs = exact_bellman_system(bench, [[0.5]])
        q = policy_quantities(bench, [[0.5]])
        assert abs(bs.b[0] - q.j) < 1e-10

    def test_solution_residual_benchmark(self, bench):
        assert bellman_residual(bench, [[0.5]]) <= 1e-6

    @pytest.mark.parametrize("n,k", [(1, 1), (2, 1), (3, 2)])
    def test_solution_residual_random(self, rng, n, k):
        sys = random_system(rng, n, k)
        pol = random_stable_policy(sys, rng)
        assert bellman_residual(sys, pol) <= 1e-6

    def test_invertible_with_exploration(self, bench, rng):
        for _ in range(5):
            pol = Policy.for_system(bench, [[rng.uniform(0.1, 1.9)]])
            if not pol.stable:
                continue
            bs = exact_bellman_system(bench, pol)
            assert np.linalg.svd(bs.h, compute_uv=False)[-1] > 0


class TestSharpness:
    def test_benchmark_positive_and_valid(self, bench):
        bs = exact_bellman_system(bench, [[0.5]])
        smin = np.linalg.svd(bs.h, compute_uv=False)[-1]
        bound = sharpness_lower_bound(bench, [[0.5]])
        assert bound > 0.0
        assert bound <= smin

    def test_degenerate_branch_is_zero(self, bench):
        # ||K||^2 sigma_min(Psi) >= sigma2: the bound collapses to the
        # vacuous 0 rather than overstating sharpness
        assert sharpness_lower_bound(bench, [[1.5]]) == 0.0

    def test_dominated_on_random_gains(self, bench, rng):
        checked = 0
        for _ in range(50):
            pol = Policy.for_system(bench, [[rng.uniform(0.05, 1.95)]])
            if not pol.stable:
                continue
            bs = exact_bellman_system(bench, pol)
            smin = np.linalg.svd(bs.h, compute_uv=False)[-1]
            assert sharpness_lower_bound(bench, pol) <= smin
            checked += 1
        assert checked >= 40


class TestNormTail:
    def test_formula_value(self):
        t = gaussian_norm_tail(np.zeros(1), np.eye(1), 0.5)
        root = math.sqrt(math.log(2.0))
        expect = ((4 * root + 1.0) ** 2 - 1.0) / 8.0 + 1.0
        assert abs(t - expect) < 1e-12

    def test_monte_carlo_exceedance_half(self):
        rng = np.random.default_rng(3)
        t = gaussian_norm_tail(np.zeros(1), np.eye(1), 0.5)
        draws = rng.standard_normal(1_000_000)
        assert np.mean(draws**2 > t) <= 0.5

    def test_monte_carlo_exceedance_shifted(self):
        rng = np.random.default_rng(4)
        mu, var = 0.7, 2.0
        t = gaussian_norm_tail([mu], [[var]], 0.01)
        draws = mu + math.sqrt(var) * rng.standard_normal(1_000_000)
        assert np.mean(draws**2 > t) <= 0.01

    def test_delta_near_one_limit(self):
        t = gaussian_norm_tail(np.ones(2), 2.0 * np.eye(2), 1.0 - 1e-12)
        assert abs(t - (np.trace(2.0 * np.eye(2)) + 2.0 * 2.0)) < 1e-4

    def test_bad_delta(self):
        with pytest.raises(ValueError):
            gaussian_norm_tail(np.zeros(1), np.eye(1), 1.5)


class TestEvent:
    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_empirical_frequency(self, bench, delta, rng):
        pol = Policy.for_system(bench, [[0.5]])
        cov = conditional_state_action_cov(bench, pol, steps=None)
        thr = event_threshold(cov, 0.0, delta)
        root = psd_sqrt(cov)
        draws = rng.standard_normal((100_000, 2)) @ root.T
        freq = np.mean([event_holds(z[:1], z[1:], thr) for z in draws])
        assert freq >= 1.0 - delta

    def test_finite_horizon_cov_converges(self, bench):
        pol = Policy.for_system(bench, [[0.5]])
        c5 = conditional_state_action_cov(bench, pol, steps=5)
        cinf = conditional_state_action_cov(bench, pol, steps=None)
        c40 = conditional_state_action_cov(bench, pol, steps=40)
        assert np.linalg.norm(c40 - cinf) < np.linalg.norm(c5 - cinf)
        assert np.linalg.norm(c40 - cinf) < 1e-9


class TestBiasConstants:
    def test_vector_bound_ties_to_matrix_bound(self, bench):
        bc = bias_constants(bench, [[0.5]])
        assert bc.m_b == bc.m_h * 100.0

    def test_l_h_at_least_one(self, rng):
        for _ in range(10):
            sys = random_system(rng, 2, 1)
            pol = random_stable_policy(sys, rng)
            assert bias_constants(sys, pol).l_h >= 1.0

    def test_h_norm_dominated(self, rng):
        for _ in range(15):
            sys = benchmark_like_system(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            pol = random_stable_policy(sys, rng)
            bc = bias_constants(sys, pol)
            bs = exact_bellman_system(sys, pol)
            assert np.linalg.norm(bs.h, 2) <= bc.l_h
            assert np.linalg.norm(bs.b) <= bc.b_bound

    def test_vartheta_dominated(self, rng):
        for _ in range(15):
            sys = benchmark_like_system(rng, int(rng.integers(1, 4)), int(rng.integers(1, 3)))
            pol = random_stable_policy(sys, rng)
            bc = bias_constants(sys, pol)
            vt = policy_quantities(sys, pol).vartheta
            assert np.linalg.norm(vt) <= bc.r_star

    @pytest.mark.parametrize("delta", [0.1, 0.01])
    def test_sampled_magnitudes_within_high_probability_bound(self, bench, delta):
        from lqrac.simulate import markov_sample, start_trajectory

        pol = Policy.for_system(bench, [[0.5]])
        bc = bias_constants(bench, pol, x0_norm=0.0, delta=delta)
        cap_h = bc.m_h * math.log(math.e / delta)
        cap_b = bc.m_b * math.log(math.e / delta)
        state = start_trajectory(bench, pol, 13)
        hits = 0
        n_draws = 2000
        for _ in range(n_draws):
            batch, state = markov_sample(bench, pol, state, 5)
            if (np.linalg.norm(batch.h_tilde, 2) <= cap_h
                    and np.linalg.norm(batch.b_tilde) <= cap_b):
                hits += 1
        assert hits / n_draws >= 1.0 - delta

    def test_power_envelope(self, bench):
        pol = Policy.for_system(bench, [[0.5]])
        f = bench.closed_loop(pol.gain)
        rho_star = 0.5 * (1 + pol.rho)
        gamma = fit_power_envelope(f, rho_star)
        pw = np.eye(1)
        for k in range(40):
            assert np.linalg.norm(pw, 2) <= gamma * rho_star**k + 1e-12
            pw = pw @ f
