"""Euler-Maruyama solver and Monte-Carlo statistics."""

import math

import numpy as np
import pytest

import neurodiff.sde as sde
from neurodiff.core_ode import OdeProblem, Retcode, solve_euler_fixed
from neurodiff.errors import ConfigError, SolveFailure
from neurodiff.sde import (
    NoiseConfig,
    SdeProblem,
    mc_summary_csv,
    monte_carlo_mean,
    solve_euler_maruyama,
    strong_error_vs_gbm,
)

GBM_MEAN = math.exp(0.05)  # E u(1) for du = 0.05 u dt + sigma u dW, u0 = 1


def gbm_problem(sigma=0.2):
    return SdeProblem(
        drift=lambda u, p, t: 0.05 * u,
        diffusion=lambda u, p, t: sigma * u,
        u0=[1.0],
        tspan=(0.0, 1.0),
    )


class TestSolveEulerMaruyama:
    def test_zero_diffusion_is_bitwise_euler(self):
        def rhs(u, p, t):
            return np.stack(
                [p[0] * u[0] - p[1] * u[0] * u[1], -p[2] * u[1] + p[3] * u[0] * u[1]]
            )

        p = [1.5, 1.0, 3.0, 1.0]
        ode = solve_euler_fixed(
            OdeProblem(rhs=rhs, u0=[1.0, 1.0], tspan=(0.0, 1.0), params=p), 0.01
        )
        em = solve_euler_maruyama(
            SdeProblem(drift=rhs, diffusion=lambda u, q, t: 0.0 * u,
                       u0=[1.0, 1.0], tspan=(0.0, 1.0), params=p),
            NoiseConfig(seed=3, dt=0.01),
        )
        np.testing.assert_array_equal(em.t, ode.t)
        for a, b in zip(em.u, ode.u):
            np.testing.assert_array_equal(a, b)

    def test_same_seed_identical_different_seed_diverges_at_first_step(self):
        a = solve_euler_maruyama(gbm_problem(), NoiseConfig(seed=11, dt=1e-2))
        b = solve_euler_maruyama(gbm_problem(), NoiseConfig(seed=11, dt=1e-2))
        c = solve_euler_maruyama(gbm_problem(), NoiseConfig(seed=12, dt=1e-2))
        for ua, ub in zip(a.u, b.u):
            np.testing.assert_array_equal(ua, ub)
        assert a.u[1][0] != c.u[1][0]

    def test_node_grid(self):
        path = solve_euler_maruyama(gbm_problem(), NoiseConfig(seed=0, dt=0.1))
        np.testing.assert_array_equal(path.t, [0.1 * k for k in range(11)])
        assert path.stats.n_accepted == 10

    def test_nan_detected_on_blowup(self):
        prob = SdeProblem(
            drift=lambda u, p, t: 1e3 * u * u * u,
            diffusion=lambda u, p, t: 0.0 * u,
            u0=[10.0],
            tspan=(0.0, 1.0),
        )
        with np.errstate(all="ignore"):
            path = solve_euler_maruyama(prob, NoiseConfig(seed=0, dt=0.1))
        assert path.retcode is Retcode.NAN_DETECTED
        assert len(path.t) < 11

    def test_indivisible_dt_rejected(self):
        with pytest.raises(ConfigError):
            solve_euler_maruyama(gbm_problem(), NoiseConfig(seed=0, dt=0.3))

    def test_nonpositive_dt_rejected(self):
        with pytest.raises(ConfigError):
            NoiseConfig(seed=0, dt=0.0)


class TestMonteCarloMean:
    def test_gbm_mean_within_three_stderr(self):
        mean, se = monte_carlo_mean(gbm_problem(), 1e-3, 10_000, base_seed=42)
        assert abs(mean[0] - GBM_MEAN) < 3.0 * se[0]
        assert 0.001 < se[0] < 0.004

    def test_zero_noise_mean_exact_and_stderr_zero(self):
        prob = gbm_problem(sigma=0.0)
        mean, se = monte_carlo_mean(prob, 1e-2, 100, base_seed=0)
        ref = solve_euler_maruyama(prob, NoiseConfig(seed=0, dt=1e-2))
        assert mean[0] == ref.u_matrix()[-1, 0]
        assert np.all(se == 0.0)

    def test_forced_identical_seeds_give_zero_stderr(self):
        mean, se = monte_carlo_mean(gbm_problem(), 1e-2, 2, base_seed=5, seed_stride=0)
        ref = solve_euler_maruyama(gbm_problem(), NoiseConfig(seed=5, dt=1e-2))
        assert mean[0] == ref.u_matrix()[-1, 0]
        assert np.all(se == 0.0)

    def test_deterministic_rerun(self):
        m1, s1 = monte_carlo_mean(gbm_problem(), 1e-2, 500, base_seed=9)
        m2, s2 = monte_carlo_mean(gbm_problem(), 1e-2, 500, base_seed=9)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_array_equal(s1, s2)

    def test_chunking_does_not_change_results(self, monkeypatch):
        m1, s1 = monte_carlo_mean(gbm_problem(), 1e-2, 50, base_seed=1)
        monkeypatch.setattr(sde, "MC_CHUNK", 7)
        m2, s2 = monte_carlo_mean(gbm_problem(), 1e-2, 50, base_seed=1)
        np.testing.assert_array_equal(m1, m2)
        np.testing.assert_array_equal(s1, s2)

    def test_disjoint_seed_ranges_agree(self):
        m1, s1 = monte_carlo_mean(gbm_problem(), 1e-2, 4000, base_seed=0)
        m2, s2 = monte_carlo_mean(gbm_problem(), 1e-2, 4000, base_seed=100_000)
        assert abs(m1[0] - m2[0]) <= 4.0 * math.hypot(s1[0], s2[0])

    def test_failing_path_identifies_seed(self):
        prob = SdeProblem(
            drift=lambda u, p, t: 1e3 * u * u * u,
            diffusion=lambda u, p, t: 0.0 * u,
            u0=[10.0],
            tspan=(0.0, 1.0),
        )
        with np.errstate(all="ignore"):
            with pytest.raises(SolveFailure, match="seed 17"):
                monte_carlo_mean(prob, 0.1, 10, base_seed=17)

    def test_single_path_rejected(self):
        with pytest.raises(ConfigError):
            monte_carlo_mean(gbm_problem(), 1e-2, 1, base_seed=0)

    def test_interior_query_time(self):
        # multi-component state exercises the per-component layout
        prob = SdeProblem(
            drift=lambda u, p, t: 0.0 * u,
            diffusion=lambda u, p, t: 0.0 * u,
            u0=[2.0, -3.0],
            tspan=(0.0, 1.0),
        )
        mean, se = monte_carlo_mean(prob, 0.1, 4, base_seed=0, t_query=0.5)
        np.testing.assert_array_equal(mean, [2.0, -3.0])

    def test_off_grid_query_rejected(self):
        with pytest.raises(ConfigError):
            monte_carlo_mean(gbm_problem(), 0.1, 4, base_seed=0, t_query=0.55)


class TestConvergence:
    def test_pathwise_error_shrinks_with_dt(self):
        # coupled to the exact solution on shared increments the method is
        # order 1/2, so a 10x dt drop lands the error ratio near sqrt(10)
        e_coarse = strong_error_vs_gbm(0.05, 0.2, 1.0, 1.0, 1e-2, 20_000, 7)
        e_fine = strong_error_vs_gbm(0.05, 0.2, 1.0, 1.0, 1e-3, 20_000, 7)
        assert 1.5 <= e_coarse / e_fine <= 6.0


class TestSummaryCsv:
    def test_layout_and_roundtrip(self):
        mean, se = monte_carlo_mean(gbm_problem(), 1e-2, 100, base_seed=3)
        text = mc_summary_csv(mean, se, 100, 1e-2, 3)
        lines = text.strip().split("\n")
        assert lines[0] == "component,mean,stderr,n_paths,dt,seed"
        fields = lines[1].split(",")
        assert float(fields[1]) == mean[0]
        assert float(fields[2]) == se[0]
        assert fields[3] == "100"
        assert fields[5] == "3"
