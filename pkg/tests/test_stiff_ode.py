"""Rosenbrock 2(3) solver, jacobian cache, and the explicit-failure probe."""

import json

import numpy as np
import pytest

from neurodiff.core_ode import OdeProblem, Retcode, SolverOptions
from neurodiff.errors import ConfigError
from neurodiff.stiff_ode import (
    JacobianCache,
    detect_explicit_failure,
    solve_rosenbrock,
)


def rober_rhs(u, p, t):
    y1, y2, y3 = u[0], u[1], u[2]
    k1, k2, k3 = p[0], p[1], p[2]
    return np.stack(
        [
            -k1 * y1 + k3 * y2 * y3,
            k1 * y1 - k2 * y2 * y2 - k3 * y2 * y3,
            k2 * y2 * y2,
        ]
    )


ROBER = OdeProblem(
    rhs=rober_rhs, u0=[1.0, 0.0, 0.0], tspan=(0.0, 1e11), params=[0.04, 3e7, 1e4]
)


def linear_stiff_problem(tspan=(0.0, 3.0)):
    return OdeProblem(
        rhs=lambda u, p, t: -50.0 * (u - np.cos(t)), u0=[0.0], tspan=tspan
    )


def linear_stiff_exact(t):
    return 50.0 * (50.0 * np.cos(t) + np.sin(t)) / 2501.0 - 2500.0 / 2501.0 * np.exp(-50.0 * t)


class TestRosenbrockSolve:
    def test_rober_terminal_state_and_step_count(self):
        opts = SolverOptions(reltol=1e-6, abstol=1e-11)
        path = solve_rosenbrock(ROBER, opts)
        assert path.retcode is Retcode.SUCCESS
        assert path.stats.n_accepted < 100_000
        y = path.u_matrix()[-1]
        assert y[0] < 1e-4
        assert y[2] > 0.9999

    def test_rober_cross_check_against_tighter_tolerance(self):
        loose = solve_rosenbrock(ROBER, SolverOptions(reltol=1e-5, abstol=1e-10))
        tight = solve_rosenbrock(ROBER, SolverOptions(reltol=1e-6, abstol=1e-11))
        np.testing.assert_allclose(
            loose.u_matrix()[-1], tight.u_matrix()[-1], rtol=1e-3, atol=1e-9
        )

    def test_rober_mass_conservation_at_all_nodes(self):
        opts = SolverOptions(reltol=1e-6, abstol=1e-11)
        path = solve_rosenbrock(ROBER, opts)
        mass = path.u_matrix().sum(axis=1)
        assert np.max(np.abs(mass - 1.0)) <= 100.0 * opts.reltol

    def test_linear_stiff_matches_closed_form(self):
        path = solve_rosenbrock(linear_stiff_problem(), SolverOptions(reltol=1e-6, abstol=1e-9))
        assert abs(path.u_matrix()[-1, 0] - linear_stiff_exact(3.0)) < 1e-4

    def test_dense_interpolation_against_closed_form(self):
        path = solve_rosenbrock(linear_stiff_problem(), SolverOptions(reltol=1e-7, abstol=1e-10))
        for tq in np.linspace(0.3, 2.9, 9):
            assert abs(path.interpolate(tq)[0] - linear_stiff_exact(tq)) < 1e-4

    def test_zero_rhs_constant_path_in_few_steps(self):
        prob = OdeProblem(rhs=lambda u, p, t: 0.0 * u, u0=[2.0, -1.0], tspan=(0.0, 10.0))
        path = solve_rosenbrock(prob)
        assert path.retcode is Retcode.SUCCESS
        assert path.stats.n_accepted < 50
        for ui in path.u:
            np.testing.assert_array_equal(ui, [2.0, -1.0])

    def test_order_at_least_two(self):
        errs = []
        for dt in (0.02, 0.01):
            path = solve_rosenbrock(linear_stiff_problem(), SolverOptions(fixed_dt=dt))
            errs.append(abs(path.u_matrix()[-1, 0] - linear_stiff_exact(3.0)))
        assert np.log2(errs[0] / errs[1]) >= 1.9

    def test_l_stability_damps_fast_mode_in_one_step(self):
        prob = OdeProblem(rhs=lambda u, p, t: -1e12 * u, u0=[1.0], tspan=(0.0, 1.0))
        path = solve_rosenbrock(prob, SolverOptions(fixed_dt=1.0))
        assert abs(path.u_matrix()[1, 0]) < 1e-9

    def test_saveat_log_spaced_nodes(self):
        grid = np.concatenate([[0.0], np.logspace(0.0, 11.0, 111)])
        path = solve_rosenbrock(ROBER, SolverOptions(reltol=1e-6, abstol=1e-11, saveat=grid))
        np.testing.assert_array_equal(path.t, grid)
        mass = path.u_matrix().sum(axis=1)
        assert np.max(np.abs(mass - 1.0)) <= 1e-4

    def test_singular_linear_solve_reported(self):
        # d(sqrt|u|)/du is 0 * inf = nan at u = 0, poisoning W beyond the retry
        prob = OdeProblem(rhs=lambda u, p, t: np.sqrt(np.abs(u)), u0=[0.0], tspan=(0.0, 1.0))
        with np.errstate(all="ignore"):
            path = solve_rosenbrock(prob)
        assert path.retcode is Retcode.SINGULAR_LINEAR_SOLVE

    def test_duals_rejected(self):
        from neurodiff.autodiff import Dual

        prob = OdeProblem(
            rhs=lambda u, p, t: -u,
            u0=Dual(np.ones(1), np.zeros((1, 1))),
            tspan=(0.0, 1.0),
        )
        with pytest.raises(ConfigError):
            solve_rosenbrock(prob)

    def test_backward_span(self):
        # backward in time the decay u' = -u is a benign growth problem
        prob = OdeProblem(
            rhs=lambda u, p, t: -u, u0=[np.exp(-1.0)], tspan=(1.0, 0.0)
        )
        path = solve_rosenbrock(prob, SolverOptions(reltol=1e-8, abstol=1e-11))
        assert path.retcode is Retcode.SUCCESS
        assert path.t[-1] == 0.0
        assert abs(path.u_matrix()[-1, 0] - 1.0) < 1e-5


class TestJacobianCache:
    def test_ad_matches_finite_difference_on_rober(self):
        u0 = np.array([1.0, 0.0, 0.0])
        p = np.array([0.04, 3e7, 1e4])
        J_ad = JacobianCache(rober_rhs, "forward-AD").evaluate(u0, p, 0.0)
        J_fd = JacobianCache(rober_rhs, "finite-difference").evaluate(u0, p, 0.0)
        scale = np.abs(J_ad).max()
        np.testing.assert_allclose(J_ad, J_fd, atol=1e-5 * scale)

    def test_ad_jacobian_exact_on_rober(self):
        u = np.array([0.5, 2e-5, 0.4])
        k1, k2, k3 = 0.04, 3e7, 1e4
        expect = np.array(
            [
                [-k1, k3 * u[2], k3 * u[1]],
                [k1, -2 * k2 * u[1] - k3 * u[2], -k3 * u[1]],
                [0.0, 2 * k2 * u[1], 0.0],
            ]
        )
        J = JacobianCache(rober_rhs).evaluate(u, np.array([k1, k2, k3]), 0.0)
        np.testing.assert_allclose(J, expect, rtol=1e-13)

    def test_cache_hit_on_same_point(self):
        calls = []

        def rhs(u, p, t):
            calls.append(1)
            return -u

        cache = JacobianCache(rhs)
        u = np.ones(2)
        J1 = cache.evaluate(u, None, 0.0)
        J2 = cache.evaluate(u, None, 0.0)
        assert J1 is J2
        assert len(calls) == 1

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError):
            JacobianCache(rober_rhs, "symbolic")


class TestDetectExplicitFailure:
    def test_rober_exhausts_budget_far_from_t_end(self):
        report = detect_explicit_failure(ROBER, budget=20_000)
        assert report.retcode is Retcode.MAX_STEPS_EXCEEDED
        assert report.steps == 20_000
        assert report.t_reached < 1e4

    def test_lotka_control_case_succeeds(self):
        lotka = OdeProblem(
            rhs=lambda u, p, t: np.stack(
                [p[0] * u[0] - p[1] * u[0] * u[1], -p[2] * u[1] + p[3] * u[0] * u[1]]
            ),
            u0=[1.0, 1.0],
            tspan=(0.0, 10.0),
            params=[1.5, 1.0, 3.0, 1.0],
        )
        report = detect_explicit_failure(lotka)
        assert report.retcode is Retcode.SUCCESS
        assert report.t_reached == 10.0
        assert report.steps < 1000

    def test_zero_budget_immediate(self):
        report = detect_explicit_failure(ROBER, budget=0)
        assert report.retcode is Retcode.MAX_STEPS_EXCEEDED
        assert report.steps == 0

    def test_zero_length_span(self):
        prob = OdeProblem(rhs=rober_rhs, u0=[1.0, 0.0, 0.0], tspan=(5.0, 5.0),
                          params=[0.04, 3e7, 1e4])
        report = detect_explicit_failure(prob)
        assert report.retcode is Retcode.SUCCESS
        assert report.steps == 0

    def test_report_serializes_to_json(self):
        report = detect_explicit_failure(ROBER, budget=100)
        data = json.loads(report.to_json())
        assert set(data) == {"retcode", "steps", "t_reached"}
        assert data["retcode"] == "MaxStepsExceeded"
