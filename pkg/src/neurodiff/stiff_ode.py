"""Rosenbrock 2(3) stiff solver and the explicit-failure probe.

The advancing method is the L-stable order-2 Rosenbrock scheme of Shampine
& Reichelt ("The MATLAB ODE Suite", SIAM J. Sci. Comput. 18(1), 1997), the
method behind ``ode23s``: two linear-solve stages advance the solution and a
third supplies an order-3 embedded error estimate. Jacobians come from
forward-mode duals by default, finite differences on request. One LU
factorization of W = I - dt*d*J serves all three stages of a step.

State dimensions here are tiny (ROBER is 3), so the linear algebra is plain
dense LU via numpy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import isdual, jacobian, value
from .core_ode import (
    DenseOutput,
    OdeProblem,
    Retcode,
    SolutionPath,
    SolverOptions,
    SolveStats,
    StepController,
    error_norm,
    initial_step,
    solve_erk45,
)
from .errors import ConfigError, DimensionMismatch

_D_GAMMA = 1.0 / (2.0 + np.sqrt(2.0))
_C32 = 6.0 + np.sqrt(2.0)
ORDER = 2


class JacobianCache:
    """df/du at the last evaluation point, recomputed only when (u, t) moves.

    ``mode`` is "forward-AD" (dual sweep) or "finite-difference" (central
    differences with h = 1e-6 * max(1, |u_j|)). Step rejections re-enter at
    the same state, so caching on the evaluation point skips those reevals.
    """

    def __init__(self, rhs, mode: str = "forward-AD"):
        if mode not in ("forward-AD", "finite-difference"):
            raise ConfigError(f"unknown jacobian mode {mode!r}")
        self.rhs = rhs
        self.mode = mode
        self.J: Optional[np.ndarray] = None
        self.point = None  # (id(u), t) of the last evaluation

    def evaluate(self, u, p, t: float) -> np.ndarray:
        key = (id(u), t)
        if self.J is not None and self.point == key:
            return self.J
        if self.mode == "forward-AD":
            J = jacobian(lambda v: self.rhs(v, p, t), u)
        else:
            n = len(u)
            J = np.empty((n, n))
            for j in range(n):
                h = 1e-6 * max(1.0, abs(u[j]))
                up, um = u.copy(), u.copy()
                up[j] += h
                um[j] -= h
                J[:, j] = (self.rhs(up, p, t) - self.rhs(um, p, t)) / (2.0 * h)
        self.J = np.asarray(J, dtype=np.float64)
        self.point = key
        return self.J


def _time_derivative(rhs, u, p, t: float, mode: str) -> np.ndarray:
    if mode == "forward-AD":
        from .autodiff import Dual

        out = rhs(u, p, Dual(np.float64(t), np.ones(1)))
        return out.eps[..., 0] if isdual(out) else np.zeros(len(u))
    h = 1e-6 * max(1.0, abs(t))
    return np.asarray(rhs(u, p, t + h) - rhs(u, p, t - h)) / (2.0 * h)


def _lu_solve_factory(W: np.ndarray):
    # returns a solver closure or None if W is singular even after one
    # regularization retry
    for shift in (0.0, np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(W).max())):
        try:
            Wr = W if shift == 0.0 else W + shift * np.eye(W.shape[0])
            lu_inv = np.linalg.inv(Wr)
        except np.linalg.LinAlgError:
            continue
        if not np.all(np.isfinite(lu_inv)):
            continue
        return lambda b: lu_inv @ b
    return None


def solve_rosenbrock(problem: OdeProblem, opts: Optional[SolverOptions] = None) -> SolutionPath:
    """Adaptive L-stable Rosenbrock 2(3) solve for stiff problems.

    Shares the error-norm acceptance contract and options with
    ``solve_erk45``. Value-only: states must be plain arrays (use the
    finite-difference gradient backend for sensitivities of stiff solves).
    """
    opts = opts if opts is not None else SolverOptions()
    if opts.saveat is not None and not opts.save_dense:
        raise ConfigError("saveat output requires save_dense")
    u0, t0, t1 = problem.resolve()
    if isdual(u0) or isdual(problem.params) or isdual(t0) or isdual(t1):
        raise ConfigError("the stiff solver is value-only; duals are unsupported")
    u0 = np.asarray(u0, dtype=np.float64)
    p = problem.params
    rhs = problem.rhs
    n = len(u0)
    t0, t1 = float(t0), float(t1)
    stats = SolveStats()

    direction = 1.0 if t1 >= t0 else -1.0
    eps = np.finfo(float).eps
    eye = np.eye(n)

    f0 = np.asarray(rhs(u0, p, t0), dtype=np.float64)
    stats.n_rhs_evals += 1
    if len(f0) != n:
        raise DimensionMismatch(f"rhs returned length {len(f0)}, state has {n}")

    dense = DenseOutput("hermite", direction) if opts.save_dense else None
    ts = [t0]
    us = [u0]
    if not np.all(np.isfinite(f0)) or not np.all(np.isfinite(u0)):
        return _finish(problem, opts, ts, us, dense, Retcode.NAN_DETECTED, stats, t0, t1)
    if t0 == t1:
        return _finish(problem, opts, ts, us, dense, Retcode.SUCCESS, stats, t0, t1)

    fixed = opts.fixed_dt is not None
    if fixed:
        dt0 = abs(opts.fixed_dt)
    elif opts.dt_init is not None:
        dt0 = abs(opts.dt_init)
    else:
        dt0 = initial_step(rhs, u0, p, t0, f0, direction, ORDER, opts.reltol,
                           opts.abstol, dt_max=opts.dt_max if opts.dt_max is not None else float("inf"))
        stats.n_rhs_evals += 1
    # I-control with the order-3 error estimate: err^(-1/3)
    ctrl = StepController(dt0, opts, beta1=1.0 / 3.0, beta2=0.0, reject_exponent=1.0 / 3.0)

    jac = JacobianCache(rhs, opts.jac_mode)
    t, u, F0 = t0, u0, f0
    retcode = None
    attempts = 0
    nonfinite_last = False
    while True:
        if (t - t1) * direction >= 0.0:
            retcode = Retcode.SUCCESS
            break
        if attempts >= opts.max_steps:
            retcode = Retcode.MAX_STEPS_EXCEEDED
            break
        if not fixed and ctrl.dt < max(opts.dt_min, 16.0 * eps * abs(t)):
            retcode = Retcode.NAN_DETECTED if nonfinite_last else Retcode.DT_UNDERFLOW
            break
        attempts += 1

        dt = ctrl.dt * direction
        last = (t + min(1.0001 * ctrl.dt, ctrl.dt_max) * direction - t1) * direction >= 0.0
        if last:
            dt = t1 - t

        J = jac.evaluate(u, p, t)
        stats.n_rhs_evals += 1
        T = _time_derivative(rhs, u, p, t, opts.jac_mode)
        stats.n_rhs_evals += 1
        solve = _lu_solve_factory(eye - (dt * _D_GAMMA) * J)
        if solve is None:
            retcode = Retcode.SINGULAR_LINEAR_SOLVE
            break

        hdT = (dt * _D_GAMMA) * T
        k1 = solve(F0 + hdT)
        F1 = np.asarray(rhs(u + (0.5 * dt) * k1, p, t + 0.5 * dt), dtype=np.float64)
        k2 = solve(F1 - k1) + k1
        u_new = u + dt * k2
        F2 = np.asarray(rhs(u_new, p, t + dt), dtype=np.float64)
        k3 = solve(F2 - _C32 * (k2 - F1) - 2.0 * (k1 - F0) + hdT)
        stats.n_rhs_evals += 2
        err_vec = (dt / 6.0) * (k1 - 2.0 * k2 + k3)

        if fixed:
            err, accept = 0.0, True
        else:
            err = error_norm(err_vec, u, u_new, opts.abstol, opts.reltol)
            accept = err <= 1.0
        nonfinite_last = not np.isfinite(err) or not np.all(np.isfinite(u_new))
        if nonfinite_last:
            accept = False
            if fixed:
                retcode = Retcode.NAN_DETECTED
                break

        if accept:
            if dense is not None:
                dense.append(t, dt, (u, u_new, F0, F2))
            t = t1 if last else t + dt
            u = u_new
            F0 = F2  # slope at the accepted point, reused next step
            ts.append(t)
            us.append(u)
            stats.n_accepted += 1
            if not fixed:
                ctrl.after_accept(err)
        else:
            stats.n_rejected += 1
            if nonfinite_last:
                ctrl.dt *= opts.factor_min
                ctrl.rejected_last = True
            else:
                ctrl.after_reject(err)

    return _finish(problem, opts, ts, us, dense, retcode, stats, t0, t1)


def _finish(problem, opts, ts, us, dense, retcode, stats, t0, t1) -> SolutionPath:
    path = SolutionPath(np.asarray(ts), us, dense, retcode, stats)
    if opts.saveat is None or retcode is not Retcode.SUCCESS:
        return path
    grid = opts.resolve_saveat(t0, t1)
    saved = [path.interpolate(tq) for tq in grid]
    return SolutionPath(grid, saved, dense, retcode, stats)


@dataclass
class FailureReport:
    """Outcome of driving the explicit solver against a (possibly stiff) problem."""

    retcode: Retcode
    steps: int
    t_reached: float

    def to_json(self) -> str:
        return json.dumps(
            {"retcode": self.retcode.value, "steps": self.steps, "t_reached": self.t_reached}
        )


def detect_explicit_failure(
    problem: OdeProblem, opts: Optional[SolverOptions] = None, budget: int = 100_000
) -> FailureReport:
    """Run the explicit RK pair under a step budget and report how far it got.

    On stiff problems the expected payload is MaxStepsExceeded with
    t_reached far short of t_end; on non-stiff control problems it reports
    Success.
    """
    _, t0, _ = problem.resolve()
    if budget < 1:
        return FailureReport(Retcode.MAX_STEPS_EXCEEDED, 0, float(value(t0)))
    base = opts if opts is not None else SolverOptions()
    probe_opts = SolverOptions(
        reltol=base.reltol,
        abstol=base.abstol,
        max_steps=budget,
        dt_min=base.dt_min,
        save_dense=False,
    )
    path = solve_erk45(problem, probe_opts)
    steps = path.stats.n_accepted + path.stats.n_rejected
    return FailureReport(path.retcode, steps, float(path.t[-1]))
