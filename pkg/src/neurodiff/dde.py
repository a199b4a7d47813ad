"""Constant-lag delay equations by the method of steps.

The integrator is the explicit RK pair from core_ode; history queries are
answered from the user's history function for times at or before the start,
and from the solve's own growing dense output after that. Capping the step
at the smallest lag guarantees every query lands in already-completed
intervals. Derivative discontinuities radiating from the start are pinned as
exact step endpoints for the first few lag multiples, after which they are
smooth enough for the error estimate to handle unaided.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .autodiff import isdual, value
from .core_ode import (
    DenseOutput,
    OdeProblem,
    Retcode,
    SolutionPath,
    SolverOptions,
    SolveStats,
    solve_erk45,
)
from .errors import ConfigError, HistoryQueryAhead

# derivative jumps smooth out one order per lag interval; past this many
# multiples the interpolant error estimate no longer notices them
SMOOTHING_LEVELS = 4


@dataclass
class DdeProblem:
    """Delay problem u'(t) = rhs(u, h, p, t) with h(p, s) the lagged state.

    ``history`` supplies the state for s <= t_start; inside the span the
    solver answers h from its own dense output. Only constant positive lags
    are supported.
    """

    rhs: Callable
    history: Callable
    constant_lags: Sequence[float]
    u0: object
    tspan: tuple
    params: object = None

    def __post_init__(self):
        lags = [float(x) for x in self.constant_lags]
        if not lags:
            raise ConfigError("constant_lags must be non-empty")
        if any(not math.isfinite(x) or x <= 0.0 for x in lags):
            raise ConfigError("all lags must be positive and finite")
        self.constant_lags = lags
        if not isdual(self.u0):
            self.u0 = np.atleast_1d(np.asarray(self.u0, dtype=np.float64))
        if self.params is not None and not isdual(self.params):
            self.params = np.asarray(self.params, dtype=np.float64)

    def with_params(self, params) -> "DdeProblem":
        return DdeProblem(
            rhs=self.rhs,
            history=self.history,
            constant_lags=self.constant_lags,
            u0=self.u0,
            tspan=self.tspan,
            params=params,
        )


def _forced_nodes(t0: float, t1: float, lags) -> list:
    nodes = set()
    span = t1 - t0
    for lag in lags:
        k_max = min(math.ceil(span / lag), SMOOTHING_LEVELS)
        for k in range(1, k_max + 1):
            node = t0 + k * lag
            if t0 < node < t1:
                nodes.add(node)
    return sorted(nodes)


def solve_dde_mos(problem: DdeProblem, opts: Optional[SolverOptions] = None) -> SolutionPath:
    """Method-of-steps solve; same options and retcode contract as the ODE path."""
    opts = opts if opts is not None else SolverOptions()
    if opts.saveat is not None and not opts.save_dense:
        raise ConfigError("saveat output requires save_dense")
    t0, t1 = float(problem.tspan[0]), float(problem.tspan[1])
    if t1 < t0:
        raise ConfigError("delay problems integrate forward only")
    min_lag = min(problem.constant_lags)
    if opts.fixed_dt is not None and opts.fixed_dt > min_lag:
        raise ConfigError("fixed_dt must not exceed the smallest lag")
    p = problem.params

    h0 = problem.history(p, t0)
    if not np.all(np.isfinite(value(h0))):
        raise ConfigError("history must be finite at t_start")

    dense = DenseOutput("rk45", 1.0)
    stats = SolveStats()
    ts = [t0]
    us = [problem.u0]

    def h(p_, s):
        sv = float(value(s))
        if sv <= t0:
            return problem.history(p_, s)
        if len(dense) == 0:
            raise HistoryQueryAhead(f"history asked at t={sv} before any completed step")
        top = dense.lefts[-1] + float(value(dense.dts[-1]))
        if sv <= top:
            return dense.eval(sv)
        if sv <= top + 1e-9 * max(1.0, abs(top)):
            return dense.eval(top)
        raise HistoryQueryAhead(
            f"history asked at t={sv}, completed only to t={top}; "
            "rhs must query at or before t - min(lags)"
        )

    def seg_rhs(u, p_, t):
        return problem.rhs(u, h, p_, t)

    boundaries = [t0] + _forced_nodes(t0, t1, problem.constant_lags) + [t1]
    seg_opts = replace(
        opts,
        saveat=None,
        save_dense=True,
        dt_max=min_lag if opts.dt_max is None else min(min_lag, opts.dt_max),
    )

    retcode = Retcode.SUCCESS
    u_cur = problem.u0
    for a, b in zip(boundaries[:-1], boundaries[1:]):
        if a == b:
            continue
        sub = OdeProblem(rhs=seg_rhs, u0=u_cur, tspan=(a, b), params=p)
        seg = solve_erk45(sub, seg_opts, dense_sink=dense)
        stats.n_accepted += seg.stats.n_accepted
        stats.n_rejected += seg.stats.n_rejected
        stats.n_rhs_evals += seg.stats.n_rhs_evals
        ts.extend(seg.t[1:])
        us.extend(seg.u[1:])
        u_cur = seg.u[-1]
        if seg.retcode is not Retcode.SUCCESS:
            retcode = seg.retcode
            break

    path = SolutionPath(np.asarray(ts), us, dense if opts.save_dense else None,
                        retcode, stats)
    if opts.saveat is None or retcode is not Retcode.SUCCESS:
        return path
    grid = opts.resolve_saveat(t0, t1)
    saved = [path.interpolate(tq) for tq in grid]
    return SolutionPath(grid, saved, path.dense, retcode, stats)
