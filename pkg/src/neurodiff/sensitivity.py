"""Loss gradients through the solvers: forward duals, continuous adjoint,
and finite differences behind one request type.

The three backends are interchangeable one-field swaps. Forward mode seeds
the parameter vector with unit duals in chunks and reads the loss partials
directly. The adjoint backend solves the costate equation backward against
the stored forward interpolant (never by re-solving the dynamics backward;
see backsolve_roundtrip for the demonstration of why that fails). Finite
differences exist as the slow oracle the other two are judged against.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .autodiff import DEFAULT_CHUNK, Dual, grad, jacobian, partials, value
from .core_ode import OdeProblem, Retcode, SolverOptions, solve_erk45
from .dde import DdeProblem, solve_dde_mos
from .errors import AdjointUnsupported, ConfigError, SolveFailure

FORWARD = "forward"
ADJOINT = "adjoint"
FINITE_DIFF = "finite-diff"
BACKENDS = (FORWARD, ADJOINT, FINITE_DIFF)

_ALIASES = {"fd": FINITE_DIFF, "finitediff": FINITE_DIFF, "finite_diff": FINITE_DIFF}


def canonical_backend(name: str) -> str:
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    if key not in BACKENDS:
        raise ConfigError(f"unknown backend {name!r}; choose from {BACKENDS}")
    return key


@dataclass
class LossSpec:
    """Sum over saveat nodes of a per-node residual.

    Kinds: "sum_sq_to_one" penalizes (u[component] - 1)^2 per node;
    "sum_sq_to_data" penalizes the squared distance to a data row per node;
    "terminal_value" reads out u[component] at the end time (saveat None).
    """

    kind: str
    saveat: Union[None, float, Sequence] = None
    component: int = 0
    data: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("sum_sq_to_one", "sum_sq_to_data", "terminal_value"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        if self.data is not None:
            self.data = np.asarray(self.data, dtype=np.float64)
        if self.kind == "sum_sq_to_data" and self.data is None:
            raise ConfigError("sum_sq_to_data needs a data matrix")

    @classmethod
    def sum_sq_to_one(cls, saveat, component: int = 0) -> "LossSpec":
        return cls("sum_sq_to_one", saveat=saveat, component=component)

    @classmethod
    def sum_sq_to_data(cls, saveat, data) -> "LossSpec":
        return cls("sum_sq_to_data", saveat=saveat, data=data)

    @classmethod
    def terminal_value(cls, component: int = 0) -> "LossSpec":
        return cls("terminal_value", component=component)

    def resolve_grid(self, t0: float, t1: float) -> np.ndarray:
        if self.saveat is None:
            grid = np.array([t1])
        elif np.isscalar(self.saveat):
            grid = SolverOptions(saveat=self.saveat).resolve_saveat(t0, t1)
        else:
            grid = np.asarray(self.saveat, dtype=np.float64)
            if grid.size:
                lo, hi = min(t0, t1), max(t0, t1)
                if grid.min() < lo - 1e-12 or grid.max() > hi + 1e-12:
                    raise ConfigError("loss saveat times must lie within tspan")
        if self.kind == "sum_sq_to_data" and len(self.data) != len(grid):
            raise ConfigError(
                f"data has {len(self.data)} rows for {len(grid)} loss nodes"
            )
        return grid

    def residual(self, u, k: int):
        if self.kind == "sum_sq_to_one":
            d = u[self.component] - 1.0
            return d * d
        if self.kind == "sum_sq_to_data":
            d = u - self.data[k]
            return (d * d).sum()
        return u[self.component]

    def dresidual_du(self, u_val: np.ndarray, k: int) -> np.ndarray:
        g = np.zeros_like(u_val)
        if self.kind == "sum_sq_to_one":
            g[self.component] = 2.0 * (u_val[self.component] - 1.0)
        elif self.kind == "sum_sq_to_data":
            g[:] = 2.0 * (u_val - self.data[k])
        else:
            g[self.component] = 1.0
        return g

    def loss_of(self, us) -> object:
        total = 0.0
        for k, u in enumerate(us):
            total = total + self.residual(u, k)
        return total


@dataclass
class GradientRequest:
    """One gradient evaluation; switching ``backend`` changes nothing else."""

    backend: str
    problem: object
    opts: SolverOptions
    loss: LossSpec
    chunk: Optional[int] = None

    def __post_init__(self):
        self.backend = canonical_backend(self.backend)


@dataclass
class AdjointState:
    """Costate and parameter-gradient accumulator of the backward pass."""

    lam: np.ndarray
    mu: np.ndarray


def _params_of(problem) -> np.ndarray:
    p = getattr(problem, "params", None)
    if p is None:
        return np.zeros(0)
    return np.asarray(value(p), dtype=np.float64)


def _span_of(problem, p):
    if isinstance(problem, DdeProblem):
        return float(problem.tspan[0]), float(problem.tspan[1])
    _, t0, t1 = problem.resolve(p)
    return float(value(t0)), float(value(t1))


def _terminal_only(loss: LossSpec) -> bool:
    return loss.kind == "terminal_value" and loss.saveat is None


def _solve_nodes(problem, opts, grid):
    """States at the loss grid nodes, dual-capable; raises on solver failure.

    ``grid=None`` means terminal state only. That path solves without a save
    grid and reads the last node, so a parameter-dependent end time keeps its
    sensitivity (the final step width is then itself a dual number).
    """
    if grid is None:
        node_opts = replace(opts, saveat=None, save_dense=False)
    else:
        node_opts = replace(opts, saveat=grid, save_dense=True)
    if isinstance(problem, DdeProblem):
        path = solve_dde_mos(problem, node_opts)
    elif isinstance(problem, OdeProblem):
        path = solve_erk45(problem, node_opts)
    else:
        raise ConfigError(f"gradients support ODE and DDE problems, not {type(problem).__name__}")
    if path.retcode is not Retcode.SUCCESS:
        raise SolveFailure(path)
    return [path.u[-1]] if grid is None else path.u


def loss_value(problem, opts: SolverOptions, loss: LossSpec, params=None) -> float:
    """Loss at the given (or stored) parameters via a plain value solve."""
    prob = problem if params is None else problem.with_params(params)
    if _terminal_only(loss):
        us = _solve_nodes(prob, opts, None)
        return float(value(loss.loss_of(us)))
    t0, t1 = _span_of(prob, _params_of(prob))
    grid = loss.resolve_grid(t0, t1)
    if grid.size == 0:
        return 0.0
    us = _solve_nodes(prob, opts, grid)
    return float(value(loss.loss_of(us)))


def _forward_value_and_grad(req: GradientRequest):
    problem, loss = req.problem, req.loss
    p = _params_of(problem)
    m = p.size
    if _terminal_only(loss):
        grid = None
    else:
        t0, t1 = _span_of(problem, p)
        grid = loss.resolve_grid(t0, t1)
        if grid.size == 0:
            return 0.0, np.zeros(m)
    if m == 0:
        return loss_value(problem, req.opts, loss), np.zeros(0)
    chunk = req.chunk if req.chunk is not None else DEFAULT_CHUNK
    g = np.empty(m)
    val = 0.0
    eye = np.eye(m)
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        seeded = Dual(p, eye[:, lo:hi])
        us = _solve_nodes(problem.with_params(seeded), req.opts, grid)
        total = loss.loss_of(us)
        val = float(value(total))
        g[lo:hi] = partials(total, hi - lo)
    return val, g


def grad_forward(req: GradientRequest) -> np.ndarray:
    """dLoss/dp by seeding the parameter vector with unit duals, chunked."""
    return _forward_value_and_grad(req)[1]


def grad_fd(req: GradientRequest) -> np.ndarray:
    """Central finite differences, step 1e-6 * max(1, |p_i|); two solves per entry."""
    problem, opts, loss = req.problem, req.opts, req.loss
    p = _params_of(problem)
    g = np.empty(p.size)
    for i in range(p.size):
        h = 1e-6 * max(1.0, abs(p[i]))
        pp, pm = p.copy(), p.copy()
        pp[i] += h
        pm[i] -= h
        g[i] = (loss_value(problem, opts, loss, pp) - loss_value(problem, opts, loss, pm)) / (2.0 * h)
    return g


def _rhs_p_pullback(problem, p, chunk):
    """lam -> (df/dp)^T lam at (u, t), analytic when the problem supplies one."""
    if getattr(problem, "rhs_p_vjp", None) is not None:
        return lambda u, t, lam: np.asarray(problem.rhs_p_vjp(u, p, t, lam), dtype=np.float64)

    def pullback(u, t, lam):
        return grad(lambda pv: lam @ problem.rhs(u, pv, t), p, chunk=chunk)[1]

    return pullback


def grad_adjoint(req: GradientRequest) -> np.ndarray:
    """Continuous adjoint against the stored forward interpolant.

    Backward from t_end: lam' = -(df/du)^T lam with jumps dr/du at loss
    nodes, mu' = -(df/dp)^T lam accumulated alongside. If u0 is
    parameter-dependent, the boundary term (du0/dp)^T lam(t0) is added.
    """
    problem, opts, loss = req.problem, req.opts, req.loss
    if not isinstance(problem, OdeProblem):
        raise AdjointUnsupported("the adjoint backend handles ODE problems only")
    if problem.tspan_of is not None:
        raise AdjointUnsupported("endpoint gradients need the forward or finite-diff backend")
    chunk = req.chunk if req.chunk is not None else DEFAULT_CHUNK
    p = _params_of(problem)
    m = p.size
    u0, t0, t1 = problem.resolve(p)
    t0, t1 = float(t0), float(t1)
    grid = loss.resolve_grid(t0, t1)
    if grid.size == 0 or m == 0:
        return np.zeros(m)

    fwd_prob = problem.with_params(p)
    path = solve_erk45(fwd_prob, replace(opts, saveat=None, save_dense=True))
    if path.retcode is not Retcode.SUCCESS:
        raise SolveFailure(path)

    n = len(value(u0))
    rhs = problem.rhs
    pullback = _rhs_p_pullback(problem, p, chunk)

    def aug_rhs(z, _, t):
        lam = z[:n]
        ut = np.asarray(value(path.interpolate(float(t))), dtype=np.float64)
        Ju = jacobian(lambda v: rhs(v, p, t), ut, chunk=n)
        dlam = -(Ju.T @ lam)
        dmu = -pullback(ut, float(t), lam)
        return np.concatenate([dlam, dmu])

    seg_opts = replace(opts, saveat=None, save_dense=False)
    state = AdjointState(np.zeros(n), np.zeros(m))
    current = t1
    stops = [float(tq) for tq in sorted(grid, reverse=True)]
    if not stops or stops[-1] != t0:
        stops.append(t0)
    k_of = {float(tq): k for k, tq in enumerate(grid)}
    for t_stop in stops:
        if t_stop < current:
            if state.lam.any() or state.mu.any():
                seg = OdeProblem(
                    rhs=aug_rhs,
                    u0=np.concatenate([state.lam, state.mu]),
                    tspan=(current, t_stop),
                )
                seg_path = solve_erk45(seg, seg_opts)
                if seg_path.retcode is not Retcode.SUCCESS:
                    raise SolveFailure(seg_path)
                z = seg_path.u[-1]
                state = AdjointState(z[:n].copy(), z[n:].copy())
            current = t_stop
        if t_stop in k_of:
            k = k_of[t_stop]
            u_k = np.asarray(value(path.interpolate(t_stop)), dtype=np.float64)
            state.lam = state.lam + loss.dresidual_du(u_k, k)

    g = state.mu
    if problem.u0_of is not None:
        lam0 = state.lam
        g = g + grad(lambda pv: lam0 @ problem.u0_of(pv, t0), p, chunk=chunk)[1]
    return g


def evaluate_gradient(req: GradientRequest):
    """(loss value, gradient) under the requested backend."""
    if req.backend == FORWARD:
        return _forward_value_and_grad(req)
    if req.backend == ADJOINT:
        return loss_value(req.problem, req.opts, req.loss), grad_adjoint(req)
    return loss_value(req.problem, req.opts, req.loss), grad_fd(req)


def gradient_csv(g: np.ndarray) -> str:
    lines = ["p_index,grad"]
    for i, x in enumerate(g):
        lines.append(f"{i + 1},{x:.17g}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------
# reversibility demonstration


def backsolve_roundtrip(problem: OdeProblem, opts: Optional[SolverOptions] = None) -> dict:
    """Forward to t_end, then integrate the same dynamics back to t_start.

    Reports how badly the recovered initial state misses the true one; on
    chaotic systems the error is enormous, which is why the adjoint backend
    reads forward states from the interpolant instead. On such systems the
    reversed integration may not even reach t_start (off-attractor backward
    orbits blow up in finite time); the report then uses the last state the
    backward pass produced and records how far it got.
    """
    opts = opts if opts is not None else SolverOptions()
    run_opts = replace(opts, saveat=None, save_dense=False)
    fwd = solve_erk45(problem, run_opts)
    if fwd.retcode is not Retcode.SUCCESS:
        raise SolveFailure(fwd)
    u0, t0, t1 = problem.resolve()
    u0 = np.asarray(value(u0), dtype=np.float64)
    u_end = np.asarray(value(fwd.u[-1]), dtype=np.float64)
    back_prob = OdeProblem(
        rhs=problem.rhs, u0=u_end,
        tspan=(float(value(t1)), float(value(t0))), params=problem.params,
    )
    back = solve_erk45(back_prob, run_opts)
    u0_rec = np.asarray(value(back.u[-1]), dtype=np.float64)
    abs_error = float(np.linalg.norm(u0_rec - u0))
    rel_error_pct = 100.0 * abs_error / max(float(np.linalg.norm(u0)), 1e-300)
    return {
        "u_end": u_end,
        "u0_recovered": u0_rec,
        "abs_error": abs_error,
        "rel_error_pct": rel_error_pct,
        "back_retcode": back.retcode.value,
        "t_back_reached": float(back.t[-1]),
    }


# ----------------------------------------------------------------------
# forward/adjoint timing crossover


def _bench_family(n_params: int, seed: int = 0):
    """Linear system u' = A(p) u with A affine in p, plus its analytic vjp."""
    n = 4
    rng = np.random.default_rng(seed)
    A0 = -0.5 * np.eye(n) + 0.3 * rng.standard_normal((n, n))
    vecA0 = A0.ravel()
    B = 0.01 * rng.standard_normal((n_params, n * n))

    def rhs(u, p, t):
        A = (vecA0 + p @ B).reshape(n, n)
        return A @ u

    def vjp(u, p, t, lam):
        return B @ np.outer(lam, u).ravel()

    problem = OdeProblem(
        rhs=rhs, u0=np.ones(n), tspan=(0.0, 1.0),
        params=np.zeros(n_params), rhs_p_vjp=vjp,
    )
    return problem


def gradient_crossover_bench(n_params_list: Sequence[int], repeats: int = 5,
                             seed: int = 0) -> list:
    """Median wall time of one gradient per backend and parameter count.

    Rows come back as (n_params, backend, median_seconds); the interesting
    output is the trend of the adjoint/forward ratio as n_params grows.
    """
    if not n_params_list:
        raise ConfigError("n_params_list must be non-empty")
    loss = LossSpec.terminal_value()
    opts = SolverOptions(reltol=1e-6, abstol=1e-9)
    rows = []
    for m in n_params_list:
        problem = _bench_family(int(m), seed)
        for backend, fn in ((FORWARD, grad_forward), (ADJOINT, grad_adjoint)):
            req = GradientRequest(backend=backend, problem=problem, opts=opts, loss=loss)
            times = []
            for _ in range(repeats):
                start = time.perf_counter()
                fn(req)
                times.append(time.perf_counter() - start)
            rows.append((int(m), backend, statistics.median(times)))
    return rows


def bench_csv(rows) -> str:
    lines = ["n_params,backend,median_seconds"]
    for m, backend, sec in rows:
        lines.append(f"{m},{backend},{sec:.17g}")
    return "\n".join(lines) + "\n"
