"""Problem definitions and the adaptive explicit Runge-Kutta 5(4) solver.

The advancing method is the Dormand-Prince 5(4) pair: seven stages, FSAL,
with the classic free 4th-order continuous extension. Coefficients follow
Dormand & Prince (1980), J. Comput. Appl. Math. 6(1), as tabulated in
Hairer, Norsett & Wanner, "Solving Ordinary Differential Equations I"
(2nd ed., Springer, 1993), whose DOPRI5 code also supplies the dense-output
weights and the automatic initial-step heuristic used here.

Everything in the stepping path is generic over the scalar type: states may
be plain float64 arrays or :class:`~neurodiff.autodiff.Dual` values, and the
step-size control always reads the value part only, so a dual solve takes
exactly the same steps as the float solve it shadows.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .autodiff import Dual, isdual, value
from .errors import ConfigError, DimensionMismatch, OutOfRange

# ----------------------------------------------------------------------
# Dormand-Prince 5(4) tableau

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])

_A = np.zeros((7, 7))
_A[1, 0] = 1 / 5
_A[2, :2] = [3 / 40, 9 / 40]
_A[3, :3] = [44 / 45, -56 / 15, 32 / 9]
_A[4, :4] = [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]
_A[5, :5] = [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]
_A[6, :6] = [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]

# order-5 weights are row 7 of A (the FSAL property); the embedded order-4
# weights enter only through the error coefficients E = b5 - b4
_E = _A[6].copy()
_E[6] = 0.0
_E -= np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)

# dense-output weights (Hairer's CONTD5)
_D = np.array(
    [
        -12715105075 / 11282082432,
        0.0,
        87487479700 / 32700410799,
        -10690763975 / 1880347072,
        701980252875 / 199316789632,
        -1453857185 / 822651844,
        69997945 / 29380423,
    ]
)

ORDER = 5


class Retcode(enum.Enum):
    SUCCESS = "Success"
    MAX_STEPS_EXCEEDED = "MaxStepsExceeded"
    DT_UNDERFLOW = "DtUnderflow"
    NAN_DETECTED = "NanDetected"
    SINGULAR_LINEAR_SOLVE = "SingularLinearSolve"


@dataclass
class SolveStats:
    n_accepted: int = 0
    n_rejected: int = 0
    n_rhs_evals: int = 0


@dataclass
class OdeProblem:
    """An initial value problem u' = rhs(u, p, t).

    Exactly one of ``u0``/``u0_of`` and one of ``tspan``/``tspan_of`` must be
    given; the ``_of`` variants make the initial state or the time span a
    function of the parameter vector. ``rhs_p_vjp``, when provided, is an
    analytic (u, p, t, lam) -> (df/dp)^T lam product used by the adjoint
    backend in place of dual sweeps.
    """

    rhs: Callable
    u0: Optional[Sequence] = None
    u0_of: Optional[Callable] = None
    tspan: Optional[tuple] = None
    tspan_of: Optional[Callable] = None
    params: Sequence = field(default_factory=lambda: np.zeros(0))
    rhs_p_vjp: Optional[Callable] = None

    def __post_init__(self):
        if (self.u0 is None) == (self.u0_of is None):
            raise ConfigError("exactly one of u0 / u0_of must be set")
        if (self.tspan is None) == (self.tspan_of is None):
            raise ConfigError("exactly one of tspan / tspan_of must be set")
        if self.u0 is not None and not isdual(self.u0):
            self.u0 = np.atleast_1d(np.asarray(self.u0, dtype=np.float64))
        if not isdual(self.params):
            self.params = np.asarray(self.params, dtype=np.float64)

    def resolve(self, params=None):
        """Initial state and span for a parameter vector: (u0, t0, t1)."""
        p = self.params if params is None else params
        t0, t1 = self.tspan if self.tspan is not None else self.tspan_of(p)
        u0 = self.u0 if self.u0 is not None else self.u0_of(p, t0)
        return u0, t0, t1

    def with_params(self, params) -> "OdeProblem":
        return OdeProblem(
            rhs=self.rhs,
            u0=self.u0,
            u0_of=self.u0_of,
            tspan=self.tspan,
            tspan_of=self.tspan_of,
            params=params,
            rhs_p_vjp=self.rhs_p_vjp,
        )


@dataclass
class SolverOptions:
    """Tolerances and stepping controls shared by every solver."""

    reltol: float = 1e-3
    abstol: float = 1e-6
    saveat: Union[None, float, Sequence] = None
    dt_init: Optional[float] = None
    dt_min: float = 0.0
    dt_max: Optional[float] = None
    max_steps: int = 1_000_000
    beta1: float = 0.7 / 5
    beta2: float = -0.4 / 5
    safety: float = 0.9
    factor_min: float = 0.2
    factor_max: float = 10.0
    fixed_dt: Optional[float] = None
    save_dense: bool = True
    jac_mode: str = "forward-AD"  # or "finite-difference" (stiff solver only)

    def __post_init__(self):
        if self.reltol <= 0 or self.abstol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.max_steps < 1:
            raise ConfigError("max_steps must be >= 1")
        if self.dt_max is not None and self.dt_max <= 0:
            raise ConfigError("dt_max must be positive")
        if self.jac_mode not in ("forward-AD", "finite-difference"):
            raise ConfigError(f"unknown jac_mode {self.jac_mode!r}")

    def resolve_saveat(self, t0: float, t1: float):
        """Concrete save grid for a span, or None for natural steps."""
        if self.saveat is None:
            return None
        if np.isscalar(self.saveat):
            step = float(self.saveat)
            if step <= 0:
                raise ConfigError("saveat step must be positive")
            span = t1 - t0
            n = round(abs(span) / step)
            if n < 1 or abs(abs(span) - n * step) > 1e-8 * max(abs(span), 1.0):
                raise ConfigError(f"saveat step {step} does not divide span {span}")
            return np.linspace(t0, t1, n + 1)
        grid = np.asarray(self.saveat, dtype=np.float64)
        if grid.size == 0:
            raise ConfigError("saveat list must be non-empty")
        lo, hi = min(t0, t1), max(t0, t1)
        if grid.min() < lo - 1e-12 or grid.max() > hi + 1e-12:
            raise ConfigError("saveat times must lie within tspan")
        return grid


# ----------------------------------------------------------------------
# dense output


class DenseOutput:
    """Per-interval interpolation coefficients over the accepted steps.

    ``kind`` selects the evaluation rule: "rk45" holds the five Dormand-
    Prince continuous-extension vectors, "hermite" a cubic from endpoint
    values and slopes, "linear" just the endpoints. Intervals may carry Dual
    coefficients (a dual solve keeps its derivative information here).
    """

    def __init__(self, kind: str, direction: float):
        self.kind = kind
        self.direction = direction
        self.lefts: list = []  # interval start times (floats)
        self.dts: list = []  # signed widths, possibly Dual on the final step
        self.coeffs: list = []
        self._lefts_arr = None

    def append(self, t_left: float, dt, coeff):
        self.lefts.append(t_left)
        self.dts.append(dt)
        self.coeffs.append(coeff)
        self._lefts_arr = None

    def __len__(self):
        return len(self.lefts)

    def _locate(self, t: float) -> int:
        if self._lefts_arr is None:
            self._lefts_arr = np.asarray(self.lefts) * self.direction
        lefts = self._lefts_arr
        td = t * self.direction
        end = self.lefts[-1] * self.direction + abs(value(self.dts[-1]))
        if td < lefts[0] - 1e-12 or td > end + max(1e-12, 1e-12 * abs(end)):
            raise OutOfRange(f"t={t} outside covered interval")
        return int(np.clip(np.searchsorted(lefts, td, side="right") - 1, 0, len(lefts) - 1))

    def eval(self, t: float):
        i = self._locate(t)
        dt = self.dts[i]
        th = (t - self.lefts[i]) / dt
        c = self.coeffs[i]
        if self.kind == "rk45":
            r1, r2, r3, r4, r5 = c
            return r1 + th * (r2 + (1.0 - th) * (r3 + th * (r4 + (1.0 - th) * r5)))
        if self.kind == "hermite":
            y0, y1, f0, f1 = c
            h00 = (1.0 + 2.0 * th) * (1.0 - th) ** 2
            h10 = th * (1.0 - th) ** 2
            h01 = th * th * (3.0 - 2.0 * th)
            h11 = th * th * (th - 1.0)
            return h00 * y0 + h10 * (dt * f0) + h01 * y1 + h11 * (dt * f1)
        if self.kind == "linear":
            y0, y1 = c
            return y0 + th * (y1 - y0)
        raise ValueError(f"unknown dense kind {self.kind!r}")


@dataclass
class SolutionPath:
    """Accepted (or saveat-interpolated) nodes of one solve.

    ``u`` is a list of state vectors, one per time in ``t``; entries are
    float arrays or Duals depending on what flowed through the solve.
    """

    t: np.ndarray
    u: list
    dense: Optional[DenseOutput]
    retcode: Retcode
    stats: SolveStats

    def u_matrix(self) -> np.ndarray:
        """Node states as one (n_nodes, n_state) float array of values."""
        return np.stack([np.asarray(value(ui), dtype=np.float64) for ui in self.u])

    def interpolate(self, t: float):
        sign = -1.0 if len(self.t) > 1 and self.t[-1] < self.t[0] else 1.0
        idx = int(np.searchsorted(sign * self.t, sign * t))
        for k in (idx - 1, idx):
            if 0 <= k < len(self.t) and self.t[k] == t:
                return self.u[k]
        if self.dense is None:
            raise OutOfRange("no dense output stored and t is not a node")
        return self.dense.eval(t)

    def to_csv(self) -> str:
        um = self.u_matrix()
        n = um.shape[1]
        lines = ["t," + ",".join(f"u{i + 1}" for i in range(n))]
        for tk, row in zip(self.t, um):
            lines.append(",".join(f"{x:.17g}" for x in np.concatenate([[tk], row])))
        return "\n".join(lines) + "\n"


def interpolate(path: SolutionPath, t: float):
    """State at time ``t``: stored value at nodes, dense output between them."""
    return path.interpolate(t)


# ----------------------------------------------------------------------
# error control


def error_norm(err, u_prev, u_new, abstol: float, reltol: float) -> float:
    """Tolerance-weighted RMS of an error estimate; a step passes at <= 1.

    Non-finite inputs return +inf so the step is rejected.
    """
    err = np.asarray(err, dtype=np.float64)
    with np.errstate(all="ignore"):
        sc = abstol + reltol * np.maximum(np.abs(u_prev), np.abs(u_new))
        q = err / sc
        r = math.sqrt(q @ q / q.size)
    return r if math.isfinite(r) else math.inf


class StepController:
    """PI step-size control: factor = safety * err^(-b1) * err_prev^(-b2).

    The growth factor is clamped to [factor_min, factor_max] and capped at 1
    immediately after a rejection. The default gains come from the options;
    solvers of other orders pass their own.
    """

    def __init__(self, dt: float, opts: SolverOptions, beta1=None, beta2=None,
                 reject_exponent=1.0 / ORDER):
        self.dt_max = math.inf if opts.dt_max is None else opts.dt_max
        self.dt = min(dt, self.dt_max)
        self.err_prev = 1.0
        self.rejected_last = False
        self.beta1 = opts.beta1 if beta1 is None else beta1
        self.beta2 = opts.beta2 if beta2 is None else beta2
        self.reject_exponent = reject_exponent
        self._o = opts

    def after_accept(self, err: float):
        o = self._o
        if err <= 0.0:
            factor = o.factor_max
        else:
            factor = o.safety * err ** (-self.beta1) * self.err_prev ** (-self.beta2)
            factor = min(o.factor_max, max(o.factor_min, factor))
        if self.rejected_last:
            factor = min(factor, 1.0)
        self.dt = min(self.dt * factor, self.dt_max)
        self.err_prev = max(err, 1e-4)
        self.rejected_last = False

    def after_reject(self, err: float):
        o = self._o
        if np.isfinite(err):
            factor = o.safety * err ** (-self.reject_exponent)
        else:
            factor = o.factor_min
        self.dt *= min(1.0, max(o.factor_min, factor))
        self.rejected_last = True


def initial_step(rhs, u0, p, t0, f0, direction: float, order: int,
                 reltol: float, abstol: float, dt_max: float = math.inf) -> float:
    """Automatic starting step (Hairer's HINIT): two trial evaluations.

    The trial itself respects ``dt_max``; the delay solver relies on that so
    the probe never asks for history past the completed horizon.
    """
    u0v = np.asarray(value(u0), dtype=np.float64)
    f0v = np.asarray(value(f0), dtype=np.float64)
    t0v = float(value(t0))
    sc = abstol + reltol * np.abs(u0v)
    d0 = float(np.sqrt(np.mean((u0v / sc) ** 2)))
    d1 = float(np.sqrt(np.mean((f0v / sc) ** 2)))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, dt_max)
    u1 = u0v + h0 * direction * f0v
    f1 = np.asarray(value(rhs(u1, p, t0v + h0 * direction)), dtype=np.float64)
    with np.errstate(all="ignore"):
        d2 = float(np.sqrt(np.mean(((f1 - f0v) / sc) ** 2))) / h0
    if not np.isfinite(d2):
        return min(max(1e-6, h0 * 1e-3), dt_max)
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100.0 * h0, h1, dt_max)


# ----------------------------------------------------------------------
# stage storage: float and dual variants share the value-side expressions,
# so zero-partial dual solves are bit-identical to float solves


class _FloatStages:
    def __init__(self, n, nstages):
        self.k = np.empty((nstages, n))

    def set(self, i, ki):
        self.k[i] = ki

    def comb(self, w, m):
        # sum_{j<m} w_j k_j
        return w[:m] @ self.k[:m]


class _DualStages:
    def __init__(self, n, nstages, width):
        self.kv = np.empty((nstages, n))
        self.ke = np.empty((nstages, n, width))
        self.width = width

    def set(self, i, ki):
        if isdual(ki):
            self.kv[i] = ki.val
            self.ke[i] = ki.eps
        else:
            self.kv[i] = ki
            self.ke[i] = 0.0

    def comb(self, w, m):
        return Dual(w[:m] @ self.kv[:m], np.tensordot(w[:m], self.ke[:m], axes=1))


def _finite(x) -> bool:
    return bool(np.all(np.isfinite(value(x))))


def solve_erk45(problem: OdeProblem, opts: Optional[SolverOptions] = None,
                dense_sink: Optional[DenseOutput] = None) -> SolutionPath:
    """Adaptive Dormand-Prince 5(4) solve with free dense output.

    Steps are chosen by the embedded error estimate under ``error_norm``;
    ``opts.saveat`` output comes from the continuous extension and never
    constrains the step sequence. A span with t_end < t_start integrates
    backward. Failures are reported through ``SolutionPath.retcode``.

    ``dense_sink`` lets a caller supply the interpolant store; the delay
    solver passes one shared store so history queries can read intervals
    while this solve is still appending to it.
    """
    opts = opts if opts is not None else SolverOptions()
    if opts.saveat is not None and not opts.save_dense:
        raise ConfigError("saveat output requires save_dense")
    u0, t0, t1 = problem.resolve()
    p = problem.params
    rhs = problem.rhs
    n = len(value(u0))
    stats = SolveStats()

    t0v, t1v = float(value(t0)), float(value(t1))
    direction = 1.0 if t1v >= t0v else -1.0
    eps = np.finfo(float).eps

    k1 = rhs(u0, p, t0)
    stats.n_rhs_evals += 1
    if len(value(k1)) != n:
        raise DimensionMismatch(f"rhs returned length {len(value(k1))}, state has {n}")

    if dense_sink is not None:
        dense = dense_sink
    else:
        dense = DenseOutput("rk45", direction) if opts.save_dense else None
    ts = [t0v]
    us = [u0]

    if not _finite(k1) or not _finite(u0):
        return _finish(problem, opts, ts, us, dense, Retcode.NAN_DETECTED, stats, t0v, t1v)

    fixed = opts.fixed_dt is not None
    if fixed:
        dt0 = abs(opts.fixed_dt)
    elif opts.dt_init is not None:
        dt0 = abs(opts.dt_init)
    else:
        dt0 = initial_step(rhs, u0, p, t0, k1, direction, ORDER, opts.reltol,
                           opts.abstol, dt_max=opts.dt_max if opts.dt_max is not None else float("inf"))
        stats.n_rhs_evals += 1
    ctrl = StepController(dt0, opts)

    # tspan_of can make the final step width a Dual even when states start
    # plain, so the dual engine must also cover that case
    seeds = [x for x in (u0, k1, t0, t1) if isdual(x)]
    stages = _DualStages(n, 7, seeds[0].width) if seeds else _FloatStages(n, 7)

    t = t0
    u = u0
    retcode = None
    span = abs(t1v - t0v)
    if span == 0.0:
        return _finish(problem, opts, ts, us, dense, Retcode.SUCCESS, stats, t0v, t1v)

    attempts = 0
    nonfinite_last = False
    while True:
        tv = float(value(t))
        if (tv - t1v) * direction >= 0.0:
            retcode = Retcode.SUCCESS
            break
        if attempts >= opts.max_steps:
            retcode = Retcode.MAX_STEPS_EXCEEDED
            break
        # the floor follows the current time: a step of 1e-7 is fine near
        # t = 0 even when the span ends at 1e11
        if not fixed and ctrl.dt < max(opts.dt_min, 16.0 * eps * abs(tv)):
            retcode = Retcode.NAN_DETECTED if nonfinite_last else Retcode.DT_UNDERFLOW
            break
        attempts += 1

        # land exactly on t_end; when tspan is parameter-dependent the final
        # width t1 - t is a Dual and carries the endpoint sensitivity. The
        # stretch to absorb a sliver must never push a step past dt_max.
        dt = ctrl.dt * direction
        last = (tv + min(1.0001 * ctrl.dt, ctrl.dt_max) * direction - t1v) * direction >= 0.0
        if last:
            dt = t1 - t

        stages.set(0, k1)
        knew = None
        for i in range(1, 7):
            ui = u + dt * stages.comb(_A[i], i)
            knew = rhs(ui, p, t + _C[i] * dt)
            stages.set(i, knew)
        stats.n_rhs_evals += 6
        u_new = ui  # stage 7 state is the order-5 solution (FSAL)
        err_vec = value(dt) * stages.comb(_E, 7)

        if fixed:
            err = 0.0
            accept = True
        else:
            err = error_norm(value(err_vec), value(u), value(u_new), opts.abstol, opts.reltol)
            accept = err <= 1.0
        nonfinite_last = not np.isfinite(err) or not _finite(u_new)
        if nonfinite_last:
            accept = False
            if fixed:
                retcode = Retcode.NAN_DETECTED
                break

        if accept:
            if dense is not None:
                ydiff = u_new - u
                bspl = dt * k1 - ydiff
                r5 = dt * stages.comb(_D, 7)
                dense.append(tv, dt, (u, ydiff, bspl, ydiff - dt * knew - bspl, r5))
            t = t1 if last else t + dt
            u = u_new
            k1 = knew
            ts.append(float(value(t)))
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

    return _finish(problem, opts, ts, us, dense, retcode, stats, t0v, t1v)


def _finish(problem, opts, ts, us, dense, retcode, stats, t0v, t1v) -> SolutionPath:
    path = SolutionPath(np.asarray(ts), us, dense, retcode, stats)
    if opts.saveat is None or retcode is not Retcode.SUCCESS:
        return path
    grid = opts.resolve_saveat(t0v, t1v)
    saved = [path.interpolate(tq) for tq in grid]
    return SolutionPath(grid, saved, dense, retcode, stats)


def solve_euler_fixed(problem: OdeProblem, dt: float) -> SolutionPath:
    """Fixed-step explicit Euler at uniform nodes (the ResNet recursion).

    The step count is round(span/dt); the step actually used is span/n so
    the final node lands exactly on t_end.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    u, t0, t1 = problem.resolve()
    p = problem.params
    t0v, t1v = float(value(t0)), float(value(t1))
    span = t1v - t0v
    if not np.isfinite(span / dt):
        raise ConfigError("span/dt must be finite")
    n_steps = max(1, round(abs(span) / dt))
    h = span / n_steps

    stats = SolveStats()
    dense = DenseOutput("linear", 1.0 if span >= 0 else -1.0)
    ts = [t0v]
    us = [u]
    retcode = Retcode.SUCCESS
    for k in range(n_steps):
        tk = t0v + k * h
        f = problem.rhs(u, p, tk)
        stats.n_rhs_evals += 1
        u_next = u + h * f
        if not _finite(u_next):
            retcode = Retcode.NAN_DETECTED
            break
        dense.append(tk, h, (u, u_next))
        u = u_next
        ts.append(t0v + (k + 1) * h)
        us.append(u)
        stats.n_accepted += 1
    return SolutionPath(np.asarray(ts), us, dense, retcode, stats)
