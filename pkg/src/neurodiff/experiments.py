"""Experiment runners: each solves or trains a named system, checks its
embedded assertions, and returns CSV artifacts plus a JSON-ready summary.

Runners never touch the filesystem; the CLI (or any other caller) decides
where artifacts land. Re-running with the same config and seed reproduces
every artifact byte for byte except wall-time columns.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .autodiff import value
from .core_ode import (OdeProblem, Retcode, SolverOptions, solve_erk45,
                       solve_euler_fixed)
from .dde import solve_dde_mos
from .errors import ConfigError
from .nn import init_params
from .sde import NoiseConfig, mc_summary_csv, monte_carlo_mean, solve_euler_maruyama
from .sensitivity import (FORWARD, GradientRequest, LossSpec, backsolve_roundtrip,
                          bench_csv, canonical_backend, evaluate_gradient,
                          gradient_crossover_bench, loss_value)
from .stiff_ode import detect_explicit_failure, solve_rosenbrock
from .systems import (LOTKA_FIT_P0, cubic_spiral_problem, delay_lotka_problem,
                      exp_growth_problem, gbm_problem, lorenz_problem,
                      lotka_problem, neural_spiral_chain, neural_spiral_problem,
                      noisy_lotka_problem, rober_problem)
from .train import train_loop

# regression pins for the default Lotka solve (saveat grid nodes 0.1 and 10.0)
LOTKA_U_AT_0P1 = np.array([1.06108, 0.821084])
LOTKA_U_AT_10 = np.array([1.03376, 0.906371])
DELAY_LOTKA_LOSS = 72.94371657453573
GBM_TARGET_MEAN = math.exp(0.05)
BENCH_SIZES = (4, 16, 64, 256, 512)


@dataclass
class ExperimentConfig:
    reltol: float = 1e-6
    abstol: float = 1e-9
    seed: int = 0
    iters: int = 100
    backend: str = "forward"

    def __post_init__(self):
        self.backend = canonical_backend(self.backend)
        if self.reltol <= 0 or self.abstol <= 0:
            raise ConfigError("tolerances must be positive")

    def solver_options(self, **overrides) -> SolverOptions:
        base = dict(reltol=self.reltol, abstol=self.abstol)
        base.update(overrides)
        return SolverOptions(**base)


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str


@dataclass
class ExperimentResult:
    experiment: str
    assertions: List[Assertion] = field(default_factory=list)
    artifacts: Dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(a.passed for a in self.assertions)

    def check(self, name: str, ok: bool, detail: str):
        self.assertions.append(Assertion(name, bool(ok), detail))

    def summary_json(self) -> str:
        body = {
            "experiment": self.experiment,
            "passed": self.passed,
            "assertions": [
                {"name": a.name, "passed": a.passed, "detail": a.detail}
                for a in self.assertions
            ],
        }
        body.update(self.summary)
        return json.dumps(body, indent=2, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not JSON-serializable: {type(x).__name__}")


def _trajectory_csv(path, labels) -> str:
    lines = ["t," + ",".join(labels)]
    for t, u in zip(path.t, path.u):
        vals = ",".join(f"{float(v):.17g}" for v in np.asarray(value(u)))
        lines.append(f"{float(t):.17g},{vals}")
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------


def run_lotka_solve(cfg: ExperimentConfig) -> ExperimentResult:
    """Plain predator-prey solve on the tenth-of-a-unit grid."""
    res = ExperimentResult("lotka-solve")
    path = solve_erk45(lotka_problem(), cfg.solver_options(saveat=0.1))
    res.check("solver-success", path.retcode is Retcode.SUCCESS, str(path.retcode))
    n = len(path.t)
    res.check("node-count-101", n == 101, f"{n} nodes")
    u_early = np.asarray(value(path.u[1]))
    u_end = np.asarray(value(path.u[-1]))
    d_early = float(np.max(np.abs(u_early - LOTKA_U_AT_0P1)))
    d_end = float(np.max(np.abs(u_end - LOTKA_U_AT_10)))
    res.check("u(0.1)-within-1e-3", d_early < 1e-3, f"max dev {d_early:.2e}")
    res.check("u(10)-within-1e-2", d_end < 1e-2, f"max dev {d_end:.2e}")
    res.artifacts["trajectory.csv"] = _trajectory_csv(path, ["x", "y"])
    res.summary = {
        "n_nodes": n,
        "u_at_0.1": u_early.tolist(),
        "u_at_10": u_end.tolist(),
    }
    return res


def run_lotka_fit(cfg: ExperimentConfig) -> ExperimentResult:
    """Fit the rate constants so the prey population holds at one."""
    res = ExperimentResult("lotka-fit")
    base = lotka_problem(LOTKA_FIT_P0)
    loss = LossSpec.sum_sq_to_one(0.1, component=0)
    opts = cfg.solver_options()

    def lg(p):
        return evaluate_gradient(
            GradientRequest(cfg.backend, base.with_params(p), opts, loss))

    p_star, rec = train_loop(lg, LOTKA_FIT_P0, iters=cfg.iters, lr=0.1)
    ratio = rec.final_loss / rec.initial_loss
    res.check("tenfold-loss-reduction", ratio <= 0.1,
              f"final/initial = {ratio:.3e}")
    res.artifacts["trace.csv"] = rec.to_csv()
    res.summary = {
        "backend": cfg.backend,
        "initial_loss": rec.initial_loss,
        "final_loss": rec.final_loss,
        "p_trained": np.asarray(p_star).tolist(),
    }
    return res


def run_rober(cfg: ExperimentConfig) -> ExperimentResult:
    """Stiffness contrast: explicit probe stalls, Rosenbrock cruises."""
    res = ExperimentResult("rober")
    problem = rober_problem()
    probe = detect_explicit_failure(problem, budget=100_000)
    res.check("explicit-budget-exhausted",
              probe.retcode is Retcode.MAX_STEPS_EXCEEDED,
              str(probe.retcode))
    res.check("explicit-stalls-before-1e4", probe.t_reached < 1.0e4,
              f"t reached {probe.t_reached:.3e}")
    grid = np.concatenate([[0.0], np.logspace(0.0, 11.0, 111)])
    path = solve_rosenbrock(problem, cfg.solver_options(saveat=grid))
    res.check("rosenbrock-success", path.retcode is Retcode.SUCCESS, str(path.retcode))
    mass = max(abs(float(np.sum(np.asarray(value(u)))) - 1.0) for u in path.u)
    res.check("mass-conserved", mass <= 100.0 * cfg.reltol,
              f"max |sum(y)-1| = {mass:.2e}")
    y3_end = float(np.asarray(value(path.u[-1]))[2])
    res.check("terminal-conversion", y3_end > 0.9999, f"y3(t_end) = {y3_end:.6f}")
    res.artifacts["trajectory.csv"] = _trajectory_csv(path, ["y1", "y2", "y3"])
    res.summary = {
        "probe": json.loads(probe.to_json()),
        "max_mass_error": mass,
        "y3_end": y3_end,
    }
    return res


def run_dde_fit(cfg: ExperimentConfig) -> ExperimentResult:
    """Delay predator-prey: pin the starting loss, then train it down."""
    res = ExperimentResult("dde-fit")
    base = delay_lotka_problem()
    loss = LossSpec.sum_sq_to_one(0.1, component=0)
    opts = cfg.solver_options()
    initial = loss_value(base, opts, loss)
    rel = abs(initial - DELAY_LOTKA_LOSS) / DELAY_LOTKA_LOSS
    res.check("initial-loss-pin", rel < 0.05,
              f"loss {initial:.6f}, rel dev {rel:.2e}")

    def lg(p):
        return evaluate_gradient(
            GradientRequest(FORWARD, base.with_params(p), opts, loss))

    p_star, rec = train_loop(lg, np.asarray(base.params), iters=cfg.iters, lr=0.1)
    ratio = rec.final_loss / rec.initial_loss
    res.check("fivefold-loss-reduction", ratio <= 0.2,
              f"final/initial = {ratio:.3e}")
    res.artifacts["trace.csv"] = rec.to_csv()
    res.summary = {
        "initial_loss": rec.initial_loss,
        "final_loss": rec.final_loss,
        "p_trained": np.asarray(p_star).tolist(),
    }
    return res


def run_sde_demo(cfg: ExperimentConfig) -> ExperimentResult:
    """Noisy trajectories, the Monte-Carlo mean check, and the zero-noise
    equivalence with fixed-step Euler."""
    res = ExperimentResult("sde-demo")
    dt = 0.01

    quiet = solve_euler_maruyama(noisy_lotka_problem(noise=0.0),
                                 NoiseConfig(seed=cfg.seed, dt=dt))
    fixed = solve_euler_fixed(lotka_problem(), dt=dt)
    same = all(np.array_equal(np.asarray(a), np.asarray(b))
               for a, b in zip(quiet.u, fixed.u))
    res.check("zero-noise-bitwise-euler", same, "state sequences compared bitwise")

    paths = []
    for k in range(3):
        noisy = solve_euler_maruyama(noisy_lotka_problem(noise=0.1),
                                     NoiseConfig(seed=cfg.seed + k, dt=dt))
        res.check(f"noisy-path-{k}-finite", noisy.retcode is Retcode.SUCCESS,
                  str(noisy.retcode))
        paths.append(noisy)
    lines = ["t," + ",".join(f"x_s{k},y_s{k}" for k in range(3))]
    for i, t in enumerate(paths[0].t):
        row = [f"{float(t):.17g}"]
        for pth in paths:
            u = np.asarray(pth.u[i])
            row.extend(f"{float(v):.17g}" for v in u)
        lines.append(",".join(row))
    res.artifacts["paths.csv"] = "\n".join(lines) + "\n"

    mean, stderr = monte_carlo_mean(gbm_problem(), noise_dt=1e-3,
                                    n_paths=10_000, base_seed=cfg.seed)
    dev = abs(float(mean[0]) - GBM_TARGET_MEAN)
    res.check("gbm-mean-within-3-stderr", dev <= 3.0 * float(stderr[0]),
              f"|mean - e^0.05| = {dev:.2e}, stderr = {float(stderr[0]):.2e}")
    res.artifacts["mc_summary.csv"] = mc_summary_csv(
        mean, stderr, 10_000, 1e-3, cfg.seed)
    res.summary = {
        "gbm_mean": float(mean[0]),
        "gbm_stderr": float(stderr[0]),
        "gbm_target": GBM_TARGET_MEAN,
    }
    return res


def run_neural_ode_fit(cfg: ExperimentConfig) -> ExperimentResult:
    """Train the cube-input two-layer network to mimic the cubic spiral."""
    res = ExperimentResult("neural-ode-fit")
    truth = cubic_spiral_problem()
    grid = np.linspace(0.0, 1.5, 30)
    data_opts = SolverOptions(reltol=1e-7, abstol=1e-9, saveat=grid)
    data_path = solve_erk45(truth, data_opts)
    data = np.array([np.asarray(value(u)) for u in data_path.u])
    tight_path = solve_erk45(truth, SolverOptions(reltol=1e-8, abstol=1e-10,
                                                  saveat=grid))
    gap = float(np.max(np.abs(data[-1] - np.asarray(value(tight_path.u[-1])))))
    res.check("data-self-convergence", gap < 1e-6, f"endpoint gap {gap:.2e}")

    chain = neural_spiral_chain()
    p0 = init_params(chain, cfg.seed).data
    res.check("param-count-252", p0.size == 252, f"{p0.size} parameters")
    base = neural_spiral_problem(chain, p0)
    loss = LossSpec.sum_sq_to_data(grid, data)
    opts = cfg.solver_options()

    def lg(p):
        return evaluate_gradient(
            GradientRequest(FORWARD, base.with_params(p), opts, loss, chunk=64))

    p_star, rec = train_loop(lg, p0, iters=cfg.iters, lr=0.1)
    ratio = rec.final_loss / rec.initial_loss
    res.check("tenfold-loss-reduction", ratio <= 0.1,
              f"final/initial = {ratio:.3e}")

    fit_path = solve_erk45(base.with_params(p_star),
                           cfg.solver_options(saveat=grid))
    lines = ["t,data_x,data_y,pred_x,pred_y"]
    for t, d, u in zip(grid, data, fit_path.u):
        pu = np.asarray(value(u))
        lines.append(f"{t:.17g},{d[0]:.17g},{d[1]:.17g},{pu[0]:.17g},{pu[1]:.17g}")
    res.artifacts["prediction.csv"] = "\n".join(lines) + "\n"
    res.artifacts["trace.csv"] = rec.to_csv()
    res.summary = {
        "initial_loss": rec.initial_loss,
        "final_loss": rec.final_loss,
        "seed": cfg.seed,
    }
    return res


def run_reversal(cfg: ExperimentConfig) -> ExperimentResult:
    """Forward-then-backward roundtrips: chaotic failure vs smooth control."""
    res = ExperimentResult("reversal")
    lorenz_opts = SolverOptions(reltol=1e-12, abstol=1e-12, max_steps=150_000)
    chaotic = backsolve_roundtrip(lorenz_problem(), lorenz_opts)
    res.check("chaotic-roundtrip-fails",
              chaotic["rel_error_pct"] > 100.0,
              f"rel error {chaotic['rel_error_pct']:.3e} %")
    control = backsolve_roundtrip(exp_growth_problem(),
                                  SolverOptions(reltol=1e-10, abstol=1e-12))
    res.check("smooth-roundtrip-accurate",
              control["rel_error_pct"] < 1e-4,
              f"rel error {control['rel_error_pct']:.3e} %")
    lines = ["case,abs_error,rel_error_pct,back_retcode,t_back_reached"]
    for label, rep in (("lorenz", chaotic), ("exponential", control)):
        lines.append(f"{label},{rep['abs_error']:.17g},{rep['rel_error_pct']:.17g},"
                     f"{rep['back_retcode']},{rep['t_back_reached']:.17g}")
    res.artifacts["roundtrip.csv"] = "\n".join(lines) + "\n"
    res.summary = {
        "lorenz": {k: _round_trippable(v) for k, v in chaotic.items()},
        "exponential": {k: _round_trippable(v) for k, v in control.items()},
    }
    return res


def _round_trippable(v):
    return v.tolist() if isinstance(v, np.ndarray) else v


def run_gradient_bench(cfg: ExperimentConfig) -> ExperimentResult:
    """Forward vs adjoint gradient timing across parameter counts."""
    res = ExperimentResult("gradient-bench")
    rows = gradient_crossover_bench(list(BENCH_SIZES), repeats=5, seed=cfg.seed)
    med = {(m, backend): sec for m, backend, sec in rows}
    ratio_16 = med[(16, "adjoint")] / med[(16, "forward")]
    ratio_512 = med[(512, "adjoint")] / med[(512, "forward")]
    res.check("crossover-trend", ratio_512 < ratio_16,
              f"adjoint/forward ratio {ratio_16:.3f} at 16 params, "
              f"{ratio_512:.3f} at 512")
    res.artifacts["bench.csv"] = bench_csv(rows)
    res.summary = {
        "ratio_at_16": ratio_16,
        "ratio_at_512": ratio_512,
    }
    return res


EXPERIMENTS: Dict[str, Callable] = {
    "lotka-solve": run_lotka_solve,
    "lotka-fit": run_lotka_fit,
    "rober": run_rober,
    "dde-fit": run_dde_fit,
    "sde-demo": run_sde_demo,
    "neural-ode-fit": run_neural_ode_fit,
    "reversal": run_reversal,
    "gradient-bench": run_gradient_bench,
}


def run_experiment(experiment_id: str, cfg: Optional[ExperimentConfig] = None) -> ExperimentResult:
    if experiment_id not in EXPERIMENTS:
        known = ", ".join(sorted(EXPERIMENTS))
        raise ConfigError(f"unknown experiment {experiment_id!r}; known: {known}")
    return EXPERIMENTS[experiment_id](cfg if cfg is not None else ExperimentConfig())
