"""Differentiable ODE/DDE/SDE solvers with interchangeable gradient backends.

The solvers accept dual-number states so forward-mode derivatives flow
through unchanged; `sensitivity` adds adjoint and finite-difference
backends behind one interface, `train` fits parameters with Adam, and
`experiments` packages the reference studies behind the CLI and service.
"""

__version__ = "0.1.0"

from .core_ode import (OdeProblem, Retcode, SolutionPath, SolverOptions,
                       solve_erk45, solve_euler_fixed)
from .dde import DdeProblem, solve_dde_mos
from .errors import ConfigError, SolveFailure, TrainingDiverged
from .sde import NoiseConfig, SdeProblem, monte_carlo_mean, solve_euler_maruyama
from .sensitivity import (BACKENDS, GradientRequest, LossSpec,
                          evaluate_gradient, loss_value)
from .stiff_ode import solve_rosenbrock
from .train import AdamState, adam_step, train_loop

__all__ = [
    "__version__",
    "OdeProblem", "Retcode", "SolutionPath", "SolverOptions",
    "solve_erk45", "solve_euler_fixed",
    "DdeProblem", "solve_dde_mos",
    "ConfigError", "SolveFailure", "TrainingDiverged",
    "NoiseConfig", "SdeProblem", "monte_carlo_mean", "solve_euler_maruyama",
    "BACKENDS", "GradientRequest", "LossSpec", "evaluate_gradient", "loss_value",
    "solve_rosenbrock",
    "AdamState", "adam_step", "train_loop",
]
