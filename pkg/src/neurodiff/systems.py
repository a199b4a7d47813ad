"""Named benchmark systems used by the experiments and the test suite.

Each factory returns a fresh problem object so callers can mutate or rebind
parameters freely. Right-hand sides are written scalar-generically (numpy
ufuncs and matmul only) so dual numbers flow through them unchanged; the
ROBER rhs pre-builds its constant matrices because the stiffness probe calls
it hundreds of thousands of times.
"""

from __future__ import annotations

import numpy as np

from .core_ode import OdeProblem
from .dde import DdeProblem
from .nn import MlpChain, chain_of, neural_rhs
from .sde import SdeProblem

LOTKA_P = np.array([1.5, 1.0, 3.0, 1.0])
LOTKA_FIT_P0 = np.array([2.2, 1.0, 2.0, 0.4])
ROBER_P = np.array([0.04, 3.0e7, 1.0e4])
LORENZ_P = np.array([10.0, 28.0, 8.0 / 3.0])
CUBIC_MATRIX = np.array([[-0.1, 2.0], [-2.0, -0.1]])


def lotka_rhs(u, p, t):
    """Predator-prey: x' = a x - b x y, y' = -c y + d x y."""
    x, y = u[0], u[1]
    return np.stack([p[0] * x - p[1] * x * y, -p[2] * y + p[3] * x * y])


def lotka_problem(p=LOTKA_P, tspan=(0.0, 10.0)) -> OdeProblem:
    return OdeProblem(rhs=lotka_rhs, u0=[1.0, 1.0], tspan=tspan, params=np.array(p))


def delay_lotka_problem(p=LOTKA_FIT_P0, lag: float = 0.1) -> DdeProblem:
    """Lotka-Volterra with the prey birth term fed by delayed prey."""

    def rhs(u, h, p_, t):
        # p is (alpha, beta, delta, gamma): prey growth feeds on delayed prey
        y = u[1]
        x_del = h(p_, t - lag)[0]
        return np.stack([(p_[0] - p_[1] * y) * x_del, (p_[2] * u[0] - p_[3]) * y])

    return DdeProblem(
        rhs=rhs,
        history=lambda p_, t: np.ones(2),
        constant_lags=[lag],
        u0=[1.0, 1.0],
        tspan=(0.0, 10.0),
        params=np.array(p),
    )


def rober_problem(p=ROBER_P, tspan=(0.0, 1.0e11)) -> OdeProblem:
    """Robertson's autocatalytic reactions; the standard stiff benchmark."""
    k1, k2, k3 = float(p[0]), float(p[1]), float(p[2])
    A = np.array([[-k1, 0.0, 0.0], [k1, 0.0, 0.0], [0.0, 0.0, 0.0]])
    B1 = np.array([k3, -k3, 0.0])
    B2 = np.array([0.0, -k2, k2])

    def rhs(u, p_, t):
        return A @ u + B1 * (u[1] * u[2]) + B2 * (u[1] * u[1])

    return OdeProblem(rhs=rhs, u0=[1.0, 0.0, 0.0], tspan=tspan, params=np.array(p))


def lorenz_rhs(u, p, t):
    x, y, z = u[0], u[1], u[2]
    return np.stack([p[0] * (y - x), x * (p[1] - z) - y, x * y - p[2] * z])


def lorenz_problem(p=LORENZ_P, tspan=(0.0, 100.0)) -> OdeProblem:
    return OdeProblem(rhs=lorenz_rhs, u0=[1.0, 0.0, 0.0], tspan=tspan, params=np.array(p))


def exp_growth_problem(rate: float = 1.5, tspan=(0.0, 1.0)) -> OdeProblem:
    return OdeProblem(rhs=lambda u, p, t: p[0] * u, u0=[1.0], tspan=tspan,
                      params=np.array([rate]))


def cubic_spiral_problem(tspan=(0.0, 1.5)) -> OdeProblem:
    """u' = M^T u^3 (elementwise cube); the neural-fit ground truth."""
    MT = CUBIC_MATRIX.T.copy()

    def rhs(u, p, t):
        return MT @ (u ** 3)

    return OdeProblem(rhs=rhs, u0=[2.0, 0.0], tspan=tspan)


def neural_spiral_chain(width: int = 50) -> MlpChain:
    """Cube pre-transform, then 2 -> width (tanh) -> 2; 252 params at width 50."""
    return chain_of([2, width, 2], ["tanh", "identity"], pre="cube")


def neural_spiral_problem(chain: MlpChain, params, tspan=(0.0, 1.5)) -> OdeProblem:
    return OdeProblem(rhs=neural_rhs(chain), u0=[2.0, 0.0], tspan=tspan, params=params)


def gbm_problem(mu: float = 0.05, sigma: float = 0.2, tspan=(0.0, 1.0)) -> SdeProblem:
    """Geometric Brownian motion du = mu u dt + sigma u dW."""
    return SdeProblem(
        drift=lambda u, p, t: mu * u,
        diffusion=lambda u, p, t: sigma * u,
        u0=[1.0],
        tspan=tspan,
    )


def noisy_lotka_problem(p=LOTKA_P, noise: float = 0.1, tspan=(0.0, 10.0)) -> SdeProblem:
    """Lotka-Volterra drift with multiplicative diagonal noise on both species."""
    p = np.array(p)
    return SdeProblem(
        drift=lambda u, p_, t: lotka_rhs(u, p, t),
        diffusion=lambda u, p_, t: noise * u,
        u0=[1.0, 1.0],
        tspan=tspan,
    )
