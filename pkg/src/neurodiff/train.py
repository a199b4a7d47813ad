"""Adam optimizer and the full-batch training loop.

Update rule per Kingma & Ba (2015) with bias correction. The loop is
deliberately plain: evaluate (loss, gradient), take one Adam step, record,
repeat. Every iteration uses the whole trajectory loss; there is no
minibatching because the fit problems here have one trajectory.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DimensionMismatch, TrainingDiverged


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 0.1) -> "AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr)


def adam_step(state: AdamState, p: np.ndarray, g: np.ndarray):
    """One bias-corrected Adam update; returns (new state, new parameters)."""
    p = np.asarray(p, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if p.shape != g.shape or p.shape != state.m.shape:
        raise DimensionMismatch(
            f"parameter/gradient/moment shapes disagree: {p.shape}, {g.shape}, {state.m.shape}"
        )
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    p_new = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, t=t, lr=state.lr,
                          beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_state, p_new


@dataclass
class TrainRecord:
    """Per-iteration loss trace with wall times."""

    iterations: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    seconds: list = field(default_factory=list)

    def append(self, iteration: int, loss: float, secs: float):
        self.iterations.append(iteration)
        self.losses.append(loss)
        self.seconds.append(secs)

    def __len__(self):
        return len(self.iterations)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]

    @property
    def best_loss(self) -> float:
        return min(self.losses)

    def to_csv(self) -> str:
        lines = ["iter,loss,seconds"]
        for it, loss, secs in zip(self.iterations, self.losses, self.seconds):
            lines.append(f"{it},{loss:.17g},{secs:.17g}")
        return "\n".join(lines) + "\n"


def train_loop(loss_and_grad: Callable, p0, iters: int, lr: float = 0.1,
               callback: Optional[Callable] = None):
    """Run ``iters`` rounds of (loss, grad) -> adam_step from ``p0``.

    ``loss_and_grad`` maps a parameter vector to (loss value, gradient).
    ``callback``, when given, is invoked after each round with
    (iteration, loss, parameters). Returns (trained parameters, TrainRecord).
    Raises TrainingDiverged as soon as the loss stops being finite; the
    exception carries the trace of the iterations that did complete.
    """
    if iters < 1:
        raise ConfigError("iters must be >= 1")
    p = np.array(p0, dtype=np.float64)
    state = AdamState.fresh(p.size, lr=lr)
    record = TrainRecord()
    for it in range(1, iters + 1):
        started = time.perf_counter()
        loss, g = loss_and_grad(p)
        loss = float(loss)
        if not np.isfinite(loss):
            raise TrainingDiverged(record, it)
        state, p = adam_step(state, p, g)
        record.append(it, loss, time.perf_counter() - started)
        if callback is not None:
            callback(it, loss, p)
    return p, record
