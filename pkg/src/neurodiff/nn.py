"""Small dense networks and their flat-parameter plumbing.

Solvers and optimizers in this package see parameters only as one flat
vector, so a chain here is an architecture plus a layout that maps (layer,
W|b) blocks to flat offsets. Forward passes slice the flat vector directly,
which lets Dual parameter vectors flow through a whole solve untouched.
Initialization is Glorot-uniform weights with zero biases.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch

_ACTIVATIONS = {
    "tanh": np.tanh,
    "relu": lambda x: np.maximum(x, 0.0),
    "identity": lambda x: x,
}

_PRE_TRANSFORMS = ("none", "cube")


@dataclass
class DenseLayer:
    """Affine map plus elementwise activation: act(W x + b)."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise DimensionMismatch(f"layer W {self.W.shape} and b {self.b.shape} do not fit")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @classmethod
    def zeros(cls, n_in: int, n_out: int, activation: str = "identity") -> "DenseLayer":
        return cls(np.zeros((n_out, n_in)), np.zeros(n_out), activation)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @property
    def n_params(self) -> int:
        return self.W.size + self.b.size


@dataclass
class MlpChain:
    """Ordered dense layers with an optional elementwise input pre-transform."""

    layers: List[DenseLayer]
    pre: str = "none"

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("chain needs at least one layer")
        if self.pre not in _PRE_TRANSFORMS:
            raise ConfigError(f"unknown pre-transform {self.pre!r}")
        for a, b in zip(self.layers[:-1], self.layers[1:]):
            if a.n_out != b.n_in:
                raise DimensionMismatch(
                    f"layer output {a.n_out} does not chain into input {b.n_in}"
                )

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    @property
    def n_params(self) -> int:
        return sum(l.n_params for l in self.layers)

    def layout(self) -> list:
        """Flat-offset descriptor: W block then b block per layer, in order."""
        out = []
        off = 0
        for i, l in enumerate(self.layers):
            out.append(
                {
                    "layer": i,
                    "activation": l.activation,
                    "w_offset": off,
                    "w_shape": [l.n_out, l.n_in],
                    "b_offset": off + l.W.size,
                    "b_shape": [l.n_out],
                }
            )
            off += l.n_params
        return out


def chain_of(sizes: Sequence[int], activations: Sequence[str], pre: str = "none") -> MlpChain:
    """Zero-initialized chain from layer sizes, e.g. (2, 50, 2) with ("tanh", "identity")."""
    if len(activations) != len(sizes) - 1:
        raise ConfigError("need one activation per layer")
    layers = [
        DenseLayer.zeros(sizes[i], sizes[i + 1], activations[i]) for i in range(len(sizes) - 1)
    ]
    return MlpChain(layers, pre=pre)


@dataclass
class ParamVector:
    """Flat parameter vector tied to a chain layout."""

    data: object
    layout: list = field(default_factory=list)

    def __len__(self):
        return len(self.data)

    def to_csv(self) -> str:
        return "\n".join(f"{x:.17g}" for x in np.asarray(self.data, dtype=np.float64)) + "\n"

    def layout_json(self) -> str:
        return json.dumps({"n_params": len(self.data), "layers": self.layout})


def flatten(chain: MlpChain) -> ParamVector:
    """Stored layer weights as one flat vector (W row-major, then b, per layer)."""
    parts = []
    for l in chain.layers:
        parts.append(l.W.ravel())
        parts.append(l.b)
    return ParamVector(np.concatenate(parts), chain.layout())


def unflatten(chain: MlpChain, flat) -> MlpChain:
    """New chain with the same architecture and weights read from ``flat``."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (chain.n_params,):
        raise DimensionMismatch(f"expected {chain.n_params} parameters, got {flat.shape}")
    layers = []
    off = 0
    for l in chain.layers:
        W = flat[off:off + l.W.size].reshape(l.W.shape)
        off += l.W.size
        b = flat[off:off + l.b.size]
        off += l.b.size
        layers.append(DenseLayer(W.copy(), b.copy(), l.activation))
    return MlpChain(layers, pre=chain.pre)


def init_params(chain: MlpChain, seed: int) -> ParamVector:
    """Glorot-uniform weights (bound sqrt(6/(n_in+n_out))), zero biases."""
    rng = np.random.default_rng(seed)
    parts = []
    for l in chain.layers:
        bound = np.sqrt(6.0 / (l.n_in + l.n_out))
        parts.append(rng.uniform(-bound, bound, size=l.W.size))
        parts.append(np.zeros(l.b.size))
    return ParamVector(np.concatenate(parts), chain.layout())


def _as_flat(p):
    if isinstance(p, ParamVector):
        return p.data
    return p


def mlp_forward(chain: MlpChain, p, x):
    """Forward pass reading weights from the flat vector ``p``.

    Both ``p`` and ``x`` may be Dual, so the same code path serves plain
    evaluation and derivative sweeps.
    """
    p = _as_flat(p)
    if len(p) != chain.n_params:
        raise DimensionMismatch(f"expected {chain.n_params} parameters, got {len(p)}")
    if len(x) != chain.n_in:
        raise DimensionMismatch(f"expected input of length {chain.n_in}, got {len(x)}")
    h = x ** 3 if chain.pre == "cube" else x
    off = 0
    for l in chain.layers:
        W = p[off:off + l.W.size].reshape(l.n_out, l.n_in)
        off += l.W.size
        b = p[off:off + l.b.size]
        off += l.b.size
        h = _ACTIVATIONS[l.activation](W @ h + b)
    return h


def neural_rhs(chain: MlpChain, p=None):
    """Wrap a chain as an ODE right-hand side (u, p, t) -> mlp_forward(chain, p, u).

    The returned function reads whatever parameter vector the solver passes;
    ``p`` here is only validated for length when given.
    """
    if chain.n_in != chain.n_out:
        raise DimensionMismatch(
            f"state dimension must be preserved: chain maps {chain.n_in} -> {chain.n_out}"
        )
    if p is not None and len(_as_flat(p)) != chain.n_params:
        raise DimensionMismatch(f"expected {chain.n_params} parameters")

    def rhs(u, p_, t):
        return mlp_forward(chain, p_, u)

    return rhs
