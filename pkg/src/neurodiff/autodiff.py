"""Forward-mode automatic differentiation via fixed-width dual numbers.

A :class:`Dual` bundles an array of values with partial derivatives against
up to ``width`` seed directions, stored along one trailing axis. The numpy
ufuncs the solvers rely on are intercepted through ``__array_ufunc__``, so
numerical code written for plain ndarrays (``+``, ``*``, ``np.exp``, ``@``)
runs on duals unchanged. Derivatives against many inputs are computed in
chunks of at most ``DEFAULT_CHUNK`` directions per sweep.

Value arithmetic is performed by exactly the same numpy expressions as the
plain-float path, so a dual with all-zero partials reproduces float results
bit for bit.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_CHUNK = 8

_HANDLED_UFUNCS: dict = {}


def value(x):
    """Value part of ``x``: the wrapped array for duals, ``x`` otherwise."""
    return x.val if isinstance(x, Dual) else x


def isdual(x) -> bool:
    return isinstance(x, Dual)


def partials(x, width: int):
    """Partials of ``x`` against ``width`` directions (zeros for non-duals)."""
    if isinstance(x, Dual):
        if x.width != width:
            raise ValueError(f"dual width {x.width} != expected {width}")
        return x.eps
    v = np.asarray(x, dtype=np.float64)
    return np.zeros(v.shape + (width,))


def _bcast_eps(eps, shape):
    # broadcast partials to a new value shape, keeping the trailing axis
    if eps.shape[:-1] == shape:
        return eps
    return np.broadcast_to(eps, tuple(shape) + (eps.shape[-1],))


class Dual:
    """Array of values plus partial derivatives along a trailing axis.

    ``val`` has shape S and ``eps`` has shape S + (width,). Scalars are
    shape-() values with shape-(width,) partials. Instances are treated as
    immutable.
    """

    __slots__ = ("val", "eps")

    def __init__(self, val, eps):
        val = np.asarray(val, dtype=np.float64)
        eps = np.asarray(eps, dtype=np.float64)
        if eps.ndim != val.ndim + 1 or eps.shape[:-1] != val.shape:
            raise ValueError(
                f"partials shape {eps.shape} does not extend value shape {val.shape}"
            )
        self.val = val
        self.eps = eps

    # ------------------------------------------------------------------
    # structure

    @property
    def width(self) -> int:
        return self.eps.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def __len__(self):
        return len(self.val)

    def __getitem__(self, idx):
        return Dual(self.val[idx], self.eps[idx])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Dual(self.val.reshape(shape), self.eps.reshape(shape + (self.width,)))

    def sum(self, axis=None, dtype=None, out=None):
        if dtype is not None or out is not None:
            raise TypeError("dtype/out are not supported for Dual.sum")
        if axis is None:
            return Dual(self.val.sum(), self.eps.reshape(-1, self.width).sum(axis=0))
        axis = axis % max(self.val.ndim, 1)
        return Dual(self.val.sum(axis=axis), self.eps.sum(axis=axis))

    def __repr__(self):
        return f"Dual({self.val!r}, width={self.width})"

    def __array__(self, dtype=None, copy=None):
        # fail loudly instead of silently decaying to an object array
        raise TypeError("implicit Dual -> ndarray conversion; use value(x)")

    # ------------------------------------------------------------------
    # numpy interception

    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs.get("out") is not None:
            return NotImplemented
        handler = _HANDLED_UFUNCS.get(ufunc)
        if handler is None:
            return NotImplemented
        return handler(*inputs)

    def __array_function__(self, func, types, args, kwargs):
        if func is np.stack:
            return stack(*args, **kwargs)
        if func is np.concatenate:
            return concat(*args, **kwargs)
        if func is np.sum:
            return args[0].sum(**kwargs)
        return NotImplemented

    # ------------------------------------------------------------------
    # operators (all routed through the ufunc handlers)

    def __add__(self, other):
        return _add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __pow__(self, other):
        return _pow(self, other)

    def __neg__(self):
        return _neg(self)

    def __pos__(self):
        return self

    def __matmul__(self, other):
        return _matmul(self, other)

    def __rmatmul__(self, other):
        return _matmul(other, self)

    def __eq__(self, other):
        return self.val == value(other)

    def __ne__(self, other):
        return self.val != value(other)

    def __lt__(self, other):
        return self.val < value(other)

    def __le__(self, other):
        return self.val <= value(other)

    def __gt__(self, other):
        return self.val > value(other)

    def __ge__(self, other):
        return self.val >= value(other)

    __hash__ = None


# ----------------------------------------------------------------------
# arithmetic rules


def _add(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        return Dual(a.val + b.val, a.eps + b.eps)
    if isinstance(a, Dual):
        v = a.val + b
        return Dual(v, _bcast_eps(a.eps, v.shape))
    v = a + b.val
    return Dual(v, _bcast_eps(b.eps, v.shape))


def _sub(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        return Dual(a.val - b.val, a.eps - b.eps)
    if isinstance(a, Dual):
        v = a.val - b
        return Dual(v, _bcast_eps(a.eps, v.shape))
    v = a - b.val
    return Dual(v, _bcast_eps(-b.eps, v.shape))


def _neg(a):
    return Dual(-a.val, -a.eps)


def _mul(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        return Dual(
            a.val * b.val,
            a.eps * b.val[..., None] + b.eps * a.val[..., None],
        )
    if isinstance(a, Dual):
        bv = np.asarray(b, dtype=np.float64)
        return Dual(a.val * bv, a.eps * bv[..., None])
    av = np.asarray(a, dtype=np.float64)
    return Dual(av * b.val, b.eps * av[..., None])


def _div(a, b):
    if isinstance(a, Dual) and isinstance(b, Dual):
        v = a.val / b.val
        eps = (a.eps - b.eps * v[..., None]) / b.val[..., None]
        return Dual(v, eps)
    if isinstance(a, Dual):
        bv = np.asarray(b, dtype=np.float64)
        return Dual(a.val / bv, a.eps / bv[..., None])
    av = np.asarray(a, dtype=np.float64)
    v = av / b.val
    return Dual(v, -b.eps * (v / b.val)[..., None])


def _pow(a, c):
    if isinstance(c, Dual):
        raise TypeError("dual-valued exponents are not supported")
    cv = np.asarray(c, dtype=np.float64)
    v = a.val**cv
    return Dual(v, (cv * a.val ** (cv - 1.0))[..., None] * a.eps)


def _square(a):
    return Dual(np.square(a.val), (2.0 * a.val)[..., None] * a.eps)


def _unary(fval: Callable, fder: Callable):
    # fder receives (x, f(x)) so derivatives can reuse the value
    def op(a):
        v = fval(a.val)
        return Dual(v, fder(a.val, v)[..., None] * a.eps)

    return op


def _extremum(pick):
    def op(a, b):
        mask = pick(value(a), value(b))
        va, vb = value(a), value(b)
        v = np.where(mask, va, vb)
        w = a.width if isinstance(a, Dual) else b.width
        eps = np.where(mask[..., None], partials(a, w), partials(b, w))
        return Dual(v, _bcast_eps(eps, v.shape))

    return op


def _matmul(a, b):
    a_nd = value(a).ndim
    b_nd = value(b).ndim
    if not (isinstance(a, Dual) or isinstance(b, Dual)):
        return np.matmul(a, b)
    if a_nd == 2 and b_nd == 1:
        # matrix @ vector
        v = value(a) @ value(b)
        eps = 0.0
        if isinstance(a, Dual):
            eps = eps + np.tensordot(a.eps, value(b), axes=(1, 0))
        if isinstance(b, Dual):
            eps = eps + value(a) @ b.eps
        return Dual(v, eps)
    if a_nd == 1 and b_nd == 2:
        # vector @ matrix
        v = value(a) @ value(b)
        eps = 0.0
        if isinstance(a, Dual):
            eps = eps + np.tensordot(a.eps, value(b), axes=(0, 0)).T
        if isinstance(b, Dual):
            eps = eps + np.tensordot(value(a), b.eps, axes=(0, 0))
        return Dual(v, eps)
    if a_nd == 1 and b_nd == 1:
        # dot product
        v = value(a) @ value(b)
        eps = 0.0
        if isinstance(a, Dual):
            eps = eps + value(b) @ a.eps
        if isinstance(b, Dual):
            eps = eps + value(a) @ b.eps
        return Dual(v, eps)
    raise TypeError(f"unsupported matmul ranks for duals: {a_nd} @ {b_nd}")


def _cmp(op):
    return lambda a, b: op(value(a), value(b))


_HANDLED_UFUNCS.update(
    {
        np.add: _add,
        np.subtract: _sub,
        np.multiply: _mul,
        np.true_divide: _div,
        np.divide: _div,
        np.power: _pow,
        np.float_power: _pow,
        np.negative: _neg,
        np.positive: lambda a: a,
        np.square: _square,
        np.exp: _unary(np.exp, lambda x, v: v),
        np.log: _unary(np.log, lambda x, v: 1.0 / x),
        np.sqrt: _unary(np.sqrt, lambda x, v: 0.5 / v),
        np.tanh: _unary(np.tanh, lambda x, v: 1.0 - v * v),
        np.sin: _unary(np.sin, lambda x, v: np.cos(x)),
        np.cos: _unary(np.cos, lambda x, v: -np.sin(x)),
        np.absolute: _unary(np.abs, lambda x, v: np.sign(x)),
        np.maximum: _extremum(lambda x, y: x >= y),
        np.minimum: _extremum(lambda x, y: x <= y),
        np.matmul: _matmul,
        np.isfinite: lambda a: np.isfinite(a.val),
        np.isnan: lambda a: np.isnan(a.val),
        np.equal: _cmp(np.equal),
        np.not_equal: _cmp(np.not_equal),
        np.less: _cmp(np.less),
        np.less_equal: _cmp(np.less_equal),
        np.greater: _cmp(np.greater),
        np.greater_equal: _cmp(np.greater_equal),
    }
)


# ----------------------------------------------------------------------
# assembly helpers


def stack(parts, axis=0):
    """``np.stack`` that tolerates a mix of duals and plain scalars/arrays."""
    widths = {p.width for p in parts if isinstance(p, Dual)}
    if not widths:
        return np.stack(parts, axis=axis)
    if len(widths) > 1:
        raise ValueError(f"mixed dual widths in stack: {sorted(widths)}")
    w = widths.pop()
    val = np.stack([np.asarray(value(p), dtype=np.float64) for p in parts], axis=axis)
    eps = np.stack([partials(p, w) for p in parts], axis=axis)
    return Dual(val, eps)


def concat(parts, axis=0):
    """``np.concatenate`` over a mix of duals and plain arrays."""
    widths = {p.width for p in parts if isinstance(p, Dual)}
    if not widths:
        return np.concatenate(parts, axis=axis)
    if len(widths) > 1:
        raise ValueError(f"mixed dual widths in concat: {sorted(widths)}")
    w = widths.pop()
    val = np.concatenate([value(p) for p in parts], axis=axis)
    eps = np.concatenate([partials(p, w) for p in parts], axis=axis)
    return Dual(val, eps)


# ----------------------------------------------------------------------
# derivative drivers


def _seed_chunk(x, lo, hi):
    eps = np.zeros((x.size, hi - lo))
    eps[lo:hi] = np.eye(hi - lo)
    return Dual(x, eps.reshape(x.shape + (hi - lo,)))


def jvp(f: Callable, x, v):
    """Directional derivative of ``f`` at ``x`` along ``v``: returns (f(x), df)."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    out = f(Dual(x, v[..., None]))
    if isinstance(out, Dual):
        return out.val, out.eps[..., 0]
    out = np.asarray(out, dtype=np.float64)
    return out, np.zeros_like(out)


def jacobian(f: Callable, x, chunk: int = DEFAULT_CHUNK):
    """Jacobian of a vector function via dual sweeps, ``chunk`` columns at a time."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for lo in range(0, x.size, chunk):
        hi = min(lo + chunk, x.size)
        out = f(_seed_chunk(x, lo, hi))
        if isinstance(out, Dual):
            cols.append(out.eps)
        else:
            out = np.asarray(out, dtype=np.float64)
            cols.append(np.zeros(out.shape + (hi - lo,)))
    return np.concatenate(cols, axis=-1)


def grad(f: Callable, x, chunk: int = DEFAULT_CHUNK):
    """Gradient of a scalar function; returns (f(x), df/dx)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros(x.size)
    if x.size == 0:
        return float(value(f(x))), g
    val = None
    for lo in range(0, x.size, chunk):
        hi = min(lo + chunk, x.size)
        out = f(_seed_chunk(x, lo, hi))
        if isinstance(out, Dual):
            val = float(out.val)
            g[lo:hi] = out.eps
        else:
            val = float(out)
    return val, g.reshape(x.shape)
