"""Dense tensors with reverse-mode differentiation.

A :py:class:`Tensor` wraps a :py:class:`numpy.ndarray`. Every operation on
tensors that require gradients records its parents and a closure computing
the vector-Jacobian product, so the recorded graph (the *tape*) is built
dynamically during the forward pass. :py:func:`backward` walks the tape in
reverse topological order, accumulates gradients on leaf tensors and then
frees the tape.

Numeric settings (precision, debug finite checks and gradient recording)
are thread-local, so a tape never leaks across threads. Tensors that are not
part of a tape can be shared read-only between threads.
"""
from typing import Any, Callable, Iterator, List, Optional, Sequence, Tuple, Union
import threading
import warnings
from contextlib import contextmanager
import numpy as np
from scipy import special
from .errors import (
    ConfigurationError,
    ContractViolationError,
    DimensionError,
    EmptyGradientWarning,
    NumericError,
)

__all__ = [
    "Tensor", "Parameter", "as_tensor", "backward",
    "precision", "set_precision", "get_dtype", "debug_mode", "no_grad",
    "is_grad_enabled", "check_finite",
    "add", "sub", "mul", "div", "neg", "power", "matmul", "transpose",
    "reshape", "getitem", "concat", "stack", "tsum", "tmean", "tmax",
    "exp", "log", "sqrt", "relu", "sigmoid", "silu", "softplus",
    "softmax", "log_softmax", "layer_norm", "multi_head_attention",
]

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]

PRECISIONS = {"float32": np.float32, "float64": np.float64}


class _State(threading.local):
    dtype = np.float32
    debug = False
    grad_enabled = True


_state = _State()


# Settings --------------------------------------------------------------------

def get_dtype() -> type:
    """Floating point type used for newly created tensors."""
    return _state.dtype

def set_precision(name: str) -> None:
    """Set default precision (``"float32"`` or ``"float64"``)."""
    try:
        _state.dtype = PRECISIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown precision '{name}'") from None

@contextmanager
def precision(name: str) -> Iterator[None]:
    """Temporarily switch the default precision."""
    old = _state.dtype
    set_precision(name)
    try:
        yield
    finally:
        _state.dtype = old

@contextmanager
def debug_mode(enabled: bool = True) -> Iterator[None]:
    """Enable per-operation finite checks."""
    old = _state.debug
    _state.debug = enabled
    try:
        yield
    finally:
        _state.debug = old

@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording."""
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old

def is_grad_enabled() -> bool:
    return _state.grad_enabled

def check_finite(data: np.ndarray, what: str = "tensor") -> None:
    """Raise :py:class:`NumericError` if ``data`` holds NaN or Inf."""
    if not np.all(np.isfinite(data)):
        bad = int(np.size(data) - np.count_nonzero(np.isfinite(data)))
        raise NumericError(f"{what}: {bad} non-finite value(s)")


# Tensor ----------------------------------------------------------------------

class Tensor:
    """Dense array with optional participation in the gradient tape.

    Attributes
    ----------
    data
        Values as a :py:class:`numpy.ndarray`.
    grad
        Gradient buffer of the same shape as ``data``.
        Populated on leaf tensors by :py:func:`backward`.
    requires_grad
        Whether operations on this tensor are recorded.
    """
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")
    __array_priority__ = 1000

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        *,
        dtype: Optional[type] = None
    ) -> None:
        self.data = np.array(data, dtype=dtype or _state.dtype)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"{self.__class__.__name__}(shape={self.shape}{flag})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 \
            else float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    # Operators

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return power(self, exponent)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(other, self)

    def __getitem__(self, index: Any) -> "Tensor":
        return getitem(self, index)

    # Methods

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tmean(self, axis, keepdims)

    def max(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return tmax(self, axis, keepdims)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def relu(self) -> "Tensor":
        return relu(self)


class Parameter(Tensor):
    """Trainable leaf tensor.

    The hierarchical ``name`` (for instance ``fusion.tvt.w_q.weight``)
    is assigned when the owning module enumerates its parameters.
    """
    __slots__ = ("name",)

    def __init__(self, data: Any, name: str = "", *, dtype: Optional[type] = None) -> None:
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter(name={self.name!r}, shape={self.shape})"


def as_tensor(x: ArrayLike) -> Tensor:
    """Wrap ``x`` as a constant tensor unless it already is one."""
    return x if isinstance(x, Tensor) else Tensor(x)


# Tape ------------------------------------------------------------------------

Backward = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

def _record(
    op: str,
    data: np.ndarray,
    parents: Tuple[Tensor, ...],
    backward_fn: Backward
) -> Tensor:
    if _state.debug:
        check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data)
    out.grad = None
    track = _state.grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out._parents = parents if track else ()
    out._backward = backward_fn if track else None
    out._op = op
    return out

def _topological_order(root: Tensor) -> List[Tensor]:
    order   = []
    visited = set()
    stack   = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order

def backward(loss: Tensor) -> List[Tensor]:
    """Populate gradients of all leaf tensors reachable from ``loss``.

    Gradients accumulate into ``grad`` of leaves which require gradients.
    The tape is freed afterwards, so a graph can be differentiated once.

    Returns
    -------
    leaves
        Leaf tensors which received a gradient.
        :py:class:`EmptyGradientWarning` is issued when there are no
        :py:class:`Parameter` objects among them.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward expects a scalar loss, got shape {loss.shape}")

    order  = _topological_order(loss)
    grads  = {id(loss): np.ones_like(loss.data)}
    leaves = []

    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
                leaves.append(node)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    for node in order:
        if node._backward is not None:
            node._parents  = ()
            node._backward = None

    if not any(isinstance(leaf, Parameter) for leaf in leaves):
        warnings.warn("backward reached no parameters", EmptyGradientWarning)
    return leaves

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# Elementwise arithmetic ------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _record("add", a.data + b.data, (a, b), _backward)

def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return _record("sub", a.data - b.data, (a, b), _backward)

def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _record("mul", a.data * b.data, (a, b), _backward)

def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    def _backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape)
        )
    return _record("div", out, (a, b), _backward)

def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))

def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    def _backward(g):
        return (g * exponent * a.data**(exponent - 1),)
    return _record("power", a.data**exponent, (a,), _backward)

def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))

def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _record("log", np.log(a.data), (a,), lambda g: (g / a.data,))

def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))

def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _record("relu", a.data * mask, (a,), lambda g: (g * mask,))

def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = special.expit(a.data)
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1 - out),))

def silu(a: ArrayLike) -> Tensor:
    """Sigmoid linear unit ``x * sigmoid(x)``."""
    a = as_tensor(a)
    s = special.expit(a.data)
    def _backward(g):
        return (g * s * (1 + a.data * (1 - s)),)
    return _record("silu", a.data * s, (a,), _backward)

def softplus(a: ArrayLike) -> Tensor:
    """Numerically stable ``log(1 + exp(x))``."""
    a = as_tensor(a)
    out = np.logaddexp(0, a.data).astype(a.dtype, copy=False)
    return _record("softplus", out, (a,), lambda g: (g * special.expit(a.data),))


# Linear algebra and shape ----------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Matrix product; leading dimensions are treated as batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}"
        )
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise DimensionError(
            f"matmul: incompatible shapes {a.shape} and {b.shape}"
        ) from exc
    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _record("matmul", out, (a, b), _backward)

def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Permute axes; by default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(
        "transpose", np.transpose(a.data, axes), (a,),
        lambda g: (np.transpose(g, inverse),)
    )

def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return _record(
        "reshape", a.data.reshape(shape), (a,),
        lambda g: (g.reshape(a.shape),)
    )

def getitem(a: ArrayLike, index: Any) -> Tensor:
    a = as_tensor(a)
    def _backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)
    return _record("getitem", np.array(a.data[index]), (a,), _backward)

def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    def _backward(g):
        return tuple(np.split(g, sizes, axis=axis))
    return _record(
        "concat", np.concatenate([t.data for t in tensors], axis=axis),
        tensors, _backward
    )

def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    def _backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))
    return _record(
        "stack", np.stack([t.data for t in tensors], axis=axis),
        tensors, _backward
    )


# Reductions ------------------------------------------------------------------

def tsum(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _record("sum", out, (a,), _backward)

def tmean(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis, keepdims) * (1.0 / count)

def tmax(a: ArrayLike, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    """Maximum along ``axis``; the gradient flows to the first maximizer."""
    a = as_tensor(a)
    if axis is None:
        return tmax(reshape(a, (-1,)), 0, keepdims)
    axis = axis % a.ndim
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    def _backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, g if keepdims else np.expand_dims(g, axis), axis)
        return (full,)
    return _record("max", out, (a,), _backward)


# Neural primitives -----------------------------------------------------------

def softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilized by max-subtraction."""
    x = as_tensor(x)
    out = special.softmax(x.data, axis=axis).astype(x.dtype, copy=False)
    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _record("softmax", out, (x,), _backward)

def log_softmax(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = special.log_softmax(x.data, axis=axis).astype(x.dtype, copy=False)
    def _backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)
    return _record("log_softmax", out, (x,), _backward)

def layer_norm(
    x: ArrayLike,
    gain: ArrayLike,
    bias: ArrayLike,
    eps: float = 1e-5
) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then apply
    the affine map ``gain * x + bias``.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: last dimension {d} does not match "
            f"gain {gain.shape} / bias {bias.shape}"
        )
    if eps <= 0:
        raise ConfigurationError("layer_norm: 'eps' has to be positive")

    xc   = x.data - x.data.mean(axis=-1, keepdims=True)
    rstd = 1 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * rstd
    out  = xhat * gain.data + bias.data

    def _backward(g):
        gxhat = g * gain.data
        gx = rstd * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        rows = g.reshape(-1, d)
        return gx, (rows * xhat.reshape(-1, d)).sum(axis=0), rows.sum(axis=0)

    return _record("layer_norm", out, (x, gain, bias), _backward)

def multi_head_attention(
    q: ArrayLike,
    k: ArrayLike,
    v: ArrayLike,
    heads: int,
    prior: Optional[np.ndarray] = None,
    *,
    log_prior: Optional[np.ndarray] = None
) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention split into ``heads`` heads.

    Inputs are already projected; the module
    :py:class:`src.nn.MultiHeadAttention` adds the projections.

    Parameters
    ----------
    q, k, v
        Queries ``(Lq, d)``, keys and values ``(Lk, d)``.
    heads
        Number of heads; has to divide ``d``.
    prior
        Optional nonnegative ``(Lq, Lk)`` matrix. Attention weights are
        multiplied by it and rows renormalized. This is computed in the
        log domain, ``softmax(scores + log(prior))``, which is the same
        distribution and cannot underflow to an all-zero row.
    log_prior
        Logarithm of the prior, for callers who have it in closed form.

    Returns
    -------
    out
        Weighted value sums ``(Lq, d)`` with heads concatenated.
    weights
        Attention weights ``(heads, Lq, Lk)``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 2 or k.ndim != 2 or v.ndim != 2:
        raise DimensionError(
            f"attention expects matrices, got {q.shape}, {k.shape}, {v.shape}"
        )
    (Lq, d), (Lk, dk) = q.shape, k.shape
    if dk != d or v.shape != (Lk, d):
        raise DimensionError(
            f"attention: incompatible shapes q={q.shape}, k={k.shape}, v={v.shape}"
        )
    if heads < 1 or d % heads:
        raise ConfigurationError(f"width {d} is not divisible by {heads} heads")
    dh = d // heads

    if prior is not None:
        prior = np.asarray(prior)
        if prior.shape != (Lq, Lk):
            raise DimensionError(
                f"attention prior has shape {prior.shape}, expected {(Lq, Lk)}"
            )
        if np.any(prior < 0) or np.any(prior.max(axis=1) <= 0):
            raise ContractViolationError(
                "attention prior has to be nonnegative with a positive entry per row"
            )
        log_prior = np.log(np.maximum(prior, np.finfo(q.dtype).tiny))

    qh = q.reshape(Lq, heads, dh).transpose(1, 0, 2)
    kh = k.reshape(Lk, heads, dh).transpose(1, 2, 0)
    vh = v.reshape(Lk, heads, dh).transpose(1, 0, 2)

    scores = (qh @ kh) * (1.0 / np.sqrt(dh))
    if log_prior is not None:
        scores = scores + np.asarray(log_prior, dtype=q.dtype)
    weights = softmax(scores, axis=-1)
    out = (weights @ vh).transpose(1, 0, 2).reshape(Lq, d)
    return out, weights
