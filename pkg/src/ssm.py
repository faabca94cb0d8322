"""Selective state space (Mamba-style) sequence block.

For every channel ``c`` and state ``n`` the selective scan runs the linear
time-varying recurrence::

    h[t] = exp(delta[t, c] * A[c, n]) * h[t-1] + delta[t, c] * B[t, n] * x[t, c]
    y[t, c] = sum_n C[t, n] * h[t, c, n] + D[c] * x[t, c]

with ``h[-1] = 0`` (zero-order hold for ``A``, Euler step for ``B``).
The recurrence is evaluated either sequentially by a parallel
:py:mod:`numba` kernel (channels in parallel) or by a log-depth
associative scan in :py:mod:`numpy`; both share one analytic backward
kernel.
"""
from typing import Optional, Tuple
from dataclasses import dataclass
import math
import numpy as np
from numba import njit, prange
from numpy.lib.stride_tricks import sliding_window_view
from .errors import ConfigurationError, ContractViolationError, DimensionError
from .nn import LayerNorm, Linear, Module, uniform
from .tensorops import Parameter, Tensor, _record, as_tensor, exp, silu, softplus

SCAN_METHODS = ("sequential", "associative")


@dataclass(frozen=True)
class SsmConfig:
    """Hyperparameters of the selective state space block.

    Attributes
    ----------
    d_state
        State size per channel.
    d_conv
        Width of the causal depthwise convolution.
    expand
        Inner width multiplier, ``d_inner = expand * d``.
    d
        Model width.
    dt_rank
        Rank of the step-size projection; ``ceil(d / 16)`` when ``None``.
    dt_min, dt_max
        Range of initial step sizes.
    scan_method
        ``"sequential"`` or ``"associative"``.
    """
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    d: int = 64
    dt_rank: Optional[int] = None
    dt_min: float = 0.001
    dt_max: float = 0.1
    scan_method: str = "sequential"

    def __post_init__(self) -> None:
        for name in ("d_state", "d_conv", "expand", "d"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"'{name}' has to be positive")
        if self.dt_rank is not None and self.dt_rank < 1:
            raise ConfigurationError("'dt_rank' has to be positive")
        if not 0 < self.dt_min <= self.dt_max:
            raise ConfigurationError("step size range has to satisfy 0 < dt_min <= dt_max")
        if self.scan_method not in SCAN_METHODS:
            raise ConfigurationError(f"unknown scan method '{self.scan_method}'")

    @property
    def d_inner(self) -> int:
        return self.expand * self.d

    @property
    def rank(self) -> int:
        return self.dt_rank or math.ceil(self.d / 16)


# Kernels ---------------------------------------------------------------------

@njit(parallel=True, cache=True)
def _scan_forward(delta, A, B, C, x, D):
    L, n_channels = x.shape
    n_state = A.shape[1]
    y = np.empty_like(x)
    h = np.empty((L, n_channels, n_state), dtype=x.dtype)
    for c in prange(n_channels):
        for n in range(n_state):
            state = 0.0
            for t in range(L):
                state = np.exp(delta[t, c] * A[c, n]) * state \
                    + delta[t, c] * B[t, n] * x[t, c]
                h[t, c, n] = state
        for t in range(L):
            acc = 0.0
            for n in range(n_state):
                acc += C[t, n] * h[t, c, n]
            y[t, c] = acc + D[c] * x[t, c]
    return y, h

@njit(parallel=True, cache=True)
def _scan_backward(delta, A, B, C, x, D, h, gy):
    L, n_channels = x.shape
    n_state = A.shape[1]
    gdelta = np.zeros_like(delta)
    gx = np.zeros_like(x)
    gA = np.zeros_like(A)
    gD = np.zeros_like(D)
    gh = np.empty_like(h)
    for c in prange(n_channels):
        acc = 0.0
        for t in range(L):
            acc += gy[t, c] * x[t, c]
            gx[t, c] = gy[t, c] * D[c]
        gD[c] = acc
        for n in range(n_state):
            carry = 0.0
            ga = 0.0
            for t in range(L - 1, -1, -1):
                g = gy[t, c] * C[t, n] + carry
                gh[t, c, n] = g
                decay = np.exp(delta[t, c] * A[c, n])
                prev = h[t - 1, c, n] if t > 0 else 0.0
                gexp = g * prev * decay
                gdelta[t, c] += gexp * A[c, n] + g * B[t, n] * x[t, c]
                gx[t, c] += g * delta[t, c] * B[t, n]
                ga += gexp * delta[t, c]
                carry = g * decay
            gA[c, n] = ga
    return gdelta, gx, gA, gD, gh


def associative_states(
    decay: np.ndarray,
    drive: np.ndarray
) -> np.ndarray:
    """Solve ``h[t] = decay[t] * h[t-1] + drive[t]`` (``h[-1] = 0``) along the
    first axis with a Hillis-Steele scan of ``ceil(log2(L))`` rounds.

    Pairs compose as ``(a1, b1) then (a2, b2) = (a1 * a2, a2 * b1 + b2)``.
    """
    a = decay.copy()
    b = drive.copy()
    L = a.shape[0]
    offset = 1
    while offset < L:
        b[offset:] = a[offset:] * b[:-offset] + b[offset:]
        a[offset:] = a[offset:] * a[:-offset]
        offset *= 2
    return b

def scan_states(
    delta: np.ndarray,
    A: np.ndarray,
    B: np.ndarray,
    C: np.ndarray,
    x: np.ndarray,
    D: np.ndarray,
    method: str = "sequential"
) -> Tuple[np.ndarray, np.ndarray]:
    """Run the selective scan on plain arrays.

    Returns
    -------
    y
        Outputs ``(L, d_inner)``.
    h
        States ``(L, d_inner, d_state)``.
    """
    if method == "sequential":
        args = [ np.ascontiguousarray(a) for a in (delta, A, B, C, x, D) ]
        return _scan_forward(*args)
    if method == "associative":
        decay = np.exp(delta[:, :, None] * A[None, :, :])
        drive = (delta * x)[:, :, None] * B[:, None, :]
        h = associative_states(decay, drive)
        y = np.einsum("tcn,tn->tc", h, C) + D * x
        return y.astype(x.dtype, copy=False), h.astype(x.dtype, copy=False)
    raise ConfigurationError(f"unknown scan method '{method}'")


# Operations ------------------------------------------------------------------

def causal_conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """Depthwise causal convolution with left zero-padding.

    ``y[t][c] = sum_k kernel[c][k] * x[t - (K-1) + k][c]``
    for ``x`` of shape ``(L, C)`` and ``kernel`` of shape ``(C, K)``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 2 or kernel.ndim != 2 or kernel.shape[0] != x.shape[1]:
        raise DimensionError(
            f"causal_conv1d: input {x.shape} does not match kernel {kernel.shape}"
        )
    L, channels = x.shape
    K = kernel.shape[1]
    padded  = np.concatenate([np.zeros((K - 1, channels), dtype=x.dtype), x.data])
    windows = sliding_window_view(padded, K, axis=0)
    out = np.einsum("tck,ck->tc", windows, kernel.data)

    def _backward(g):
        gk = np.einsum("tc,tck->ck", g, windows)
        gp = np.zeros_like(padded)
        for k in range(K):
            gp[k:k+L] += g * kernel.data[:, k]
        return gp[K-1:], gk

    return _record("causal_conv1d", out, (x, kernel), _backward)

def selective_scan(
    delta: Tensor,
    A: Tensor,
    B: Tensor,
    C: Tensor,
    x: Tensor,
    D: Tensor,
    method: str = "sequential"
) -> Tensor:
    """Differentiable selective scan.

    Parameters
    ----------
    delta
        Positive step sizes ``(L, d_inner)``.
    A
        Negative state matrix ``(d_inner, d_state)``.
    B, C
        Input and output projections ``(L, d_inner)``.
    x
        Input sequence ``(L, d_inner)``.
    D
        Skip gains ``(d_inner,)``.
    method
        ``"sequential"`` or ``"associative"``.

    Raises
    ------
    ContractViolationError
        If any step size is not positive.
    """
    delta, A, B, C, x, D = (as_tensor(t) for t in (delta, A, B, C, x, D))
    L, channels = x.shape
    n_state = A.shape[1]
    if (
        delta.shape != (L, channels) or A.shape != (channels, n_state)
        or B.shape != (L, n_state) or C.shape != (L, n_state)
        or D.shape != (channels,)
    ):
        raise DimensionError(
            "selective_scan: inconsistent shapes "
            f"delta={delta.shape} A={A.shape} B={B.shape} "
            f"C={C.shape} x={x.shape} D={D.shape}"
        )
    if np.any(delta.data <= 0):
        raise ContractViolationError("selective_scan: step sizes have to be positive")

    arrays = [ np.ascontiguousarray(t.data) for t in (delta, A, B, C, x, D) ]
    y, h = scan_states(*arrays, method=method)

    def _backward(g):
        gdelta, gx, gA, gD, gh = _scan_backward(*arrays, h, np.ascontiguousarray(g))
        d, _, _, _, u, _ = arrays
        gB = np.einsum("tcn,tc->tn", gh, d * u)
        gC = np.einsum("tc,tcn->tn", g, h)
        return gdelta, gA, gB, gC, gx, gD

    return _record("selective_scan", y, (delta, A, B, C, x, D), _backward)


# Block -----------------------------------------------------------------------

def inverse_softplus(y: np.ndarray) -> np.ndarray:
    return y + np.log(-np.expm1(-y))


class MambaBlock(Module):
    """Pre-norm residual selective state space block.

    ``output = X + out_proj(scan(...) * silu(z))`` where the scan input is
    the convolved and gated projection of ``layer_norm(X)``.
    Setting ``enabled`` to ``False`` turns the block into the identity map.
    """

    def __init__(self, config: SsmConfig, rng: np.random.Generator) -> None:
        d, di, n, r = config.d, config.d_inner, config.d_state, config.rank
        self.config  = config
        self.enabled = True
        self.norm    = LayerNorm(d)
        self.in_proj = Linear(d, 2*di, rng, bias=False)
        self.conv_weight = Parameter(uniform(rng, (di, config.d_conv), 1 / np.sqrt(config.d_conv)))
        self.conv_bias   = Parameter(np.zeros(di))
        self.x_proj  = Linear(di, r + 2*n, rng, bias=False)
        self.dt_proj = Linear(r, di, rng)
        self.dt_proj.weight.data[...] = uniform(rng, (r, di), r**-0.5)
        dt = np.exp(rng.uniform(np.log(config.dt_min), np.log(config.dt_max), size=di))
        self.dt_proj.bias.data[...] = inverse_softplus(np.maximum(dt, 1e-4))
        # S4D-real initialization
        self.A_log = Parameter(np.log(np.tile(np.arange(1, n + 1, dtype=float), (di, 1))))
        self.D = Parameter(np.ones(di))
        self.out_proj = Linear(di, d, rng, bias=False)

    def forward(self, X: Tensor) -> Tensor:
        if not self.enabled:
            return X
        di, n, r = self.config.d_inner, self.config.d_state, self.config.rank
        uz = self.in_proj(self.norm(X))
        u, z = uz[:, :di], uz[:, di:]
        u = silu(causal_conv1d(u, self.conv_weight) + self.conv_bias)
        dbc = self.x_proj(u)
        delta = softplus(self.dt_proj(dbc[:, :r]))
        B, C = dbc[:, r:r+n], dbc[:, r+n:]
        A = -exp(self.A_log)
        y = selective_scan(delta, A, B, C, u, self.D, self.config.scan_method)
        return X + self.out_proj(y * silu(z))
