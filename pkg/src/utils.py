"""Utility functions."""
from typing import Any, Callable, Optional, Union
import random
from time import perf_counter
import numpy as np
from numba import njit
from .tensorops import Tensor, no_grad


@njit
def _numba_seed(seed: int) -> None:
    np.random.seed(seed)

def set_seed(seed: int) -> None:
    """Seed the global random generators of Python, NumPy and Numba."""
    random.seed(seed)
    np.random.seed(seed)
    _numba_seed(seed)

def measure_time(func: Callable, *args: Any, **kwds: Any) -> float:
    """Measure execution time of a function (in seconds)."""
    start = perf_counter()
    func(*args, **kwds)
    return perf_counter() - start

def rescale_rows(X: np.ndarray, m1: float = 255) -> np.ndarray:
    """Rescale rows of a nonnegative 2D array so that row maxima equal ``m1``.

    Rows of zeros stay zero.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("'X' has to be 2D")
    if np.any(X < 0):
        raise ValueError("'X' has to be nonnegative")
    rmax = X.max(axis=1, keepdims=True)
    return np.divide(X * m1, rmax, out=np.zeros_like(X), where=rmax > 0)

def to_grayscale(X: np.ndarray) -> np.ndarray:
    """Map a nonnegative 2D array to ``uint8`` gray levels by row maxima."""
    return np.clip(np.rint(rescale_rows(X, 255)), 0, 255).astype(np.uint8)

def finite_difference_gradient(
    func: Callable[[], Tensor],
    param: Tensor,
    index: Optional[tuple] = None,
    h: float = 1e-4
) -> Union[float, np.ndarray]:
    """Central finite-difference estimate of ``d func() / d param``.

    Parameters
    ----------
    func
        Closure recomputing a scalar loss from scratch.
    param
        Tensor whose ``data`` is perturbed in place (and restored).
    index
        Estimate only this entry. The full gradient is estimated
        when ``None``.
    h
        Step size.
    """
    indices = [index] if index is not None else list(np.ndindex(param.shape))
    grad = np.zeros(len(indices))
    with no_grad():
        for k, idx in enumerate(indices):
            old = param.data[idx]
            param.data[idx] = old + h
            plus = func().item()
            param.data[idx] = old - h
            minus = func().item()
            param.data[idx] = old
            grad[k] = (plus - minus) / (2*h)
    return grad[0] if index is not None else grad.reshape(param.shape)
