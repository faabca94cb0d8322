"""Gaussian-constrained attention blocks.

Each Gaussian block reweights self-attention with a distance prior
``G[i][j] = exp(-(i - j)^2 / (2 * variance))`` so that a position attends
mostly to its neighbours. A block aggregates several variances
(element-wise mean), then applies a residual connection with layer
normalization and a feed-forward network with the same wrapping.
"""
from typing import List, Optional, Sequence, Tuple
from dataclasses import dataclass
from functools import lru_cache
import math
import numpy as np
from .errors import ConfigurationError
from .nn import FeedForward, LayerNorm, Module, MultiHeadAttention
from .tensorops import Tensor

INF = math.inf


@dataclass(frozen=True)
class GaussianBlockConfig:
    """Hyperparameters of a Gaussian attention block.

    Attributes
    ----------
    variances
        Variances of the Gaussian priors; ``inf`` gives an unconstrained
        (plain) attention branch.
    heads
        Number of attention heads.
    d
        Model width.
    ffn_width
        Inner width of the feed-forward network.
    """
    variances: Tuple[float, ...] = (0.5, 1.0, 5.0, INF)
    heads: int = 4
    d: int = 64
    ffn_width: int = 256

    def __post_init__(self) -> None:
        object.__setattr__(self, "variances", tuple(float(v) for v in self.variances))
        if not self.variances:
            raise ConfigurationError("at least one variance is required")
        for v in self.variances:
            _check_variance(v)
        if self.heads < 1 or self.d % self.heads:
            raise ConfigurationError(f"width {self.d} is not divisible by {self.heads} heads")
        if self.ffn_width < 1:
            raise ConfigurationError("'ffn_width' has to be positive")


def _check_variance(variance: float) -> None:
    if math.isnan(variance) or variance <= 0:
        raise ConfigurationError(f"variance has to be positive or infinite, got {variance}")


@lru_cache(maxsize=256)
def _log_prior(L: int, variance: float) -> np.ndarray:
    if math.isinf(variance):
        out = np.zeros((L, L))
    else:
        offset = np.arange(L)[:, None] - np.arange(L)[None, :]
        out = -(offset**2) / (2 * variance)
    out.setflags(write=False)
    return out

def gaussian_log_prior(L: int, variance: float) -> np.ndarray:
    """Logarithm of :py:func:`gaussian_prior` in closed form (read-only)."""
    if L < 1:
        raise ConfigurationError("sequence length has to be positive")
    _check_variance(variance)
    return _log_prior(int(L), float(variance))

def gaussian_prior(L: int, variance: float) -> np.ndarray:
    """Gaussian distance prior ``G[i][j] = exp(-(i-j)^2 / (2 * variance))``.

    Infinite variance gives the all-ones matrix.

    Raises
    ------
    ConfigurationError
        If ``variance`` is not positive.
    """
    return np.exp(gaussian_log_prior(L, variance))

def gaussian_attention(
    X: Tensor,
    variance: float,
    attention: MultiHeadAttention
) -> Tuple[Tensor, Tensor]:
    """Self-attention over ``X`` constrained by a Gaussian prior.

    Returns the projected output ``(L, d)`` and the weights
    ``(heads, L, L)`` whose rows lie on the probability simplex.
    """
    log_prior = gaussian_log_prior(X.shape[0], variance)
    return attention.attend_many(X, X, X, [log_prior])[0]


class GMMFormerBlock(Module):
    """Multi-variance Gaussian attention block.

    Projections are shared across variance branches. Setting ``enabled``
    to ``False`` turns the block into the identity map.
    """

    def __init__(self, config: GaussianBlockConfig, rng: np.random.Generator) -> None:
        self.config    = config
        self.enabled   = True
        self.attention = MultiHeadAttention(config.d, config.heads, rng)
        self.norm1     = LayerNorm(config.d)
        self.ffn       = FeedForward(config.d, config.ffn_width, rng)
        self.norm2     = LayerNorm(config.d)

    def forward(
        self,
        X: Tensor,
        variances: Optional[Sequence[float]] = None
    ) -> Tuple[Tensor, List[Tensor]]:
        """Apply the block.

        Returns
        -------
        out
            Output of shape ``(L, d)``.
        weights
            Attention weights, one ``(heads, L, L)`` tensor per variance.
        """
        if not self.enabled:
            return X, []
        variances = self.config.variances if variances is None else variances
        L = X.shape[0]
        branches = self.attention.attend_many(
            X, X, X, [ gaussian_log_prior(L, v) for v in variances ]
        )
        aggregated = branches[0][0]
        for out, _ in branches[1:]:
            aggregated = aggregated + out
        if len(branches) > 1:
            aggregated = aggregated * (1.0 / len(branches))
        x = self.norm1(X + aggregated)
        x = self.norm2(x + self.ffn(x))
        return x, [ w for _, w in branches ]
