"""Parameter registry, layers and optimization.

Modules are plain Python objects. Parameters are discovered by walking
instance attributes, which yields hierarchical names such as
``video_encoder.clip.blocks.0.attention.w_q.weight``.
"""
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple
from dataclasses import dataclass, field
import numpy as np
from .errors import CheckpointError, ConfigurationError
from .tensorops import (
    Parameter,
    Tensor,
    layer_norm,
    multi_head_attention,
    relu,
)


class Module:
    """Base class for models and layers."""

    def __call__(self, *args: Any, **kwds: Any) -> Any:
        return self.forward(*args, **kwds)

    def forward(self, *args: Any, **kwds: Any) -> Any:
        raise NotImplementedError

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        """Iterate over ``(name, parameter)`` pairs.

        A parameter shared between submodules is reported once,
        under the first name it is reachable by.
        """
        yield from self._named_parameters(prefix, set())

    def _named_parameters(self, prefix, seen):
        for key, value in vars(self).items():
            if isinstance(value, Parameter):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield prefix+key, value
            elif isinstance(value, Module):
                yield from value._named_parameters(f"{prefix}{key}.", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._named_parameters(f"{prefix}{key}.{i}.", seen)

    def parameters(self) -> Dict[str, Parameter]:
        """Ordered registry of parameters; also assigns their names."""
        params = dict(self.named_parameters())
        for name, param in params.items():
            param.name = name
        return params

    def zero_grad(self) -> None:
        for param in self.parameters().values():
            param.grad = None

    def state_arrays(self) -> Dict[str, np.ndarray]:
        """Copies of all parameter values keyed by name."""
        return { k: p.data.copy() for k, p in self.parameters().items() }

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values.

        Raises
        ------
        CheckpointError
            If a parameter is missing, unexpected or of a different shape.
        """
        params = self.parameters()
        missing = [ k for k in params if k not in arrays ]
        if missing:
            raise CheckpointError(f"missing tensor(s): {', '.join(missing)}")
        unexpected = [ k for k in arrays if k not in params ]
        if unexpected:
            raise CheckpointError(f"unexpected tensor(s): {', '.join(unexpected)}")
        for name, param in params.items():
            value = np.asarray(arrays[name])
            if value.shape != param.shape:
                raise CheckpointError(
                    f"shape mismatch for tensor '{name}': "
                    f"checkpoint {value.shape} vs model {param.shape}"
                )
        for name, param in params.items():
            param.data = np.array(arrays[name], dtype=param.dtype)
            param.grad = None


def uniform(
    rng: np.random.Generator,
    shape: Sequence[int],
    bound: float
) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape)


# Layers ----------------------------------------------------------------------

class Linear(Module):
    """Affine map ``x @ weight + bias`` with ``weight`` of shape ``(d_in, d_out)``."""

    def __init__(
        self,
        d_in: int,
        d_out: int,
        rng: np.random.Generator,
        *,
        bias: bool = True
    ) -> None:
        self.weight = Parameter(uniform(rng, (d_in, d_out), 1 / np.sqrt(d_in)))
        if bias:
            self.bias = Parameter(np.zeros(d_out))
        else:
            self.bias = None

    def forward(self, x: Tensor) -> Tensor:
        out = x @ self.weight
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):

    def __init__(self, d: int, eps: float = 1e-5) -> None:
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps  = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class FeedForward(Module):
    """Two-layer position-wise network with ReLU."""

    def __init__(self, d: int, width: int, rng: np.random.Generator) -> None:
        self.fc1 = Linear(d, width, rng)
        self.fc2 = Linear(width, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(relu(self.fc1(x)))


class MultiHeadAttention(Module):
    """Multi-head attention with learned projections.

    The output projection has no bias, so zeroing the value projection
    (``w_v``) makes the attention output exactly zero.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        if heads < 1 or d % heads:
            raise ConfigurationError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.w_o = Linear(d, d, rng, bias=False)

    def forward(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        prior: Optional[np.ndarray] = None
    ) -> Tuple[Tensor, Tensor]:
        out, weights = multi_head_attention(
            self.w_q(query), self.w_k(key), self.w_v(value), self.heads, prior
        )
        return self.w_o(out), weights

    def attend_many(
        self,
        query: Tensor,
        key: Tensor,
        value: Tensor,
        log_priors: Sequence[Optional[np.ndarray]]
    ) -> List[Tuple[Tensor, Tensor]]:
        """Attend once per log-prior, sharing the projections."""
        q, k, v = self.w_q(query), self.w_k(key), self.w_v(value)
        results = []
        for log_prior in log_priors:
            out, weights = multi_head_attention(
                q, k, v, self.heads, log_prior=log_prior
            )
            results.append((self.w_o(out), weights))
        return results


class TransformerLayer(Module):
    """Standard post-norm transformer encoder layer."""

    def __init__(
        self,
        d: int,
        heads: int,
        ffn_width: int,
        rng: np.random.Generator
    ) -> None:
        self.attention = MultiHeadAttention(d, heads, rng)
        self.norm1 = LayerNorm(d)
        self.ffn   = FeedForward(d, ffn_width, rng)
        self.norm2 = LayerNorm(d)

    def forward(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        attended, weights = self.attention(x, x, x)
        x = self.norm1(x + attended)
        return self.norm2(x + self.ffn(x)), weights


# Optimization ----------------------------------------------------------------

@dataclass
class AdamState:
    """Moment estimates of the Adam optimizer."""
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Parameter],
    grads: Mapping[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8
) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    Parameters without a gradient are left untouched.

    Returns
    -------
    state
        The updated optimizer state (the same object).
    """
    if not (0 < beta1 < 1 and 0 < beta2 < 1):
        raise ConfigurationError("Adam betas have to lie in (0, 1)")
    state.step += 1
    t = state.step
    for name, param in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name, 0) * beta1 + (1 - beta1) * g
        v = state.v.get(name, 0) * beta2 + (1 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        param.data = (param.data - lr * mhat / (np.sqrt(vhat) + eps)) \
            .astype(param.dtype, copy=False)
    return state


class Adam:
    """Adam optimizer over a parameter registry."""

    def __init__(
        self,
        params: Mapping[str, Parameter],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8
    ) -> None:
        self.params = dict(params)
        self.lr     = lr
        self.betas  = betas
        self.eps    = eps
        self.state  = AdamState()

    def step(self) -> None:
        grads = { k: p.grad for k, p in self.params.items() }
        adam_step(self.params, grads, self.state, self.lr, *self.betas, self.eps)

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None


def clip_grad_norm(params: Mapping[str, Parameter], max_norm: float) -> float:
    """Rescale gradients so that their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    grads = [ p.grad for p in params.values() if p.grad is not None ]
    norm = float(np.sqrt(sum(float(np.sum(g.astype(np.float64)**2)) for g in grads)))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm

