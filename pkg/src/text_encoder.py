"""Caption encoder.

Word features are projected to the shared width, enriched with learned
positional embeddings and contextualized by a single transformer layer.
The sentence vector is an attention-pooled mix of the word rows.
"""
from typing import NamedTuple, Tuple
import numpy as np
from .errors import DimensionError, SequenceLengthError
from .nn import Linear, Module, TransformerLayer, uniform
from .tensorops import Parameter, Tensor, as_tensor, relu, softmax


class TextRepr(NamedTuple):
    """Encoded caption.

    Attributes
    ----------
    Q
        Contextual word features ``(N, d)``.
    q
        Pooled sentence vector ``(d,)``.
    alpha_q
        Pooling weights ``(N,)``.
    """
    Q: Tensor
    q: Tensor
    alpha_q: Tensor


def attention_pool(X: Tensor, w: Tensor) -> Tuple[Tensor, Tensor]:
    """Pool rows of ``X`` with weights ``softmax(w @ X.T)``.

    Parameters
    ----------
    X
        Sequence of shape ``(L, d)`` with ``L >= 1``.
    w
        Scoring vector of shape ``(1, d)``.

    Returns
    -------
    vec
        Weighted sum of rows ``(d,)``.
    alpha
        Weights ``(L,)`` on the probability simplex.
    """
    X = as_tensor(X)
    L, d = X.shape
    alpha = softmax((X @ w.T).reshape(L))
    vec = (alpha.reshape(1, L) @ X).reshape(d)
    return vec, alpha


class TextEncoder(Module):
    """Map ``(N, d_text)`` word features to a :py:class:`TextRepr`.

    Attributes
    ----------
    fc
        Input projection ``d_text -> d`` followed by ReLU.
    pos_emb
        Learned positional embeddings ``(max_words, d)``, zero at init.
    layer
        Transformer encoder layer.
    w
        Pooling vector ``(1, d)``; also pools fused word features.
    """

    def __init__(
        self,
        d_text: int,
        d: int,
        heads: int,
        ffn_width: int,
        max_words: int,
        rng: np.random.Generator
    ) -> None:
        self.d_text    = d_text
        self.max_words = max_words
        self.fc      = Linear(d_text, d, rng)
        self.pos_emb = Parameter(np.zeros((max_words, d)))
        self.layer   = TransformerLayer(d, heads, ffn_width, rng)
        self.w       = Parameter(uniform(rng, (1, d), 1 / np.sqrt(d)))

    def forward(self, word_feats: Tensor) -> TextRepr:
        word_feats = as_tensor(word_feats)
        if word_feats.ndim != 2 or word_feats.shape[1] != self.d_text:
            raise DimensionError(
                f"expected word features of shape (N, {self.d_text}), "
                f"got {word_feats.shape}"
            )
        N = word_feats.shape[0]
        if N < 1:
            raise DimensionError("caption has no words")
        if N > self.max_words:
            raise SequenceLengthError(
                f"caption has {N} words, the maximum is {self.max_words}"
            )
        X = relu(self.fc(word_feats)) + self.pos_emb[:N]
        Q, _ = self.layer(X)
        q, alpha = attention_pool(Q, self.w)
        return TextRepr(Q, q, alpha)
