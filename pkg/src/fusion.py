"""Bidirectional temporal fusion of a caption and a video.

Text-to-video fusion conditions the frame sequence on the sentence vector,
video-to-text fusion then lets every word attend over the conditioned
frames. Both are residual, so zeroed value projections leave the inputs
unchanged.
"""
from typing import NamedTuple, Tuple
import numpy as np
from .nn import Module, MultiHeadAttention
from .tensorops import Tensor
from .text_encoder import TextRepr, attention_pool
from .video_encoder import VideoRepr


class FusedPair(NamedTuple):
    """Pair-specific fused representations.

    Attributes
    ----------
    V_ft
        Text-conditioned frame features ``(M_f, d)``.
    Q_prime
        Video-conditioned word features ``(N, d)``.
    ttv_weights
        Text-to-video attention weights ``(heads, M_f, 1)``.
    tvt_weights
        Video-to-text attention weights ``(heads, N, M_f)``.
    q_prime
        Pooled fused sentence vector ``(d,)``.
    """
    V_ft: Tensor
    Q_prime: Tensor
    ttv_weights: Tensor
    tvt_weights: Tensor
    q_prime: Tensor


class TemporalFusion(Module):
    """Two attention modules and their toggles.

    Disabling a direction (``enable_ttv`` / ``enable_tvt``) passes its
    input through unchanged.
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator) -> None:
        self.ttv = MultiHeadAttention(d, heads, rng)
        self.tvt = MultiHeadAttention(d, heads, rng)
        self.enable_ttv = True
        self.enable_tvt = True

    def ttv_fuse(self, V_fm: Tensor, q: Tensor) -> Tuple[Tensor, Tensor]:
        """``V_ft = V_fm + attention(V_fm, q, q)`` with a length-one key axis."""
        kv = q.reshape(1, q.shape[0])
        out, weights = self.ttv(V_fm, kv, kv)
        return V_fm + out, weights

    def tvt_fuse(self, Q: Tensor, V_ft: Tensor) -> Tuple[Tensor, Tensor]:
        """``Q' = Q + attention(Q, V_ft, V_ft)``."""
        out, weights = self.tvt(Q, V_ft, V_ft)
        return Q + out, weights

    def forward(self, text: TextRepr, video: VideoRepr, w: Tensor) -> FusedPair:
        """Fuse a pair; ``w`` is the text encoder's pooling vector."""
        if self.enable_ttv:
            V_ft, ttv_weights = self.ttv_fuse(video.V_fm, text.q)
        else:
            V_ft, ttv_weights = video.V_fm, None
        if self.enable_tvt:
            Q_prime, tvt_weights = self.tvt_fuse(text.Q, V_ft)
            q_prime, _ = attention_pool(Q_prime, w)
        else:
            Q_prime, tvt_weights, q_prime = text.Q, None, text.q
        return FusedPair(V_ft, Q_prime, ttv_weights, tvt_weights, q_prime)

    fuse_pair = forward
