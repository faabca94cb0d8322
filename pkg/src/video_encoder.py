"""Dual-branch video encoder.

The clip branch averages consecutive frames into a fixed number of clips,
the video branch keeps frame resolution and attention-pools a single
video vector. Both branches run two Gaussian attention blocks followed by
a stack of selective state space blocks.
"""
from typing import List, NamedTuple, Optional, Tuple
import numpy as np
from .errors import ConfigurationError, DimensionError, EmptyVideoError
from .gmmformer import GaussianBlockConfig, GMMFormerBlock
from .nn import Linear, Module, uniform
from .ssm import MambaBlock, SsmConfig
from .tensorops import Parameter, Tensor, as_tensor, relu
from .text_encoder import attention_pool

AttentionMaps = List[List[Tensor]]


class VideoRepr(NamedTuple):
    """Encoded video.

    Attributes
    ----------
    V_c
        Clip embeddings ``(M_c, d)``.
    V_f
        Frame-level contextual features ``(M_f, d)``; the sequence
        the video vector is pooled from (equal to ``V_fm``).
    V_fg
        Output of the Gaussian blocks ``(M_f, d)``.
    V_fm
        Output of the state space blocks ``(M_f, d)``.
    V_v
        Pooled video vector ``(d,)``.
    alpha_f
        Pooling weights ``(M_f,)``.
    clip_maps, frame_maps
        Attention weights per Gaussian block and variance.
    """
    V_f: Tensor
    V_fg: Tensor
    V_fm: Tensor
    V_v: Tensor
    alpha_f: Tensor
    frame_maps: AttentionMaps
    V_c: Optional[Tensor] = None
    clip_maps: Optional[AttentionMaps] = None


def pooling_matrix(M_f: int, M_c: int) -> np.ndarray:
    """Row-stochastic ``(M_c, M_f)`` matrix averaging contiguous segments.

    Segment ``i`` spans ``[floor(i*M_f/M_c), floor((i+1)*M_f/M_c))``.
    An empty segment (only when ``M_f < M_c``) takes the single frame at
    its start, clamped to the last frame.
    """
    if M_f < 1:
        raise EmptyVideoError("video has no frames")
    if M_c < 1:
        raise ConfigurationError("number of clips has to be positive")
    P = np.zeros((M_c, M_f))
    for i in range(M_c):
        start = i * M_f // M_c
        stop  = (i + 1) * M_f // M_c
        if stop <= start:
            P[i, min(start, M_f - 1)] = 1
        else:
            P[i, start:stop] = 1 / (stop - start)
    return P

def sample_clips(frames: Tensor, M_c: int) -> Tensor:
    """Average consecutive frames ``(M_f, D)`` into ``M_c`` clips ``(M_c, D)``.

    Raises
    ------
    EmptyVideoError
        If there are no frames.
    """
    frames = as_tensor(frames)
    P = pooling_matrix(frames.shape[0], M_c)
    if frames.shape[0] == M_c:
        return frames
    return Tensor(P, dtype=frames.dtype) @ frames


class _Branch(Module):

    def __init__(
        self,
        d_vid: int,
        length: int,
        block_config: GaussianBlockConfig,
        ssm_config: SsmConfig,
        ssm_layers: int,
        rng: np.random.Generator
    ) -> None:
        d = block_config.d
        self.fc      = Linear(d_vid, d, rng)
        self.pos_emb = Parameter(np.zeros((length, d)))
        self.blocks  = [ GMMFormerBlock(block_config, rng) for _ in range(2) ]
        self.mamba   = [ MambaBlock(ssm_config, rng) for _ in range(ssm_layers) ]

    def forward(self, X: Tensor) -> Tuple[Tensor, Tensor, AttentionMaps]:
        X = relu(self.fc(X)) + self.pos_emb[:X.shape[0]]
        maps = []
        for block in self.blocks:
            X, weights = block(X)
            maps.append(weights)
        gaussian = X
        for block in self.mamba:
            X = block(X)
        return gaussian, X, maps


class VideoEncoder(Module):
    """Map ``(M_f, d_vid)`` frame features to a :py:class:`VideoRepr`.

    Videos longer than ``max_frames`` are first averaged down to
    ``max_frames`` segments.
    """

    def __init__(
        self,
        d_vid: int,
        clip_count: int,
        max_frames: int,
        block_config: GaussianBlockConfig,
        ssm_config: SsmConfig,
        rng: np.random.Generator,
        ssm_layers: int = 1
    ) -> None:
        if clip_count < 1 or max_frames < 1:
            raise ConfigurationError("'clip_count' and 'max_frames' have to be positive")
        if ssm_layers < 0:
            raise ConfigurationError("'ssm_layers' cannot be negative")
        self.d_vid      = d_vid
        self.clip_count = clip_count
        self.max_frames = max_frames
        self.clip  = _Branch(d_vid, clip_count, block_config, ssm_config, ssm_layers, rng)
        self.frame = _Branch(d_vid, max_frames, block_config, ssm_config, ssm_layers, rng)
        self.w     = Parameter(uniform(rng, (1, block_config.d), 1 / np.sqrt(block_config.d)))

    @property
    def mamba_enabled(self) -> bool:
        return all(b.enabled for b in self.clip.mamba + self.frame.mamba)

    @mamba_enabled.setter
    def mamba_enabled(self, value: bool) -> None:
        for block in self.clip.mamba + self.frame.mamba:
            block.enabled = value

    def _check(self, frames: Tensor) -> Tensor:
        frames = as_tensor(frames)
        if frames.ndim != 2 or frames.shape[1] != self.d_vid:
            raise DimensionError(
                f"expected frame features of shape (M_f, {self.d_vid}), got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise EmptyVideoError("video has no frames")
        return frames

    def encode_clip_branch(self, frames: Tensor) -> Tuple[Tensor, AttentionMaps]:
        """Clip embeddings ``(clip_count, d)`` and Gaussian attention maps."""
        frames = self._check(frames)
        _, V_c, maps = self.clip(sample_clips(frames, self.clip_count))
        return V_c, maps

    def encode_video_branch(self, frames: Tensor) -> VideoRepr:
        """Frame-resolution features and the pooled video vector.

        The clip fields of the result are left empty.
        """
        frames = self._check(frames)
        if frames.shape[0] > self.max_frames:
            frames = sample_clips(frames, self.max_frames)
        V_fg, V_fm, maps = self.frame(frames)
        V_v, alpha = attention_pool(V_fm, self.w)
        return VideoRepr(V_fm, V_fg, V_fm, V_v, alpha, maps)

    def forward(self, frames: Tensor) -> VideoRepr:
        V_c, clip_maps = self.encode_clip_branch(frames)
        return self.encode_video_branch(frames)._replace(V_c=V_c, clip_maps=clip_maps)
