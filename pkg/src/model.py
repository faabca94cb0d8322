"""Composite retrieval model and its ablation toggles."""
from typing import Dict, FrozenSet, Optional, Tuple
from dataclasses import dataclass, field
import numpy as np
from .errors import ConfigurationError
from .fusion import FusedPair, TemporalFusion
from .gmmformer import INF, GaussianBlockConfig
from .nn import Module
from .ssm import SsmConfig
from .tensorops import Tensor
from .text_encoder import TextEncoder, TextRepr
from .video_encoder import VideoEncoder, VideoRepr

COMPONENTS = ("mamba", "ttv", "tvt")

#: Named ablation variants mapped onto the disabled components.
VARIANTS: Dict[str, FrozenSet[str]] = {
    "full": frozenset(),
    "w/o mamba": frozenset({"mamba"}),
    "w/o tvt": frozenset({"tvt"}),
    "w/o ttv": frozenset({"ttv"}),
    "w/o both fusions": frozenset({"ttv", "tvt"}),
    "gmmformer baseline": frozenset({"mamba", "ttv", "tvt"}),
}


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of :py:class:`MamFusion`.

    ``ffn_width`` defaults to ``4 * d``.
    """
    d_text: int = 1024
    d_vid: int = 1024
    d: int = 64
    heads: int = 4
    ffn_width: Optional[int] = None
    max_words: int = 64
    max_frames: int = 128
    clip_count: int = 32
    variances: Tuple[float, ...] = (0.5, 1.0, 5.0, INF)
    d_state: int = 16
    d_conv: int = 4
    expand: int = 2
    ssm_layers: int = 1
    scan_method: str = "sequential"
    disabled: FrozenSet[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "disabled", frozenset(self.disabled))
        unknown = self.disabled - set(COMPONENTS)
        if unknown:
            raise ConfigurationError(f"unknown component(s) {sorted(unknown)}")
        for name in ("d_text", "d_vid", "d", "max_words", "max_frames", "clip_count"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"'{name}' has to be positive")
        # Fail early on invalid nested settings
        self.block_config
        self.ssm_config

    @property
    def block_config(self) -> GaussianBlockConfig:
        return GaussianBlockConfig(
            variances=self.variances,
            heads=self.heads,
            d=self.d,
            ffn_width=self.ffn_width or 4*self.d
        )

    @property
    def ssm_config(self) -> SsmConfig:
        return SsmConfig(
            d_state=self.d_state,
            d_conv=self.d_conv,
            expand=self.expand,
            d=self.d,
            scan_method=self.scan_method
        )


class MamFusion(Module):
    """Text encoder, dual-branch video encoder and temporal fusion.

    Parameters
    ----------
    config
        Architecture.
    seed
        Seed of the parameter initialization.

    Attributes
    ----------
    fast_mode
        Score with unfused sentence vectors.
    """

    def __init__(self, config: ModelConfig, seed: int = 0) -> None:
        rng = np.random.default_rng(seed)
        bc  = config.block_config
        self.config = config
        self.text_encoder = TextEncoder(
            config.d_text, config.d, config.heads, bc.ffn_width, config.max_words, rng
        )
        self.video_encoder = VideoEncoder(
            config.d_vid, config.clip_count, config.max_frames,
            bc, config.ssm_config, rng, ssm_layers=config.ssm_layers
        )
        self.fusion = TemporalFusion(config.d, config.heads, rng)
        self.fast_mode = False
        self.disable(*config.disabled)

    # Toggles

    @property
    def enable_mamba(self) -> bool:
        return self.video_encoder.mamba_enabled

    @enable_mamba.setter
    def enable_mamba(self, value: bool) -> None:
        self.video_encoder.mamba_enabled = value

    @property
    def enable_ttv(self) -> bool:
        return self.fusion.enable_ttv

    @enable_ttv.setter
    def enable_ttv(self, value: bool) -> None:
        self.fusion.enable_ttv = value

    @property
    def enable_tvt(self) -> bool:
        return self.fusion.enable_tvt

    @enable_tvt.setter
    def enable_tvt(self, value: bool) -> None:
        self.fusion.enable_tvt = value

    def disable(self, *components: str) -> "MamFusion":
        """Switch off ``"mamba"``, ``"ttv"`` and/or ``"tvt"``."""
        for name in components:
            if name not in COMPONENTS:
                raise ConfigurationError(f"unknown component '{name}'")
            setattr(self, f"enable_{name}", False)
        return self

    # Forward

    def encode_text(self, word_feats: Tensor) -> TextRepr:
        return self.text_encoder(word_feats)

    def encode_video(self, frames: Tensor) -> VideoRepr:
        return self.video_encoder(frames)

    def fuse(self, text: TextRepr, video: VideoRepr) -> FusedPair:
        """Fuse a pair; in fast mode the unfused representations are passed on."""
        if self.fast_mode:
            return FusedPair(video.V_fm, text.Q, None, None, text.q)
        return self.fusion(text, video, self.text_encoder.w)

    def forward(self, text: TextRepr, video: VideoRepr) -> FusedPair:
        return self.fuse(text, video)
