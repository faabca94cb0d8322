"""Plain-text run configuration.

Configuration files hold one ``key = value`` pair per line; ``#`` starts
a comment. A ``preset`` line fills in the feature widths of a published
benchmark and explicit keys override it regardless of their position::

    preset = charades
    d = 64
    variances = 0.5, 1, 5, inf
    enable_mamba = yes
"""
from typing import Any, Callable, Dict, Optional, Tuple, Union
import os
import math
from dataclasses import dataclass, field
from pathlib import Path
from .data_io import SyntheticSpec
from .errors import ConfigurationError
from .model import ModelConfig
from .retrieval import SimilarityWeights
from .tensorops import PRECISIONS
from .training import TrainConfig

PathLike = Union[str, bytes, os.PathLike]

#: Feature widths (text, video) of the benchmark feature sets.
PRESETS: Dict[str, Dict[str, int]] = {
    "activitynet": {"d_text": 1024, "d_vid": 1024},
    "charades": {"d_text": 1024, "d_vid": 1024},
    "tvr": {"d_text": 768, "d_vid": 3072},
}

TRUE  = {"true", "yes", "1", "on"}
FALSE = {"false", "no", "0", "off"}


# Value parsers ---------------------------------------------------------------

def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in TRUE:
        return True
    if v in FALSE:
        return False
    raise ValueError(f"not a boolean: {value!r}")

def parse_float(value: str) -> float:
    x = float(value)
    if math.isnan(x):
        raise ValueError("NaN is not allowed")
    return x

def parse_variances(value: str) -> Tuple[float, ...]:
    return tuple(
        math.inf if v.strip().lower() in ("inf", "infinity", "∞") else parse_float(v)
        for v in value.split(",")
    )

def parse_range(value: str) -> Tuple[int, int]:
    parts = [ int(v) for v in value.split(",") ]
    if len(parts) == 1:
        return parts[0], parts[0]
    if len(parts) != 2:
        raise ValueError("expected 'min, max'")
    return parts[0], parts[1]

def parse_optional_int(value: str) -> Optional[int]:
    return None if value.strip().lower() in ("", "none", "auto") else int(value)

def parse_key_values(text: str, source: str = "<config>") -> Dict[str, Tuple[str, int]]:
    """Split ``key = value`` lines into ``{key: (value, line number)}``.

    Raises
    ------
    ConfigurationError
        On malformed lines and duplicate keys.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        if key in out:
            raise ConfigurationError(
                f"{source}:{lineno}: duplicate key '{key}' (first set on line {out[key][1]})"
            )
        out[key] = (value.strip(), lineno)
    return out

def _convert(
    pairs: Dict[str, Tuple[str, int]],
    schema: Dict[str, Callable[[str], Any]],
    source: str
) -> Dict[str, Any]:
    values = {}
    for key, (value, lineno) in pairs.items():
        if key not in schema:
            raise ConfigurationError(f"{source}:{lineno}: unknown key '{key}'")
        try:
            values[key] = schema[key](value)
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(
                f"{source}:{lineno}: invalid value for '{key}': {value!r} ({exc})"
            ) from None
    return values


# Run configuration -----------------------------------------------------------

MODEL_KEYS: Dict[str, Callable[[str], Any]] = {
    "d_text": int, "d_vid": int, "d": int, "heads": int,
    "ffn_width": parse_optional_int, "max_words": int, "max_frames": int,
    "clip_count": int, "variances": parse_variances, "d_state": int,
    "d_conv": int, "expand": int, "ssm_layers": int, "scan_method": str,
}
TRAIN_KEYS: Dict[str, Callable[[str], Any]] = {
    "lr": parse_float, "margin": parse_float, "temperature": parse_float,
    "lambda_triplet": parse_float, "lambda_nce": parse_float,
    "batch_size": int, "epochs": int, "seed": int, "grad_clip": parse_float,
    "fast_mode": parse_bool, "enable_mamba": parse_bool,
    "enable_ttv": parse_bool, "enable_tvt": parse_bool,
    "checkpoint_every": int, "n_jobs": int,
}
WEIGHT_KEYS: Dict[str, Callable[[str], Any]] = {
    "w_clip": parse_float, "w_vid": parse_float,
}
RUN_KEYS: Dict[str, Callable[[str], Any]] = {
    "preset": str, "precision": str, "debug": parse_bool,
    "data": str, "out": str,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs besides its input files."""
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    precision: str = "float32"
    debug: bool = False
    data: Optional[str] = None
    out: Optional[str] = None

    def __post_init__(self) -> None:
        if self.precision not in PRECISIONS:
            raise ConfigurationError(f"unknown precision '{self.precision}'")

    @property
    def weights(self) -> SimilarityWeights:
        return self.train.weights

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "RunConfig":
        """Parse and validate a configuration.

        Raises
        ------
        ConfigurationError
            Naming the line and key of the offending entry.
        """
        schema = { **MODEL_KEYS, **TRAIN_KEYS, **WEIGHT_KEYS, **RUN_KEYS }
        values = _convert(parse_key_values(text, source), schema, source)
        preset = values.pop("preset", None)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigurationError(
                    f"{source}: unknown preset '{preset}', "
                    f"choose from {', '.join(PRESETS)}"
                )
            values = { **PRESETS[preset], **values }
        def pick(keys):
            return { k: v for k, v in values.items() if k in keys }
        try:
            weights = SimilarityWeights(**pick(WEIGHT_KEYS))
            return cls(
                model=ModelConfig(**pick(MODEL_KEYS)),
                train=TrainConfig(weights=weights, **pick(TRAIN_KEYS)),
                **pick(RUN_KEYS)
            )
        except ConfigurationError as exc:
            raise ConfigurationError(f"{source}: {exc}") from None

    @classmethod
    def from_file(cls, path: PathLike) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read configuration '{path}': {exc}") from exc
        return cls.from_text(text, str(path))


# Synthetic corpus specification ----------------------------------------------

SYNTHETIC_KEYS: Dict[str, Callable[[str], Any]] = {
    "n_videos": int, "frames_per_video": parse_range, "caption_len": parse_range,
    "d_vid": int, "d_text": int, "relevant_span": parse_float,
    "noise_sigma": parse_float, "seed": int, "captions_per_video": int,
    "latent_dim": int,
}

def read_synthetic_spec(path: PathLike) -> SyntheticSpec:
    """Read a :py:class:`SyntheticSpec` from a ``key = value`` file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read specification '{path}': {exc}") from exc
    values = _convert(parse_key_values(text, str(path)), SYNTHETIC_KEYS, str(path))
    try:
        return SyntheticSpec(**values)
    except ConfigurationError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
