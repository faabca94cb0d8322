"""Contrastive training and evaluation.

The batch objective combines a hardest-negative triplet loss and a
symmetric InfoNCE loss, both on the clip-level and on the video-level
similarity matrices. Pairs whose caption and video come from the same
source video are never used as negatives.
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union
import os
import logging
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter
import numpy as np
import pandas as pd
from tqdm.auto import tqdm
from .data_io import Caption, Corpus, save_checkpoint
from .errors import ConfigurationError, ContractViolationError, NumericError
from .model import MamFusion
from .nn import Adam, clip_grad_norm
from .retrieval import MetricsReport, SimilarityWeights, compute_metrics, pair_similarity, search
from .tensorops import Tensor, as_tensor, backward, log_softmax, relu, stack
from .video_encoder import VideoRepr

logger = logging.getLogger(__name__)

PathLike = Union[str, bytes, os.PathLike]

#: Additive logit mask excluding a pair from the negatives.
MASK = -1e4


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings and ablation toggles."""
    lr: float = 1e-3
    margin: float = 0.2
    temperature: float = 0.07
    lambda_triplet: float = 1.0
    lambda_nce: float = 1.0
    batch_size: int = 8
    epochs: int = 200
    seed: int = 0
    grad_clip: float = 1.0
    fast_mode: bool = False
    enable_mamba: bool = True
    enable_ttv: bool = True
    enable_tvt: bool = True
    weights: SimilarityWeights = field(default_factory=SimilarityWeights)
    checkpoint_every: int = 0
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.margin < 0:
            raise ConfigurationError("'margin' cannot be negative")
        if self.temperature <= 0:
            raise ConfigurationError("'temperature' has to be positive")
        if self.lambda_triplet < 0 or self.lambda_nce < 0:
            raise ConfigurationError("loss weights cannot be negative")
        if self.lr < 0:
            raise ConfigurationError("'lr' cannot be negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("'batch_size' has to be positive and 'epochs' nonnegative")
        if self.checkpoint_every < 0:
            raise ConfigurationError("'checkpoint_every' cannot be negative")

    def apply(self, model: MamFusion) -> MamFusion:
        """Set the toggles of ``model``."""
        model.enable_mamba = self.enable_mamba
        model.enable_ttv   = self.enable_ttv
        model.enable_tvt   = self.enable_tvt
        model.fast_mode    = self.fast_mode
        return model


# Loss trace ------------------------------------------------------------------

@dataclass
class LossTrace:
    """Per-epoch mean training loss.

    Only ``epoch`` and ``mean_loss`` are reproducible; ``wall_ms``
    is wall-clock time.
    """
    epochs: List[int] = field(default_factory=list)
    mean_loss: List[float] = field(default_factory=list)
    wall_ms: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def append(self, epoch: int, mean_loss: float, wall_ms: int) -> None:
        if self.epochs and epoch <= self.epochs[-1]:
            raise ContractViolationError(
                f"epochs have to increase, got {epoch} after {self.epochs[-1]}"
            )
        self.epochs.append(int(epoch))
        self.mean_loss.append(float(mean_loss))
        self.wall_ms.append(int(wall_ms))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "epoch": self.epochs,
            "mean_loss": self.mean_loss,
            "wall_ms": self.wall_ms,
        })

    def to_csv(self, path: PathLike) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: PathLike) -> "LossTrace":
        trace = cls()
        for row in pd.read_csv(path, float_precision="round_trip").itertuples(index=False):
            trace.append(row.epoch, row.mean_loss, row.wall_ms)
        return trace

    def epochs_to_reduction(self, fraction: float = 0.95) -> Optional[int]:
        """First epoch whose loss is at most ``(1 - fraction)`` of the first one.

        Returns ``None`` when the reduction is never reached.
        """
        if not 0 < fraction < 1:
            raise ConfigurationError("'fraction' has to lie in (0, 1)")
        if not self.epochs:
            return None
        threshold = (1 - fraction) * self.mean_loss[0]
        for epoch, loss in zip(self.epochs, self.mean_loss):
            if loss <= threshold:
                return epoch
        return None


# Losses ----------------------------------------------------------------------

def triplet_loss(
    s_pos: Union[Tensor, float],
    s_neg: Union[Tensor, float],
    margin: float = 0.2
) -> Tensor:
    """Hinge ``max(0, margin + s_neg - s_pos)`` (element-wise)."""
    if margin < 0:
        raise ConfigurationError("'margin' cannot be negative")
    return relu(margin + as_tensor(s_neg) - as_tensor(s_pos))

def infonce_loss(
    sim: Tensor,
    temperature: float = 0.07,
    mask: Optional[np.ndarray] = None
) -> Tensor:
    """Symmetric InfoNCE over a ``(B, B)`` similarity matrix.

    The diagonal holds the matched pairs. ``mask`` is added to the logits
    and may be used to exclude further pairs from the negatives.
    """
    sim = as_tensor(sim)
    B = sim.shape[0]
    if sim.shape != (B, B) or B < 1:
        raise ContractViolationError(f"similarity matrix has to be square, got {sim.shape}")
    logits = sim * (1 / temperature)
    if mask is not None:
        logits = logits + mask
    diag = (np.arange(B), np.arange(B))
    rows = log_softmax(logits, axis=1)[diag].mean()
    cols = log_softmax(logits, axis=0)[diag].mean()
    return (rows + cols) * -0.5

def hardest_triplet_loss(sim: Tensor, margin: float, mask: np.ndarray) -> Tensor:
    """Triplet loss with the hardest in-batch negative in both directions.

    ``mask`` is ``MASK`` where a pair is not a negative (including the
    diagonal) and zero elsewhere. Rows without negatives contribute 0.
    """
    B = sim.shape[0]
    positive = sim[np.arange(B), np.arange(B)]
    masked = sim + mask
    t2v = triplet_loss(positive, masked.max(axis=1), margin).mean()
    v2t = triplet_loss(positive, masked.max(axis=0), margin).mean()
    return t2v + v2t

def negatives_mask(video_ids: Sequence[str]) -> np.ndarray:
    """``MASK`` for same-video pairs, zero for true negatives."""
    ids = np.asarray(video_ids)
    return np.where(ids[:, None] == ids[None, :], MASK, 0.0)

def similarity_matrices(
    model: MamFusion,
    captions: Sequence[Caption],
    videos: Dict[str, VideoRepr]
) -> Tuple[Tensor, Tensor]:
    """Clip-level and video-level ``(B, B)`` similarity matrices.

    Row ``i`` is caption ``i``, column ``j`` the video of caption ``j``.
    """
    clip_only = SimilarityWeights(1.0, 0.0)
    video_only = SimilarityWeights(0.0, 1.0)
    texts = [ model.encode_text(cap.features) for cap in captions ]
    clip_rows, video_rows = [], []
    for text in texts:
        for cap in captions:
            video = videos[cap.video_id]
            fused = model.fuse(text, video)
            clip_rows.append(pair_similarity(fused, video, clip_only))
            video_rows.append(pair_similarity(fused, video, video_only))
    B = len(captions)
    return stack(clip_rows).reshape(B, B), stack(video_rows).reshape(B, B)

def batch_loss(
    model: MamFusion,
    captions: Sequence[Caption],
    corpus: Corpus,
    config: TrainConfig
) -> Tensor:
    """``lambda_triplet * (clip + video triplet) + lambda_nce * (clip + video InfoNCE)``."""
    videos = {
        vid: model.encode_video(corpus.videos[vid])
        for vid in sorted({ cap.video_id for cap in captions })
    }
    S_clip, S_vid = similarity_matrices(model, captions, videos)
    mask = negatives_mask([ cap.video_id for cap in captions ])
    nce_mask = mask.copy()
    np.fill_diagonal(nce_mask, 0)
    trip = hardest_triplet_loss(S_clip, config.margin, mask) \
        + hardest_triplet_loss(S_vid, config.margin, mask)
    nce = infonce_loss(S_clip, config.temperature, nce_mask) \
        + infonce_loss(S_vid, config.temperature, nce_mask)
    return config.lambda_triplet * trip + config.lambda_nce * nce


# Loops -----------------------------------------------------------------------

def train_epoch(
    model: MamFusion,
    dataset: Corpus,
    config: TrainConfig,
    optimizer: Optional[Adam] = None,
    epoch: int = 0,
    *,
    progress: bool = False
) -> Tuple[MamFusion, float]:
    """One pass over ``dataset`` in batches shuffled with seed ``config.seed + epoch``.

    The toggles of ``config`` are applied to ``model`` first.

    Returns
    -------
    model
        The updated model (the same object).
    mean_loss
        Mean of the batch losses.

    Raises
    ------
    ContractViolationError
        If the dataset has no captions.
    NumericError
        If a batch loss is not finite.
    """
    if not dataset.captions:
        raise ContractViolationError("cannot train on an empty dataset")
    config.apply(model)
    optimizer = optimizer or Adam(model.parameters(), lr=config.lr)
    rng   = np.random.default_rng(config.seed + epoch)
    order = rng.permutation(len(dataset.captions))
    batches = [
        [ dataset.captions[i] for i in order[start:start+config.batch_size] ]
        for start in range(0, len(order), config.batch_size)
    ]
    losses = []
    for batch in tqdm(batches, desc=f"epoch {epoch}", disable=not progress, leave=False):
        optimizer.zero_grad()
        loss = batch_loss(model, batch, dataset, config)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError(f"non-finite training loss {value} in epoch {epoch}")
        backward(loss)
        clip_grad_norm(optimizer.params, config.grad_clip)
        optimizer.step()
        losses.append(value)
    return model, float(np.mean(losses))

def fit(
    model: MamFusion,
    dataset: Corpus,
    config: TrainConfig,
    out: Optional[PathLike] = None,
    *,
    progress: bool = True,
    callback: Optional[Callable[[int, MamFusion], None]] = None
) -> LossTrace:
    """Train for ``config.epochs`` epochs.

    Parameters
    ----------
    out
        Output directory for ``checkpoint.mmck``,
        ``checkpoint_epoch<k>.mmck`` and ``loss_trace.csv``.
        Nothing is written when ``None``.
    callback
        Called with ``(epoch, model)`` after every epoch.
    """
    config.apply(model)
    optimizer = Adam(model.parameters(), lr=config.lr)
    trace = LossTrace()
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)

    pbar = tqdm(range(1, config.epochs + 1), disable=not progress)
    for epoch in pbar:
        start = perf_counter()
        _, mean_loss = train_epoch(model, dataset, config, optimizer, epoch)
        wall_ms = int(round(1000 * (perf_counter() - start)))
        trace.append(epoch, mean_loss, wall_ms)
        pbar.set_description(f"loss {mean_loss:.4f}")
        logger.info("epoch=%d mean_loss=%.6f wall_ms=%d", epoch, mean_loss, wall_ms)
        if out is not None and config.checkpoint_every and epoch % config.checkpoint_every == 0:
            save_checkpoint(model, out/f"checkpoint_epoch{epoch}.mmck")
        if callback is not None:
            callback(epoch, model)

    if out is not None:
        save_checkpoint(model, out/"checkpoint.mmck")
        trace.to_csv(out/"loss_trace.csv")
    return trace

def evaluate(
    model: MamFusion,
    dataset: Corpus,
    weights: SimilarityWeights = SimilarityWeights(),
    *,
    n_jobs: int = 1,
    progress: bool = False
) -> MetricsReport:
    """Use every caption as a query against the whole video corpus."""
    return compute_metrics(search(model, dataset, weights, n_jobs=n_jobs, progress=progress))
