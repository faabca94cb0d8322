"""Similarity scoring, ranking and recall metrics."""
from typing import Dict, List, Mapping, Optional, Sequence, Tuple
import json
import logging
import warnings
from dataclasses import dataclass, field, asdict
import numpy as np
from joblib import Parallel, delayed
from tqdm.auto import tqdm
from .data_io import Corpus
from .errors import ConfigurationError, ContractViolationError, NumericError, ZeroNormWarning
from .fusion import FusedPair
from .model import MamFusion
from .tensorops import Tensor, as_tensor, get_dtype, no_grad, precision, sqrt
from .text_encoder import TextRepr
from .video_encoder import VideoRepr

logger = logging.getLogger(__name__)

RECALL_LEVELS = (1, 5, 10, 100)


# Similarity ------------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityWeights:
    """Weights of the clip-level and video-level cosine similarities."""
    w_clip: float = 0.5
    w_vid: float = 0.5

    def __post_init__(self) -> None:
        if self.w_clip < 0 or self.w_vid < 0:
            raise ConfigurationError("similarity weights cannot be negative")
        if abs(self.w_clip + self.w_vid - 1) > 1e-9:
            raise ConfigurationError(
                f"similarity weights have to sum to 1, got {self.w_clip} + {self.w_vid}"
            )


def cosine(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Cosine similarity of vector ``a`` with vector ``b`` or with every row of ``b``.

    A zero-norm operand gives similarity 0 and a :py:class:`ZeroNormWarning`.
    """
    a, b = as_tensor(a), as_tensor(b)
    single = b.ndim == 1
    B = b.reshape(1, -1) if single else b
    if a.ndim != 1 or B.shape[1] != a.shape[0]:
        raise ContractViolationError(f"cosine: incompatible shapes {a.shape} and {b.shape}")
    dots  = (B @ a.reshape(-1, 1)).reshape(B.shape[0])
    denom = sqrt((a * a).sum()) * sqrt((B * B).sum(axis=1))
    zero  = denom.data <= eps
    if np.any(zero):
        warnings.warn("cosine similarity of a zero-norm vector", ZeroNormWarning)
        denom = denom + zero.astype(denom.dtype)
    out = dots / denom
    return out.reshape(()) if single else out

def pair_similarity(
    fused: FusedPair,
    video: VideoRepr,
    weights: SimilarityWeights = SimilarityWeights()
) -> Tensor:
    """``w_clip * max_i cos(q', V_c[i]) + w_vid * cos(q', V_v)``."""
    q = fused.q_prime
    clip_score = cosine(q, video.V_c).max()
    return weights.w_clip * clip_score + weights.w_vid * cosine(q, video.V_v)


# Ranking ---------------------------------------------------------------------

@dataclass
class RetrievalResult:
    """Ranked corpus for one query.

    ``ranking`` holds ``(video_id, score)`` pairs with non-increasing
    scores; ties are ordered by ascending video id.
    """
    query_id: str
    ranking: List[Tuple[str, float]]
    target_id: str

    @property
    def target_rank(self) -> Optional[int]:
        """1-based rank of the target video (``None`` if absent)."""
        for i, (vid, _) in enumerate(self.ranking, start=1):
            if vid == self.target_id:
                return i
        return None


def sort_scores(scores: Mapping[str, float]) -> List[Tuple[str, float]]:
    """Order ``(id, score)`` pairs by descending score, then ascending id."""
    bad = [ k for k, s in scores.items() if not np.isfinite(s) ]
    if bad:
        raise NumericError(f"non-finite similarity for video(s) {', '.join(sorted(bad))}")
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))

def rank(
    model: MamFusion,
    query: TextRepr,
    corpus: Mapping[str, VideoRepr],
    *,
    query_id: str = "",
    target_id: str = "",
    weights: SimilarityWeights = SimilarityWeights()
) -> RetrievalResult:
    """Score ``query`` against every encoded video and rank the corpus.

    Raises
    ------
    ContractViolationError
        If the corpus is empty.
    """
    if not corpus:
        raise ContractViolationError("cannot rank against an empty corpus")
    with no_grad():
        scores = {
            vid: pair_similarity(model.fuse(query, video), video, weights).item()
            for vid, video in corpus.items()
        }
    return RetrievalResult(query_id, sort_scores(scores), target_id)

def _rank_in_thread(dtype_name, model, query, corpus, query_id, target_id, weights):
    # Numeric settings are thread-local
    with precision(dtype_name):
        return rank(
            model, query, corpus,
            query_id=query_id, target_id=target_id, weights=weights
        )

def search(
    model: MamFusion,
    corpus: Corpus,
    weights: SimilarityWeights = SimilarityWeights(),
    *,
    n_jobs: int = 1,
    progress: bool = False
) -> List[RetrievalResult]:
    """Use every caption as a query against all videos of ``corpus``.

    Videos and captions are encoded once; pair scoring runs in ``n_jobs``
    threads.
    """
    if not corpus.captions:
        raise ContractViolationError("corpus has no captions")
    with no_grad():
        videos = {
            vid: model.encode_video(corpus.videos[vid])
            for vid in tqdm(corpus.video_ids, desc="videos", disable=not progress)
        }
        texts = [ model.encode_text(cap.features) for cap in corpus.captions ]
    dtype_name = np.dtype(get_dtype()).name
    results = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_rank_in_thread)(
            dtype_name, model, text, videos, cap.caption_id, cap.video_id, weights
        )
        for cap, text in tqdm(
            list(zip(corpus.captions, texts)), desc="queries", disable=not progress
        )
    )
    logger.debug("ranked %d queries against %d videos", len(results), len(videos))
    return results


# Metrics ---------------------------------------------------------------------

def recall_at_k(results: Sequence[RetrievalResult], K: int) -> float:
    """Percentage of queries whose target is among the first ``K`` results."""
    if K < 1:
        raise ConfigurationError("K has to be positive")
    if not results:
        raise ContractViolationError("no retrieval results")
    hits = sum(
        any(vid == r.target_id for vid, _ in r.ranking[:K])
        for r in results
    )
    return 100 * hits / len(results)


@dataclass(frozen=True)
class MetricsReport:
    """Recall percentages and their sum."""
    r1: float
    r5: float
    r10: float
    r100: float
    sum_r: float = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "sum_r", self.r1 + self.r5 + self.r10 + self.r100)

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    def to_json(self, **extra: str) -> str:
        return json.dumps({**extra, **self.to_dict()})

    def table_row(self, label: str = "") -> str:
        """LaTeX-style row ``label & R@1 & R@5 & R@10 & R@100 & SumR``."""
        cells = [ f"{v:.1f}" for v in self.to_dict().values() ]
        return " & ".join([label, *cells] if label else cells) + r" \\"

    def to_text(self, label: str = "") -> str:
        """Flat ``key=value`` lines."""
        lines = [ f"{k}={v!r}" for k, v in self.to_dict().items() ]
        if label:
            lines.insert(0, f"label={label}")
        lines.append(f"row={self.table_row(label)}")
        return "\n".join(lines) + "\n"


def sum_r(report: MetricsReport) -> float:
    return report.r1 + report.r5 + report.r10 + report.r100

def compute_metrics(results: Sequence[RetrievalResult]) -> MetricsReport:
    return MetricsReport(*(recall_at_k(results, K) for K in RECALL_LEVELS))
