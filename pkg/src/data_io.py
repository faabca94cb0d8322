"""Feature files, corpus manifests, synthetic corpora and checkpoints.

Feature file layout (all integers little-endian)::

    offset  0  magic   b"MMFT"
    offset  4  version u32 (= 1)
    offset  8  rows    u32
    offset 12  cols    u32
    offset 16  payload rows * cols float32, row-major

A manifest is a JSON Lines file with one video record per line::

    {"video_id": ..., "video_feature_path": ...,
     "captions": [{"caption_id": ..., "text_feature_path": ..., "raw_text": ...}]}

Paths are relative to the directory of the manifest.
"""
from typing import Dict, List, Mapping, Optional, Tuple, Union
import os
import io
import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path
import numpy as np
from joblib import Parallel, delayed
from tqdm.auto import tqdm
from .errors import CheckpointError, ConfigurationError, FeatureFileError, ManifestError
from .nn import Module

logger = logging.getLogger(__name__)

PathLike = Union[str, bytes, os.PathLike]

FEATURE_MAGIC = b"MMFT"
FEATURE_VERSION = 1
HEADER_SIZE = 16

CHECKPOINT_MAGIC = b"MMCK"
CHECKPOINT_VERSION = 1
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


# Feature files ---------------------------------------------------------------

def encode_feature_matrix(matrix: np.ndarray) -> bytes:
    """Serialize a finite 2-D matrix as feature file bytes."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise FeatureFileError(f"feature matrix has to be 2-D, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise FeatureFileError("feature matrix contains non-finite values")
    rows, cols = matrix.shape
    header = np.array([FEATURE_VERSION, rows, cols], dtype="<u4").tobytes()
    return FEATURE_MAGIC + header + matrix.astype("<f4").tobytes()

def decode_feature_matrix(raw: bytes) -> np.ndarray:
    """Parse feature file bytes; the header is validated before the payload.

    Raises
    ------
    FeatureFileError
        With the byte offset of the first problem.
    """
    if raw[:4] != FEATURE_MAGIC:
        raise FeatureFileError(f"bad magic {raw[:4]!r}", offset=0)
    if len(raw) < HEADER_SIZE:
        raise FeatureFileError("truncated header", offset=len(raw))
    version, rows, cols = (int(x) for x in np.frombuffer(raw, dtype="<u4", count=3, offset=4))
    if version != FEATURE_VERSION:
        raise FeatureFileError(f"unsupported version {version}", offset=4)
    expected = HEADER_SIZE + 4*rows*cols
    if len(raw) < expected:
        raise FeatureFileError(
            f"truncated payload, expected {expected} bytes, got {len(raw)}",
            offset=len(raw)
        )
    if len(raw) > expected:
        raise FeatureFileError(f"{len(raw) - expected} trailing byte(s)", offset=expected)
    data = np.frombuffer(raw, dtype="<f4", count=rows*cols, offset=HEADER_SIZE)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FeatureFileError("non-finite value", offset=HEADER_SIZE + 4*int(bad[0]))
    return data.reshape(rows, cols).astype(np.float32)

def write_feature_file(path: PathLike, matrix: np.ndarray) -> None:
    Path(path).write_bytes(encode_feature_matrix(matrix))

def read_feature_file(path: PathLike) -> np.ndarray:
    """Read a ``(rows, cols)`` float32 matrix.

    Raises
    ------
    FeatureFileError
        If the file does not exist or is malformed. The message names
        the file and the byte offset.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FeatureFileError(f"cannot read feature file '{path}': {exc}") from exc
    try:
        return decode_feature_matrix(raw)
    except FeatureFileError as exc:
        exc.args = (f"{path}: {exc}",)
        raise


# Manifest --------------------------------------------------------------------

@dataclass
class CaptionRecord:
    caption_id: str
    text_feature_path: str
    raw_text: Optional[str] = None


@dataclass
class VideoRecord:
    video_id: str
    video_feature_path: str
    captions: List[CaptionRecord] = field(default_factory=list)


@dataclass
class Manifest:
    """Validated list of video records.

    Attributes
    ----------
    records
        Video records in file order.
    root
        Directory that relative feature paths are resolved against.
    """
    records: List[VideoRecord]
    root: Path = Path(".")

    def resolve(self, relpath: str) -> Path:
        return self.root/relpath

    def validate(self, check_files: bool = True) -> None:
        """Reject duplicate ids and dangling feature paths.

        Raises
        ------
        ManifestError
        """
        videos, captions = set(), set()
        for rec in self.records:
            if rec.video_id in videos:
                raise ManifestError(f"duplicate video id '{rec.video_id}'")
            videos.add(rec.video_id)
            for cap in rec.captions:
                if cap.caption_id in captions:
                    raise ManifestError(f"duplicate caption id '{cap.caption_id}'")
                captions.add(cap.caption_id)
        if not check_files:
            return
        for rec in self.records:
            paths = [rec.video_feature_path] + [ c.text_feature_path for c in rec.captions ]
            for relpath in paths:
                if not self.resolve(relpath).is_file():
                    raise ManifestError(f"dangling feature path '{relpath}' in video '{rec.video_id}'")


def _parse_record(obj: dict, lineno: int) -> VideoRecord:
    try:
        captions = [
            CaptionRecord(str(c["caption_id"]), str(c["text_feature_path"]), c.get("raw_text"))
            for c in obj.get("captions", [])
        ]
        return VideoRecord(str(obj["video_id"]), str(obj["video_feature_path"]), captions)
    except (KeyError, TypeError, AttributeError) as exc:
        raise ManifestError(f"line {lineno}: missing or invalid field {exc}") from None

def read_manifest(path: PathLike, *, check_files: bool = True) -> Manifest:
    """Read and validate a JSON Lines manifest."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest '{path}': {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ManifestError(f"line {lineno}: expected an object")
        records.append(_parse_record(obj, lineno))
    manifest = Manifest(records, path.parent)
    manifest.validate(check_files)
    return manifest

def write_manifest(manifest: Manifest, path: PathLike) -> None:
    lines = []
    for rec in manifest.records:
        obj = asdict(rec)
        for cap in obj["captions"]:
            if cap["raw_text"] is None:
                del cap["raw_text"]
        lines.append(json.dumps(obj))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# Corpus ----------------------------------------------------------------------

@dataclass
class Caption:
    caption_id: str
    video_id: str
    features: np.ndarray


@dataclass
class Corpus:
    """Feature matrices of a manifest held in memory.

    Attributes
    ----------
    videos
        Frame features ``(M_f, d_vid)`` keyed by video id.
    captions
        Captions (queries) with word features ``(N, d_text)``.
    """
    videos: Dict[str, np.ndarray]
    captions: List[Caption]

    def __len__(self) -> int:
        return len(self.captions)

    @property
    def video_ids(self) -> List[str]:
        return sorted(self.videos)

    @property
    def d_vid(self) -> Optional[int]:
        return next(iter(self.videos.values())).shape[1] if self.videos else None

    @property
    def d_text(self) -> Optional[int]:
        return self.captions[0].features.shape[1] if self.captions else None

    def caption(self, caption_id: str) -> Caption:
        for cap in self.captions:
            if cap.caption_id == caption_id:
                return cap
        raise KeyError(caption_id)


def load_corpus(
    path: PathLike,
    *,
    n_jobs: int = 1,
    progress: bool = False
) -> Corpus:
    """Read a manifest and every feature file it references."""
    manifest = read_manifest(path)
    jobs = [ (rec.video_id, None, rec.video_feature_path) for rec in manifest.records ]
    jobs += [
        (rec.video_id, cap.caption_id, cap.text_feature_path)
        for rec in manifest.records for cap in rec.captions
    ]
    arrays = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(read_feature_file)(manifest.resolve(p))
        for _, _, p in tqdm(jobs, desc="features", disable=not progress)
    )
    videos, captions = {}, []
    for (vid, cid, _), X in zip(jobs, arrays):
        if cid is None:
            videos[vid] = X
        else:
            captions.append(Caption(cid, vid, X))
    _check_widths(videos, captions)
    logger.info("loaded corpus videos=%d captions=%d", len(videos), len(captions))
    return Corpus(videos, captions)

def _check_widths(videos: Mapping[str, np.ndarray], captions: List[Caption]) -> None:
    for what, widths in (
        ("video", { X.shape[1] for X in videos.values() }),
        ("text", { c.features.shape[1] for c in captions }),
    ):
        if len(widths) > 1:
            raise ManifestError(f"inconsistent {what} feature widths {sorted(widths)}")


# Synthetic corpora -----------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic partially relevant corpus.

    Every video hides a latent event in a contiguous span of frames
    covering ``relevant_span`` of its length; the remaining frames are
    background noise. Captions are noisy projections of the same latent.
    """
    n_videos: int = 32
    frames_per_video: Tuple[int, int] = (16, 48)
    caption_len: Tuple[int, int] = (4, 12)
    d_vid: int = 64
    d_text: int = 64
    relevant_span: float = 0.25
    noise_sigma: float = 0.1
    seed: int = 0
    captions_per_video: int = 1
    latent_dim: int = 16

    def __post_init__(self) -> None:
        for name in ("frames_per_video", "caption_len"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ConfigurationError(f"'{name}' has to be a range 1 <= min <= max")
            object.__setattr__(self, name, (int(lo), int(hi)))
        for name in ("n_videos", "d_vid", "d_text", "captions_per_video", "latent_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"'{name}' has to be positive")
        if not 0 < self.relevant_span <= 1:
            raise ConfigurationError("'relevant_span' has to lie in (0, 1]")
        if self.noise_sigma < 0:
            raise ConfigurationError("'noise_sigma' cannot be negative")


def synthesize(spec: SyntheticSpec) -> Tuple[Corpus, Dict[str, Tuple[int, int]]]:
    """Generate a corpus in memory.

    Returns
    -------
    corpus
        Generated features.
    spans
        ``[start, stop)`` of the relevant frames of every video.
    """
    rng = np.random.default_rng(spec.seed)
    k = spec.latent_dim
    P_v = rng.normal(size=(k, spec.d_vid)) / np.sqrt(k)
    P_t = rng.normal(size=(k, spec.d_text)) / np.sqrt(k)

    videos, captions, spans = {}, [], {}
    for i in range(spec.n_videos):
        vid = f"video{i:04d}"
        z = rng.normal(size=k)
        M_f = int(rng.integers(spec.frames_per_video[0], spec.frames_per_video[1] + 1))
        length = max(1, int(round(spec.relevant_span * M_f)))
        start = int(rng.integers(0, M_f - length + 1))
        frames = rng.normal(size=(M_f, spec.d_vid))
        frames[start:start+length] = z @ P_v \
            + spec.noise_sigma * rng.normal(size=(length, spec.d_vid))
        videos[vid] = frames.astype(np.float32)
        spans[vid] = (start, start + length)
        for j in range(spec.captions_per_video):
            N = int(rng.integers(spec.caption_len[0], spec.caption_len[1] + 1))
            words = z @ P_t + spec.noise_sigma * rng.normal(size=(N, spec.d_text))
            captions.append(Caption(f"{vid}_c{j}", vid, words.astype(np.float32)))
    return Corpus(videos, captions), spans

def write_corpus(corpus: Corpus, out: PathLike, progress: bool = False) -> Path:
    """Write feature files and ``manifest.jsonl`` under ``out``."""
    out = Path(out)
    (out/"features"/"video").mkdir(parents=True, exist_ok=True)
    (out/"features"/"text").mkdir(parents=True, exist_ok=True)
    records = {}
    videos = tqdm(corpus.videos.items(), desc="videos", disable=not progress)
    for vid, frames in videos:
        relpath = f"features/video/{vid}.mmft"
        write_feature_file(out/relpath, frames)
        records[vid] = VideoRecord(vid, relpath)
    for cap in corpus.captions:
        relpath = f"features/text/{cap.caption_id}.mmft"
        write_feature_file(out/relpath, cap.features)
        records[cap.video_id].captions.append(CaptionRecord(cap.caption_id, relpath))
    path = out/"manifest.jsonl"
    write_manifest(Manifest(list(records.values()), out), path)
    return path

def generate_synthetic(spec: SyntheticSpec, out: PathLike, progress: bool = False) -> Path:
    """Generate a synthetic corpus on disk and return the manifest path.

    The output is byte-identical for a fixed ``spec``.
    """
    corpus, _ = synthesize(spec)
    path = write_corpus(corpus, out, progress=progress)
    logger.info(
        "wrote synthetic corpus videos=%d captions=%d manifest=%s",
        len(corpus.videos), len(corpus.captions), path
    )
    return path


# Checkpoints -----------------------------------------------------------------

def encode_checkpoint(arrays: Mapping[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(np.array([CHECKPOINT_VERSION, len(arrays)], dtype="<u4").tobytes())
    codes = { v: k for k, v in DTYPE_CODES.items() }
    for name, value in arrays.items():
        value = np.asarray(value)
        dtype = np.dtype(value.dtype).newbyteorder("<")
        if dtype not in codes:
            raise CheckpointError(f"unsupported dtype {value.dtype} of tensor '{name}'")
        encoded = name.encode("utf-8")
        buf.write(np.array([len(encoded)], dtype="<u4").tobytes())
        buf.write(encoded)
        buf.write(np.array([codes[dtype], value.ndim, *value.shape], dtype="<u4").tobytes())
        buf.write(value.astype(dtype).tobytes())
    return buf.getvalue()

def _take_u32(raw: bytes, offset: int, count: int = 1) -> Tuple[List[int], int]:
    end = offset + 4*count
    if end > len(raw):
        raise CheckpointError(f"truncated checkpoint at byte offset {len(raw)}")
    values = np.frombuffer(raw, dtype="<u4", count=count, offset=offset)
    return [ int(v) for v in values ], end

def decode_checkpoint(raw: bytes) -> Dict[str, np.ndarray]:
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint magic {raw[:4]!r} at byte offset 0")
    (version, count), offset = _take_u32(raw, 4, 2)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} at byte offset 4")
    arrays = {}
    for _ in range(count):
        (length,), offset = _take_u32(raw, offset)
        if offset + length > len(raw):
            raise CheckpointError(f"truncated tensor name at byte offset {offset}")
        try:
            name = raw[offset:offset+length].decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"invalid tensor name at byte offset {offset}") from None
        offset += length
        (code, ndim), offset = _take_u32(raw, offset, 2)
        if code not in DTYPE_CODES:
            raise CheckpointError(f"unknown dtype code {code} of tensor '{name}'")
        shape, offset = _take_u32(raw, offset, ndim)
        dtype = DTYPE_CODES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if offset + size > len(raw):
            raise CheckpointError(f"truncated payload of tensor '{name}'")
        arrays[name] = np.frombuffer(raw, dtype=dtype, count=size // dtype.itemsize, offset=offset) \
            .reshape(shape).astype(dtype.newbyteorder("="))
        offset += size
    if offset != len(raw):
        raise CheckpointError(f"trailing bytes at byte offset {offset}")
    return arrays

def save_checkpoint(model: Module, path: PathLike) -> None:
    """Write all parameters of ``model`` under their registry names."""
    Path(path).write_bytes(encode_checkpoint(model.state_arrays()))
    logger.debug("saved checkpoint %s", path)

def read_checkpoint(path: PathLike) -> Dict[str, np.ndarray]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint '{path}': {exc}") from exc
    return decode_checkpoint(raw)

def load_checkpoint(model: Module, path: PathLike) -> Module:
    """Restore parameters of ``model`` bit-exactly from ``path``.

    Raises
    ------
    CheckpointError
        On a missing or unexpected tensor name or a shape mismatch.
    """
    model.load_arrays(read_checkpoint(path))
    return model

