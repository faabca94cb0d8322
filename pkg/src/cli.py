"""Command-line interface.

Exit codes: ``0`` success, ``2`` usage or configuration error,
``3`` data error, ``4`` numeric failure.
"""
from typing import List, Optional, Sequence, Union
import os
import sys
import json
import logging
from dataclasses import replace
from pathlib import Path
import numpy as np
import pandas as pd
from ._argparse import get_cli_parser
from .config import RunConfig, read_synthetic_spec
from .data_io import Corpus, generate_synthetic, load_checkpoint, load_corpus
from .errors import (
    ConfigurationError,
    DataError,
    ManifestError,
    MamFusionError,
    NumericError,
)
from .model import MamFusion
from .tensorops import debug_mode, no_grad, precision
from .training import evaluate, fit
from .utils import to_grayscale

logger = logging.getLogger(__name__)

PathLike = Union[str, bytes, os.PathLike]

EXIT_OK      = 0
EXIT_USAGE   = 2
EXIT_DATA    = 3
EXIT_NUMERIC = 4

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


# Heatmap export --------------------------------------------------------------

def write_heatmap_csv(path: PathLike, weights: np.ndarray) -> None:
    """Write a weight matrix as CSV with round-trip precision."""
    pd.DataFrame(np.asarray(weights, dtype=np.float64)) \
        .to_csv(path, header=False, index=False, float_format="%.17g")

def write_pgm(path: PathLike, weights: np.ndarray) -> None:
    """Write a binary (P5) portable graymap, rows scaled to their maxima."""
    gray = to_grayscale(weights)
    rows, cols = gray.shape
    Path(path).write_bytes(f"P5\n{cols} {rows}\n255\n".encode("ascii") + gray.tobytes())

def select_head(weights: np.ndarray, head: Optional[int] = None) -> np.ndarray:
    """Average ``(heads, rows, cols)`` weights over heads or pick one head."""
    if head is None:
        return weights.mean(axis=0)
    if not 0 <= head < weights.shape[0]:
        raise ConfigurationError(f"head {head} out of range [0, {weights.shape[0]})")
    return weights[head]

def export_heatmaps(
    model: MamFusion,
    corpus: Corpus,
    caption_id: str,
    video_id: str,
    stem: PathLike,
    head: Optional[int] = None
) -> List[Path]:
    """Write ``<stem>_tvt`` (N x M_f) and ``<stem>_ttv`` (M_f x 1) maps."""
    try:
        caption = corpus.caption(caption_id)
    except KeyError:
        raise ManifestError(f"unknown caption id '{caption_id}'") from None
    if video_id not in corpus.videos:
        raise ManifestError(f"unknown video id '{video_id}'")
    with no_grad():
        text  = model.encode_text(caption.features)
        video = model.encode_video(corpus.videos[video_id])
        fused = model.fusion(text, video, model.text_encoder.w)
    if fused.tvt_weights is None or fused.ttv_weights is None:
        raise ConfigurationError("heatmaps need both temporal fusions enabled")

    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, weights in (("tvt", fused.tvt_weights), ("ttv", fused.ttv_weights)):
        W = select_head(weights.data, head)
        csv = stem.with_name(f"{stem.name}_{name}.csv")
        pgm = stem.with_name(f"{stem.name}_{name}.pgm")
        write_heatmap_csv(csv, W)
        write_pgm(pgm, W)
        paths += [csv, pgm]
    return paths


# Commands --------------------------------------------------------------------

def _check_widths(config: RunConfig, corpus: Corpus) -> None:
    if corpus.d_vid not in (None, config.model.d_vid) \
            or corpus.d_text not in (None, config.model.d_text):
        raise ConfigurationError(
            f"corpus feature widths (text={corpus.d_text}, video={corpus.d_vid}) "
            f"do not match configuration (text={config.model.d_text}, video={config.model.d_vid})"
        )

def _load(config: RunConfig, data: Optional[PathLike], quiet: bool) -> Corpus:
    data = data or config.data
    if data is None:
        raise ConfigurationError("no corpus manifest, pass --data or set 'data' in the configuration")
    corpus = load_corpus(data, n_jobs=config.train.n_jobs, progress=not quiet)
    _check_widths(config, corpus)
    return corpus

def cmd_synth(args, config: Optional[RunConfig] = None) -> int:
    path = generate_synthetic(read_synthetic_spec(args.spec), args.out, progress=not args.quiet)
    print(json.dumps({"manifest": str(path)}))
    return EXIT_OK

def cmd_train(args, config: RunConfig) -> int:
    if args.seed is not None:
        config = replace(config, train=replace(config.train, seed=args.seed))
    corpus = _load(config, args.data, args.quiet)
    out = args.out or config.out
    if out is None:
        raise ConfigurationError("no output directory, pass --out or set 'out' in the configuration")
    model  = MamFusion(config.model, seed=config.train.seed)
    trace  = fit(model, corpus, config.train, out, progress=not args.quiet)
    print(json.dumps({
        "epochs": len(trace),
        "final_loss": trace.mean_loss[-1] if len(trace) else None,
        "epochs_to_95": trace.epochs_to_reduction(0.95),
        "checkpoint": str(Path(out)/"checkpoint.mmck"),
    }))
    return EXIT_OK

def cmd_eval(args, config: RunConfig) -> int:
    corpus = _load(config, args.data, args.quiet)
    model  = load_checkpoint(MamFusion(config.model), args.checkpoint)
    config.train.apply(model)
    model.fast_mode = model.fast_mode or args.fast_mode
    model.disable(*args.disable)
    report = evaluate(
        model, corpus, config.weights,
        n_jobs=config.train.n_jobs, progress=not args.quiet
    )
    path = Path(args.report) if args.report else Path(args.checkpoint).parent/"report.txt"
    path.write_text(report.to_text(args.label), encoding="utf-8")
    print(report.to_json(**({"label": args.label} if args.label else {})))
    return EXIT_OK

def cmd_heatmap(args, config: RunConfig) -> int:
    corpus = _load(config, args.data, True)
    model  = load_checkpoint(MamFusion(config.model), args.checkpoint)
    model.enable_mamba = config.train.enable_mamba
    paths = export_heatmaps(model, corpus, args.query, args.video, args.out, args.head)
    print(json.dumps({"files": [ str(p) for p in paths ]}))
    return EXIT_OK

COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "heatmap": cmd_heatmap,
}


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)

def dispatch(argv: Optional[Sequence[str]] = None) -> int:
    """Run a subcommand and return its exit code."""
    parser = get_cli_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    configure_logging(args.verbose, args.quiet)

    try:
        run_config = None
        if getattr(args, "config", None):
            run_config = RunConfig.from_file(args.config)
        prec  = run_config.precision if run_config else "float32"
        debug = run_config.debug if run_config else False
        with precision(prec), debug_mode(debug):
            return COMMANDS[args.command](args, run_config)
    except ConfigurationError as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_USAGE
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except (DataError, MamFusionError) as exc:
        logger.error("data error: %s", exc)
        return EXIT_DATA

def main() -> None:
    sys.exit(dispatch())
