"""Factories for command-line parsers.

:py:func:`get_parser` serves the experiment scripts in ``analyses/``
(the analysis name is derived from the script's directory) and
:py:func:`get_cli_parser` builds the subcommand interface of ``python -m src``.
"""
from pathlib import Path
from argparse import ArgumentParser
from . import __version__
from .model import COMPONENTS


def get_parser(filename: str, desc: str) -> ArgumentParser:
    """Get command-line argument parser of an analysis script."""
    here = Path(filename).parent
    name = "-".join(here.stem.split("-")[1:])

    parser = ArgumentParser(
        description=desc.format(analysis=name)
    )
    parser.add_argument(
        "--force",
        dest="force",
        action="store_true",
        default=False,
        help="Force recomputing even if results exist."
    )
    parser.add_argument(
        "--quick",
        dest="quick",
        action="store_true",
        default=False,
        help="Run a scaled-down version of the experiment."
    )
    return parser

def get_cli_parser() -> ArgumentParser:
    """Get the parser of the ``synth | train | eval | heatmap`` interface."""
    parser = ArgumentParser(
        prog="python -m src",
        description="Partially relevant video retrieval with "
                    "selective state space and temporal fusion modules."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log only warnings and errors.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    synth = sub.add_parser("synth", help="Generate a synthetic corpus.")
    synth.add_argument("--spec", required=True, help="Corpus specification (key = value file).")
    synth.add_argument("--out", required=True, help="Output directory.")

    train = sub.add_parser("train", help="Train a model.")
    train.add_argument("--config", required=True, help="Run configuration.")
    train.add_argument("--data", default=None, help="Corpus manifest (default: 'data' of the configuration).")
    train.add_argument("--out", default=None, help="Output directory (default: 'out' of the configuration).")
    train.add_argument("--seed", type=int, default=None, help="Override the configured seed.")

    evaluate = sub.add_parser("eval", help="Evaluate a checkpoint.")
    evaluate.add_argument("--config", required=True, help="Run configuration.")
    evaluate.add_argument("--data", default=None, help="Corpus manifest (default: 'data' of the configuration).")
    evaluate.add_argument("--checkpoint", required=True, help="Checkpoint file.")
    evaluate.add_argument("--fast-mode", action="store_true", help="Score without temporal fusion.")
    evaluate.add_argument(
        "--disable",
        action="append",
        default=[],
        choices=COMPONENTS,
        help="Disable a module (repeatable)."
    )
    evaluate.add_argument("--report", default=None, help="Report file (default: next to the checkpoint).")
    evaluate.add_argument("--label", default="", help="Row label of the report.")

    heatmap = sub.add_parser("heatmap", help="Export fusion attention maps.")
    heatmap.add_argument("--config", required=True, help="Run configuration.")
    heatmap.add_argument("--checkpoint", required=True, help="Checkpoint file.")
    heatmap.add_argument("--data", default=None, help="Corpus manifest (default: 'data' of the configuration).")
    heatmap.add_argument("--query", required=True, help="Caption id.")
    heatmap.add_argument("--video", required=True, help="Video id.")
    heatmap.add_argument("--out", required=True, help="Output path stem.")
    heatmap.add_argument("--head", type=int, default=None, help="Export one head instead of the mean.")
    return parser
