"""Ablation study for the '{analysis}' analysis.

Every named variant (full model, without the state space blocks,
without one or both temporal fusions, and the plain Gaussian attention
baseline) is trained from the same initialization on the same synthetic
corpus. Models are evaluated mid-training, before retrieval saturates,
so that the contributions of the modules remain visible.
"""
from pathlib import Path
import pandas as pd
import joblib
from tqdm.auto import tqdm
from src._argparse import get_parser
from src.data_io import SyntheticSpec, synthesize
from src.model import VARIANTS, MamFusion, ModelConfig
from src.training import TrainConfig, evaluate, fit
from src.utils import set_seed

from latex import to_latex


HERE = Path(__file__).absolute().parent
DATA = HERE/"data"
DATA.mkdir(parents=True, exist_ok=True)

SEEDS = (303, 304, 305)


def run_variant(variant: str, seed: int, epochs: int, n_videos: int) -> dict:
    spec = SyntheticSpec(n_videos=n_videos, d_vid=64, d_text=64, seed=seed)
    corpus, _ = synthesize(spec)
    model = MamFusion(ModelConfig(
        d_text=64, d_vid=64, clip_count=8, max_frames=48,
        disabled=VARIANTS[variant]
    ), seed=seed)
    config = TrainConfig(
        epochs=epochs, seed=seed,
        enable_mamba=model.enable_mamba,
        enable_ttv=model.enable_ttv,
        enable_tvt=model.enable_tvt,
    )
    trace  = fit(model, corpus, config, progress=False)
    report = evaluate(model, corpus)
    return dict(
        variant=variant,
        seed=seed,
        final_loss=trace.mean_loss[-1],
        **report.to_dict()
    )


if __name__ == "__main__":
    parser = get_parser(__file__, __doc__)
    args = parser.parse_args()
    fname = DATA/("ablations-quick.pkl.gz" if args.quick else "ablations.pkl.gz")

    if args.force or not fname.exists():
        set_seed(303)
        seeds  = SEEDS[:1] if args.quick else SEEDS
        epochs = 10 if args.quick else 30
        jobs   = [ (v, s) for v in VARIANTS for s in seeds ]
        data   = pd.DataFrame([
            run_variant(v, s, epochs, 8 if args.quick else 32)
            for v, s in tqdm(jobs)
        ])
        joblib.dump(data, fname, compress=True)

    data = joblib.load(fname)
    (DATA/fname.name.replace(".pkl.gz", ".tex")).write_text(to_latex(data))
