"""Loss convergence for the '{analysis}' analysis.

The model is trained on the synthetic corpus with several seeds and
with the state space blocks switched on and off. For every run the
script stores the per-epoch mean loss and the first epoch at which the
loss dropped below 5% of its initial value.
"""
from pathlib import Path
import pandas as pd
import joblib
from tqdm.auto import tqdm
from src._argparse import get_parser
from src.data_io import SyntheticSpec, synthesize
from src.model import MamFusion, ModelConfig
from src.training import TrainConfig, fit
from src.utils import set_seed


HERE = Path(__file__).absolute().parent
DATA = HERE/"data"
DATA.mkdir(parents=True, exist_ok=True)

SEEDS = (303, 304, 305, 306, 307)


def run(seed: int, enable_mamba: bool, epochs: int, n_videos: int) -> pd.DataFrame:
    corpus, _ = synthesize(SyntheticSpec(n_videos=n_videos, d_vid=64, d_text=64, seed=seed))
    model  = MamFusion(ModelConfig(d_text=64, d_vid=64, clip_count=8, max_frames=48), seed=seed)
    config = TrainConfig(epochs=epochs, seed=seed, enable_mamba=enable_mamba)
    trace  = fit(model, corpus, config, progress=False)
    df = trace.to_frame()
    df.insert(0, "mamba", enable_mamba)
    df.insert(0, "seed", seed)
    df["epochs_to_95"] = trace.epochs_to_reduction(0.95)
    return df


if __name__ == "__main__":
    parser = get_parser(__file__, __doc__)
    args = parser.parse_args()
    fname = DATA/("convergence-quick.pkl.gz" if args.quick else "convergence.pkl.gz")

    if args.force or not fname.exists():
        set_seed(303)
        seeds  = SEEDS[:2] if args.quick else SEEDS
        epochs = 20 if args.quick else 200
        jobs   = [ (s, m) for s in seeds for m in (True, False) ]
        data   = pd.concat([
            run(s, m, epochs, 8 if args.quick else 32)
            for s, m in tqdm(jobs)
        ], ignore_index=True)
        joblib.dump(data, fname, compress=True)
