"""Train and evaluate on a synthetic corpus for the '{analysis}' analysis.

Every video of the corpus hides the event described by its caption in
a contiguous quarter of its frames. The script records the retrieval
metrics of the untrained model (chance level is ``100 * K / n_videos``)
and of the model after every ``EVAL_EVERY`` epochs of training, together
with the loss trace.
"""
from pathlib import Path
import pandas as pd
import joblib
from src._argparse import get_parser
from src.data_io import SyntheticSpec, synthesize
from src.model import MamFusion, ModelConfig
from src.training import TrainConfig, evaluate, fit
from src.utils import set_seed


HERE = Path(__file__).absolute().parent
DATA = HERE/"data"
DATA.mkdir(parents=True, exist_ok=True)

EVAL_EVERY = 10


def make_data(quick: bool = False) -> dict:
    n_videos = 8 if quick else 32
    spec = SyntheticSpec(n_videos=n_videos, d_vid=64, d_text=64, seed=303)
    corpus, spans = synthesize(spec)
    model = MamFusion(ModelConfig(d_text=64, d_vid=64, clip_count=8, max_frames=48), seed=303)
    config = TrainConfig(epochs=30 if quick else 200, batch_size=8, seed=303)

    records = [ dict(epoch=0, **evaluate(model, corpus).to_dict()) ]

    def callback(epoch, model):
        if epoch % EVAL_EVERY == 0 or epoch == config.epochs:
            records.append(dict(epoch=epoch, **evaluate(model, corpus).to_dict()))

    trace = fit(model, corpus, config, callback=callback)
    return dict(
        metrics=pd.DataFrame(records),
        trace=trace.to_frame(),
        spans=spans,
        n_videos=n_videos,
    )


if __name__ == "__main__":
    parser = get_parser(__file__, __doc__)
    args = parser.parse_args()
    fname = DATA/("memorization-quick.pkl.gz" if args.quick else "memorization.pkl.gz")
    if args.force or not fname.exists():
        set_seed(303)
        joblib.dump(make_data(args.quick), fname, compress=True)
