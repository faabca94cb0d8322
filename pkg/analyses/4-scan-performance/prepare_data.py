"""Runtime and accuracy of the selective scan for the '{analysis}' analysis.

Both evaluation strategies (the sequential kernel and the log-depth
associative scan) are timed on random inputs of growing length and
compared with a plain Python recurrence.
"""
from pathlib import Path
import numpy as np
import pandas as pd
import joblib
from tqdm.auto import tqdm
from src._argparse import get_parser
from src.ssm import scan_states
from src.utils import measure_time, set_seed


HERE = Path(__file__).absolute().parent
DATA = HERE/"data"
DATA.mkdir(parents=True, exist_ok=True)

# Number of repetitions
NREP = 5


def random_inputs(rng: np.random.Generator, L: int, channels: int = 128, n_state: int = 16):
    return (
        rng.uniform(0.001, 0.1, size=(L, channels)),
        -np.tile(np.arange(1.0, n_state + 1), (channels, 1)),
        rng.normal(size=(L, n_state)),
        rng.normal(size=(L, n_state)),
        rng.normal(size=(L, channels)),
        np.ones(channels),
    )

def reference_scan(delta, A, B, C, x, D):
    h = np.zeros_like(A)
    y = np.empty_like(x)
    for t in range(len(x)):
        h = np.exp(delta[t][:, None] * A) * h + (delta[t] * x[t])[:, None] * B[t]
        y[t] = h @ C[t] + D * x[t]
    return y

def relative_error(y: np.ndarray, ref: np.ndarray) -> float:
    return float(np.abs(y - ref).max() / np.abs(ref).max())


if __name__ == "__main__":
    parser = get_parser(__file__, __doc__)
    args = parser.parse_args()
    fname = DATA/("times-quick.pkl.gz" if args.quick else "times.pkl.gz")

    if args.force or not fname.exists():
        set_seed(303)
        rng = np.random.default_rng(303)
        lengths = [16, 64, 256] if args.quick else [16, 32, 64, 128, 256, 512, 1024, 2048]
        # Compile the kernel before timing
        scan_states(*random_inputs(rng, 4))

        rawdata = []
        for L in tqdm(lengths):
            inputs = random_inputs(rng, L)
            ref = reference_scan(*inputs)
            for method in ("sequential", "associative"):
                times = [ measure_time(scan_states, *inputs, method=method) for _ in range(NREP) ]
                y, _ = scan_states(*inputs, method=method)
                rawdata.append(dict(
                    L=L,
                    method=method,
                    times=times,
                    rel_error=relative_error(y, ref),
                ))
        joblib.dump(pd.DataFrame(rawdata), fname, compress=True)
