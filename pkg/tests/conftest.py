import math
import numpy as np
import pytest
from src.data_io import SyntheticSpec, synthesize
from src.model import MamFusion, ModelConfig
from src.tensorops import backward, precision
from src.utils import finite_difference_gradient


TINY = dict(
    d_text=6,
    d_vid=5,
    d=8,
    heads=2,
    ffn_width=16,
    max_words=8,
    max_frames=12,
    clip_count=4,
    variances=(0.5, 1.0, math.inf),
    d_state=3,
    d_conv=2,
    expand=2,
)


@pytest.fixture(params=range(5))
def rng(request):
    return np.random.default_rng(request.param)

@pytest.fixture
def float64():
    with precision("float64"):
        yield

@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)

@pytest.fixture
def tiny_model(float64, tiny_config):
    return MamFusion(tiny_config, seed=7)

@pytest.fixture
def tiny_corpus():
    spec = SyntheticSpec(
        n_videos=4,
        frames_per_video=(5, 9),
        caption_len=(2, 4),
        d_vid=TINY["d_vid"],
        d_text=TINY["d_text"],
        relevant_span=0.5,
        seed=1,
        latent_dim=4,
    )
    corpus, _ = synthesize(spec)
    return corpus

@pytest.fixture
def check_gradients(float64):
    """Compare tape gradients with central finite differences.

    ``loss_fn`` recomputes a scalar loss from the current parameter values.
    At most ``n_entries`` random coordinates are checked per tensor.
    """
    def check(loss_fn, params, *, n_entries=None, rtol=1e-3, atol=1e-6, seed=0):
        picker = np.random.default_rng(seed)
        for p in params:
            p.grad = None
        backward(loss_fn())
        for p in params:
            grad = np.zeros_like(p.data) if p.grad is None else p.grad
            indices = list(np.ndindex(p.shape))
            if n_entries is not None and len(indices) > n_entries:
                chosen = picker.choice(len(indices), size=n_entries, replace=False)
                indices = [ indices[i] for i in chosen ]
            for idx in indices:
                expected = finite_difference_gradient(loss_fn, p, idx, h=1e-4)
                assert grad[idx] == pytest.approx(expected, rel=rtol, abs=atol), \
                    f"{getattr(p, 'name', '')}{list(idx)}"
    return check
