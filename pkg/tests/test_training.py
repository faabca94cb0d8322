import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import log_softmax
from src.data_io import Corpus
from src.errors import ConfigurationError, ContractViolationError, NumericError
from src.model import VARIANTS, MamFusion
from src.tensorops import Parameter, Tensor, backward, precision
from src.training import (
    MASK,
    LossTrace,
    TrainConfig,
    batch_loss,
    evaluate,
    fit,
    hardest_triplet_loss,
    infonce_loss,
    negatives_mask,
    train_epoch,
    triplet_loss,
)


@pytest.fixture
def single_pair(tiny_corpus):
    caption = tiny_corpus.captions[0]
    return Corpus({caption.video_id: tiny_corpus.videos[caption.video_id]}, [caption])


# Losses ----------------------------------------------------------------------

@pytest.mark.parametrize("s_pos,s_neg,expected", [
    (0.9, 0.5, 0.0),
    (0.5, 0.5, 0.2),
    (0.1, 0.6, 0.7),
])
def test_triplet_examples(float64, s_pos, s_neg, expected):
    assert triplet_loss(s_pos, s_neg, 0.2).item() == pytest.approx(expected)

def test_triplet_matches_scalar_loop(float64, rng):
    s_pos, s_neg = rng.uniform(-1, 1, size=(2, 50))
    out = triplet_loss(Tensor(s_pos), Tensor(s_neg), 0.3).data
    expected = [ max(0.0, 0.3 + n - p) for p, n in zip(s_pos, s_neg) ]
    np.testing.assert_allclose(out, expected, rtol=1e-12)
    assert np.all(out >= 0)

@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 1))
def test_triplet_is_non_negative(s_pos, s_neg, margin):
    with precision("float64"):
        loss = triplet_loss(s_pos, s_neg, margin).item()
    assert loss >= 0
    if s_pos >= s_neg + margin:
        assert loss == 0

def test_triplet_rejects_negative_margin():
    with pytest.raises(ConfigurationError):
        triplet_loss(0.5, 0.5, -0.1)

def test_infonce_single_pair_is_zero(float64):
    assert infonce_loss(Tensor([[0.3]])).item() == 0

def test_infonce_dominant_diagonal(float64):
    assert infonce_loss(Tensor(np.eye(4))).item() < 1e-4

def test_infonce_oracle(float64, rng):
    S = rng.uniform(-1, 1, size=(4, 4))
    logits = S / 0.07
    rows = -np.mean(np.diag(log_softmax(logits, axis=1)))
    cols = -np.mean(np.diag(log_softmax(logits, axis=0)))
    assert infonce_loss(Tensor(S), 0.07).item() == pytest.approx((rows + cols) / 2, abs=1e-6)

def test_infonce_rejects_non_square():
    with pytest.raises(ContractViolationError):
        infonce_loss(Tensor(np.ones((2, 3))))

def test_negatives_mask():
    mask = negatives_mask(["a", "b", "a"])
    expected = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]]) * MASK
    np.testing.assert_array_equal(mask, expected)

def test_hardest_triplet_oracle(float64, rng):
    S = rng.uniform(-1, 1, size=(5, 5))
    mask = negatives_mask(["a", "b", "c", "d", "e"])
    expected = 0.0
    for i in range(5):
        negatives = [ j for j in range(5) if j != i ]
        expected += max(0, 0.2 + max(S[i, j] for j in negatives) - S[i, i]) / 5
        expected += max(0, 0.2 + max(S[j, i] for j in negatives) - S[i, i]) / 5
    assert hardest_triplet_loss(Tensor(S), 0.2, mask).item() == pytest.approx(expected)

def test_hardest_triplet_without_negatives_is_zero(float64):
    S = Parameter(np.array([[0.4, 0.9], [0.8, 0.1]]))
    loss = hardest_triplet_loss(S, 0.2, negatives_mask(["a", "a"]))
    assert loss.item() == 0
    backward(loss)
    np.testing.assert_array_equal(S.grad, 0)


# Loss trace ------------------------------------------------------------------

def test_loss_trace_roundtrip(tmp_path):
    trace = LossTrace()
    trace.append(1, 2.0, 15)
    trace.append(2, 0.1 + 0.2, 11)
    trace.append(5, 1/3, 9)
    trace.to_csv(tmp_path/"trace.csv")
    loaded = LossTrace.from_csv(tmp_path/"trace.csv")
    assert loaded == trace
    assert (tmp_path/"trace.csv").read_text().splitlines()[0] == "epoch,mean_loss,wall_ms"

def test_loss_trace_epochs_increase():
    trace = LossTrace()
    trace.append(2, 1.0, 0)
    with pytest.raises(ContractViolationError):
        trace.append(2, 0.5, 0)

@pytest.mark.parametrize("losses,expected", [
    ([10.0, 4.0, 0.5, 0.2], 3),
    ([10.0, 4.0, 0.6], None),
    ([], None),
])
def test_epochs_to_reduction(losses, expected):
    trace = LossTrace()
    for epoch, loss in enumerate(losses, start=1):
        trace.append(epoch, loss, 0)
    assert trace.epochs_to_reduction(0.95) == expected


# Configuration ---------------------------------------------------------------

@pytest.mark.parametrize("kwds", [
    dict(margin=-0.1), dict(temperature=0.0), dict(lambda_nce=-1.0),
    dict(lr=-1e-3), dict(batch_size=0), dict(checkpoint_every=-1),
])
def test_train_config_errors(kwds):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kwds)

def test_train_config_apply(tiny_model):
    TrainConfig(enable_mamba=False, enable_tvt=False, fast_mode=True).apply(tiny_model)
    assert not tiny_model.enable_mamba
    assert not tiny_model.enable_tvt
    assert tiny_model.enable_ttv
    assert tiny_model.fast_mode


# Loops -----------------------------------------------------------------------

def test_zero_lr_keeps_parameters(tiny_model, tiny_corpus):
    config = TrainConfig(lr=0.0, batch_size=4)
    before = tiny_model.state_arrays()
    _, mean_loss = train_epoch(tiny_model, tiny_corpus, config)
    after = tiny_model.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)
    ordered = [ tiny_corpus.captions[i] for i in np.random.default_rng(0).permutation(4) ]
    expected = batch_loss(tiny_model, ordered, tiny_corpus, config).item()
    assert mean_loss == pytest.approx(expected, rel=1e-12)

def test_single_pair_batch_has_zero_loss(tiny_model, single_pair):
    before = tiny_model.state_arrays()
    _, mean_loss = train_epoch(tiny_model, single_pair, TrainConfig(lr=0.1))
    assert mean_loss == 0
    after = tiny_model.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)

def test_empty_dataset(tiny_model):
    with pytest.raises(ContractViolationError):
        train_epoch(tiny_model, Corpus({}, []), TrainConfig())

def test_train_epoch_applies_toggles(tiny_model, tiny_corpus):
    before = tiny_model.state_arrays()
    config = TrainConfig(enable_mamba=False, enable_ttv=False, batch_size=4, lr=1e-2)
    train_epoch(tiny_model, tiny_corpus, config)
    assert not tiny_model.enable_mamba
    assert not tiny_model.enable_ttv
    assert tiny_model.enable_tvt
    after = tiny_model.state_arrays()
    frozen = [ k for k in before if ".mamba." in k or k.startswith("fusion.ttv.") ]
    assert frozen
    for k in frozen:
        np.testing.assert_array_equal(after[k], before[k])
    assert not np.array_equal(after["text_encoder.w"], before["text_encoder.w"])

def test_non_finite_loss(tiny_model, tiny_corpus, monkeypatch):
    monkeypatch.setattr("src.training.batch_loss", lambda *args: Tensor(np.nan))
    with pytest.raises(NumericError):
        train_epoch(tiny_model, tiny_corpus, TrainConfig())

def test_fit_is_deterministic(float64, tiny_config, tiny_corpus):
    config = TrainConfig(epochs=2, batch_size=2, seed=3)
    a = fit(MamFusion(tiny_config, seed=7), tiny_corpus, config, progress=False)
    b = fit(MamFusion(tiny_config, seed=7), tiny_corpus, config, progress=False)
    assert a.epochs == b.epochs == [1, 2]
    assert a.mean_loss == b.mean_loss

@pytest.mark.slow
def test_fit_reduces_loss(tiny_model, tiny_corpus):
    config = TrainConfig(epochs=15, batch_size=4, lr=1e-2)
    trace = fit(tiny_model, tiny_corpus, config, progress=False)
    assert trace.mean_loss[-1] < trace.mean_loss[0]

def test_fit_writes_outputs(tiny_model, tiny_corpus, tmp_path):
    calls = []
    config = TrainConfig(epochs=2, batch_size=4, checkpoint_every=1)
    trace = fit(
        tiny_model, tiny_corpus, config, tmp_path/"run",
        progress=False, callback=lambda epoch, _: calls.append(epoch)
    )
    for name in ("checkpoint.mmck", "checkpoint_epoch1.mmck", "checkpoint_epoch2.mmck"):
        assert (tmp_path/"run"/name).is_file()
    assert LossTrace.from_csv(tmp_path/"run"/"loss_trace.csv") == trace
    assert calls == [1, 2]

def test_full_model_gradients(tiny_model, tiny_corpus, check_gradients):
    # margin 1 keeps every hinge active, away from its kink
    config = TrainConfig(lambda_triplet=1.0, lambda_nce=0.5, margin=1.0)
    captions = tiny_corpus.captions[:3]
    params = list(tiny_model.parameters().values())
    check_gradients(
        lambda: batch_loss(tiny_model, captions, tiny_corpus, config),
        params, n_entries=4, rtol=1e-3, atol=1e-6
    )

def test_evaluate_small_corpus(tiny_model, tiny_corpus):
    report = evaluate(tiny_model, tiny_corpus)
    assert report.r100 == 100.0
    assert report.r10 == 100.0
    assert 0 <= report.r1 <= report.r5 <= 100


# Scaled-down experiments -----------------------------------------------------

def _train_variant(variant, tiny_config, corpus, epochs):
    model = MamFusion(tiny_config, seed=7).disable(*VARIANTS[variant])
    config = TrainConfig(
        epochs=epochs, batch_size=4, lr=1e-2,
        enable_mamba=model.enable_mamba,
        enable_ttv=model.enable_ttv,
        enable_tvt=model.enable_tvt,
    )
    trace = fit(model, corpus, config, progress=False)
    return trace, evaluate(model, corpus)

@pytest.mark.slow
def test_memorizes_tiny_corpus(tiny_config, tiny_corpus):
    trace, report = _train_variant("full", tiny_config, tiny_corpus, 200)
    assert report.r1 == 100.0
    assert report.sum_r == 400.0
    assert trace.epochs == list(range(1, 201))
    assert trace.epochs_to_reduction(0.95) is not None

@pytest.mark.slow
@pytest.mark.parametrize("variant", ["w/o both fusions", "w/o mamba"])
def test_full_model_is_not_worse_than_ablation(tiny_config, tiny_corpus, variant):
    _, full = _train_variant("full", tiny_config, tiny_corpus, 200)
    _, ablated = _train_variant(variant, tiny_config, tiny_corpus, 200)
    assert full.sum_r >= ablated.sum_r
