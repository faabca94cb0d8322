import numpy as np
import pytest
from src.errors import ConfigurationError, ContractViolationError, DimensionError
from src.ssm import (
    MambaBlock,
    SsmConfig,
    associative_states,
    causal_conv1d,
    inverse_softplus,
    scan_states,
    selective_scan,
)
from src.tensorops import Parameter, Tensor, softplus


def reference_scan(delta, A, B, C, x, D):
    L, channels = x.shape
    h = np.zeros((channels, A.shape[1]))
    y = np.zeros((L, channels))
    for t in range(L):
        h = np.exp(delta[t][:, None] * A) * h + delta[t][:, None] * B[t][None, :] * x[t][:, None]
        y[t] = h @ C[t] + D * x[t]
    return y

def random_scan_inputs(rng, L=6, channels=3, n_state=2):
    return (
        rng.uniform(0.1, 1.0, size=(L, channels)),
        -rng.uniform(0.5, 2.0, size=(channels, n_state)),
        rng.normal(size=(L, n_state)),
        rng.normal(size=(L, n_state)),
        rng.normal(size=(L, channels)),
        rng.normal(size=channels),
    )


# Scan ------------------------------------------------------------------------

@pytest.mark.parametrize("method", ["sequential", "associative"])
@pytest.mark.parametrize("L", [1, 2, 5, 8, 13])
def test_scan_matches_reference(rng, method, L):
    args = random_scan_inputs(rng, L=L)
    y, h = scan_states(*args, method=method)
    np.testing.assert_allclose(y, reference_scan(*args), rtol=1e-10, atol=1e-12)
    assert h.shape == (L, 3, 2)

@pytest.mark.parametrize("method", ["sequential", "associative"])
@pytest.mark.parametrize("L", [32, 256])
def test_selective_scan_matches_reference_on_long_sequences(float64, method, L):
    rng = np.random.default_rng(L)
    for _ in range(100):
        args = random_scan_inputs(rng, L=L, channels=4, n_state=3)
        y = selective_scan(*(Tensor(a) for a in args), method=method).data
        np.testing.assert_allclose(y, reference_scan(*args), rtol=1e-5, atol=1e-5)

@pytest.mark.parametrize("method", ["sequential", "associative"])
def test_scan_is_stable_over_thousand_steps(method):
    L, channels, n_state = 1000, 3, 2
    delta = np.full((L, channels), 0.1)
    A = -np.array([[0.5, 1.0], [1.0, 2.0], [0.5, 4.0]])
    B = np.ones((L, n_state))
    C = np.ones((L, n_state))
    x = np.ones((L, channels))
    D = np.zeros(channels)
    y, h = scan_states(delta, A, B, C, x, D, method=method)
    assert np.all(np.isfinite(y)) and np.all(np.isfinite(h))
    steady = 0.1 / (1 - np.exp(0.1 * A))
    np.testing.assert_allclose(h[-1], steady, rtol=1e-10)
    np.testing.assert_allclose(y[-1], steady.sum(axis=1), rtol=1e-10)
    rng = np.random.default_rng(1000)
    args = random_scan_inputs(rng, L=L)
    y1, _ = scan_states(*args, method="sequential")
    y2, _ = scan_states(*args, method=method)
    assert np.all(np.isfinite(y2))
    np.testing.assert_allclose(y2, y1, rtol=1e-8, atol=1e-10)

def test_scan_methods_agree_on_states(rng):
    args = random_scan_inputs(rng, L=9)
    _, h1 = scan_states(*args, method="sequential")
    _, h2 = scan_states(*args, method="associative")
    np.testing.assert_allclose(h1, h2, rtol=1e-10, atol=1e-12)

def test_associative_states_recurrence(rng):
    decay = rng.uniform(0, 1, size=(10, 2))
    drive = rng.normal(size=(10, 2))
    h = associative_states(decay, drive)
    state = np.zeros(2)
    for t in range(10):
        state = decay[t] * state + drive[t]
        np.testing.assert_allclose(h[t], state, rtol=1e-12)

def test_zero_input_gives_zero_output(rng):
    delta, A, B, C, x, D = random_scan_inputs(rng)
    y, h = scan_states(delta, A, B, C, np.zeros_like(x), D)
    np.testing.assert_array_equal(y, 0)
    np.testing.assert_array_equal(h, 0)

def test_unknown_scan_method(rng):
    with pytest.raises(ConfigurationError):
        scan_states(*random_scan_inputs(rng), method="fft")

@pytest.mark.parametrize("method", ["sequential", "associative"])
def test_selective_scan_gradients(check_gradients, method):
    rng = np.random.default_rng(11)
    params = [ Parameter(a) for a in random_scan_inputs(rng, L=5) ]
    W = Tensor(rng.normal(size=(5, 3)))
    check_gradients(lambda: (selective_scan(*params, method=method) * W).sum(), params)

def test_selective_scan_rejects_nonpositive_steps(rng):
    delta, *rest = random_scan_inputs(rng)
    delta[2, 1] = 0.0
    with pytest.raises(ContractViolationError):
        selective_scan(delta, *rest)

def test_selective_scan_shape_errors(rng):
    delta, A, B, C, x, D = random_scan_inputs(rng)
    with pytest.raises(DimensionError):
        selective_scan(delta, A, B[:, :1], C, x, D)
    with pytest.raises(DimensionError):
        selective_scan(delta[:-1], A, B, C, x, D)


# Convolution -----------------------------------------------------------------

@pytest.mark.parametrize("K", [1, 2, 4])
def test_causal_conv1d_oracle(float64, rng, K):
    x = rng.normal(size=(5, 3))
    kernel = rng.normal(size=(3, K))
    out = causal_conv1d(Tensor(x), Tensor(kernel)).data
    expected = np.zeros_like(x)
    for t in range(5):
        for c in range(3):
            for k in range(K):
                s = t - (K - 1) + k
                if s >= 0:
                    expected[t, c] += kernel[c, k] * x[s, c]
    np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-12)

def test_causal_conv1d_is_causal(float64, rng):
    x = rng.normal(size=(6, 2))
    kernel = Tensor(rng.normal(size=(2, 3)))
    y = x.copy()
    y[4:] += 10
    a = causal_conv1d(Tensor(x), kernel).data
    b = causal_conv1d(Tensor(y), kernel).data
    np.testing.assert_array_equal(a[:4], b[:4])

def test_causal_conv1d_gradients(check_gradients):
    rng = np.random.default_rng(12)
    x = Parameter(rng.normal(size=(4, 2)))
    kernel = Parameter(rng.normal(size=(2, 3)))
    W = Tensor(rng.normal(size=(4, 2)))
    check_gradients(lambda: (causal_conv1d(x, kernel) * W).sum(), [x, kernel])

def test_causal_conv1d_shape_error():
    with pytest.raises(DimensionError):
        causal_conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((3, 2))))


# Block -----------------------------------------------------------------------

def test_config_derived_sizes():
    assert SsmConfig(d=64).rank == 4
    assert SsmConfig(d=8).rank == 1
    assert SsmConfig(d=8, dt_rank=3).rank == 3
    assert SsmConfig(d=8, expand=3).d_inner == 24

@pytest.mark.parametrize("kwds", [
    dict(d_state=0), dict(dt_rank=0), dict(dt_min=0.2, dt_max=0.1),
    dict(scan_method="parallel"),
])
def test_config_errors(kwds):
    with pytest.raises(ConfigurationError):
        SsmConfig(**kwds)

def test_inverse_softplus(float64):
    y = np.array([1e-3, 0.05, 1.0, 4.0])
    np.testing.assert_allclose(softplus(Tensor(inverse_softplus(y))).data, y, rtol=1e-10)

def test_initial_step_sizes_in_range(float64, rng):
    config = SsmConfig(d=8, d_state=3, d_conv=2)
    block = MambaBlock(config, rng)
    dt = softplus(block.dt_proj.bias).data
    assert np.all(dt >= config.dt_min * (1 - 1e-9))
    assert np.all(dt <= config.dt_max * (1 + 1e-9))
    np.testing.assert_allclose(-np.exp(block.A_log.data[0]), [-1, -2, -3])

@pytest.mark.parametrize("method", ["sequential", "associative"])
def test_block_shape(rng, method):
    block = MambaBlock(SsmConfig(d=8, d_state=3, d_conv=2, scan_method=method), rng)
    assert block(Tensor(rng.normal(size=(7, 8)))).shape == (7, 8)

def test_zero_output_projection_is_identity(rng):
    block = MambaBlock(SsmConfig(d=8, d_state=3, d_conv=2), rng)
    block.out_proj.weight.data[...] = 0
    X = Tensor(rng.normal(size=(5, 8)))
    np.testing.assert_array_equal(block(X).data, X.data)

def test_disabled_block_is_identity(rng):
    block = MambaBlock(SsmConfig(d=8, d_state=3, d_conv=2), rng)
    block.enabled = False
    X = Tensor(rng.normal(size=(5, 8)))
    assert block(X) is X

def test_block_is_causal(float64, rng):
    block = MambaBlock(SsmConfig(d=8, d_state=3, d_conv=2), rng)
    X = rng.normal(size=(6, 8))
    Y = X.copy()
    Y[3:] = rng.normal(size=(3, 8))
    np.testing.assert_allclose(block(X).data[:3], block(Y).data[:3], rtol=1e-12)

def test_block_gradients(check_gradients):
    rng = np.random.default_rng(13)
    block = MambaBlock(SsmConfig(d=8, d_state=3, d_conv=2), rng)
    X = Tensor(rng.normal(size=(4, 8)))
    W = Tensor(rng.normal(size=(4, 8)))
    params = list(block.parameters().values())
    check_gradients(lambda: (block(X) * W).sum(), params, n_entries=3)
