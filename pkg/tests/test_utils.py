import random
import numpy as np
import pytest
from src.tensorops import Parameter
from src.utils import (
    finite_difference_gradient,
    measure_time,
    rescale_rows,
    set_seed,
    to_grayscale,
)


def test_set_seed():
    set_seed(5)
    a = (random.random(), np.random.random())
    set_seed(5)
    assert (random.random(), np.random.random()) == a

def test_measure_time():
    assert measure_time(sum, range(10)) >= 0

def test_rescale_rows():
    X = np.array([[1.0, 2.0, 4.0], [0.0, 0.0, 0.0], [3.0, 0.0, 1.5]])
    expected = np.array([[63.75, 127.5, 255], [0, 0, 0], [255, 0, 127.5]])
    np.testing.assert_allclose(rescale_rows(X), expected)
    np.testing.assert_array_equal(
        to_grayscale(X),
        np.array([[64, 128, 255], [0, 0, 0], [255, 0, 128]], dtype=np.uint8)
    )

@pytest.mark.parametrize("X", [np.ones(3), -np.ones((2, 2))])
def test_rescale_rows_errors(X):
    with pytest.raises(ValueError):
        rescale_rows(X)

def test_finite_difference_gradient(float64):
    p = Parameter(np.array([1.0, -2.0, 0.5]))
    grad = finite_difference_gradient(lambda: (p * p * p).sum(), p)
    np.testing.assert_allclose(grad, 3 * p.data**2, rtol=1e-6)
    assert finite_difference_gradient(lambda: (p * p).sum(), p, (1,)) == pytest.approx(-4.0)
    np.testing.assert_array_equal(p.data, [1.0, -2.0, 0.5])
