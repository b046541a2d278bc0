import numpy as np
import pytest

from skillzip import ShapeError, fro_norm, matmul
from skillzip.prng import Prng


def _random_f32(rng, rows, cols):
    return rng.uniform_matrix(rows, cols, -1.0, 1.0)


def test_identity_times_any():
    m = np.array([[2.0, -3.0], [0.5, 7.0]], dtype=np.float32)
    eye = np.eye(2, dtype=np.float32)
    assert np.array_equal(matmul(eye, m), m)


def test_hand_product():
    a = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    b = np.array([[1.0], [1.0]], dtype=np.float32)
    assert np.array_equal(matmul(a, b), np.array([[3.0], [7.0]], dtype=np.float32))


def test_zeros_product():
    z = np.zeros((3, 4), dtype=np.float32)
    m = np.ones((4, 2), dtype=np.float32)
    assert np.array_equal(matmul(z, m), np.zeros((3, 2), dtype=np.float32))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3), dtype=np.float32), np.ones((2, 2), dtype=np.float32))


def test_matmul_associativity_tolerance():
    rng = Prng(101)
    for _ in range(5):
        a = _random_f32(rng, 32, 32)
        b = _random_f32(rng, 32, 32)
        c = _random_f32(rng, 32, 32)
        left = matmul(matmul(a, b), c)
        right = matmul(a, matmul(b, c))
        assert fro_norm(left - right) <= 1e-4 * max(fro_norm(left), 1e-12)


def test_matmul_deterministic():
    rng = Prng(55)
    a = _random_f32(rng, 48, 32)
    b = _random_f32(rng, 32, 16)
    first = matmul(a, b)
    for _ in range(3):
        assert np.array_equal(matmul(a, b), first)


def test_fro_norm_zero_and_scalar():
    assert fro_norm(np.zeros((4, 4), dtype=np.float32)) == 0.0
    assert fro_norm(np.array([[3.0, 4.0]], dtype=np.float32)) == pytest.approx(5.0, abs=1e-12)
    assert fro_norm(np.eye(3, dtype=np.float32)) == pytest.approx(np.sqrt(3.0), rel=1e-12)
