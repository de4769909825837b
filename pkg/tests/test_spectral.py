import numpy as np
import pytest

from darcyscale.grid import GridShape, TensorField
from darcyscale.spectral import (SpectralError, build_spectral,
                                 low_mode_source, reduce_operator,
                                 verify_low_mode_exactness)
from _fields import random_small_field, uniform_field


def test_uniform_operator_is_diagonal():
    op = build_spectral(uniform_field(8, 0.7))
    k2 = (op.modes ** 2).sum(axis=1)
    assert np.max(np.abs(np.diag(op.matrix) - 0.7 * k2)) < 1e-12
    off = op.matrix - np.diag(np.diag(op.matrix))
    assert np.max(np.abs(off)) < 1e-12


def test_single_mode_perturbation_offdiagonals():
    n = 8
    x = np.arange(n) / n
    a = 1.0 + 0.25 * np.cos(2 * np.pi * x)[None, :] * np.ones((n, n))
    fld = TensorField(GridShape(n), a, np.zeros((n, n)), a)
    op = build_spectral(fld)
    for i in range(n * n):
        for j in range(n * n):
            dk = op.modes[i] - op.modes[j]
            wrapped = (dk + n // 2) % n - n // 2
            coupled = tuple(np.abs(wrapped)) in ((1, 0), (0, 0))
            if not coupled and i != j:
                assert abs(op.matrix[i, j]) < 1e-12


def test_hermitian_full_and_reduced():
    rng = np.random.default_rng(1)
    for seed in range(5):
        fld = random_small_field(8, rng)
        op = build_spectral(fld)
        scale = np.max(np.abs(op.matrix))
        assert np.max(np.abs(op.matrix - op.matrix.conj().T)) < 1e-12 * scale
        red, _ = reduce_operator(op, 2)
        assert np.max(np.abs(red - red.conj().T)) < 1e-12 * np.max(np.abs(red))


def test_uniform_reduction_trivial():
    op = build_spectral(uniform_field(8, 1.1))
    red, low = reduce_operator(op, 2)
    assert np.allclose(red, op.matrix[np.ix_(low, low)], atol=1e-12)


def test_low_mode_exactness_random_fields():
    rng = np.random.default_rng(2)
    for seed in range(10):
        fld = random_small_field(8, rng)
        op = build_spectral(fld)
        src = low_mode_source(op, 1, 0)
        assert verify_low_mode_exactness(fld, 2, src) < 1e-9


def test_uniform_exact():
    fld = uniform_field(8, 0.9)
    op = build_spectral(fld)
    assert verify_low_mode_exactness(fld, 2, low_mode_source(op, 1, 1)) < 1e-13


def test_high_power_source_rejected_and_counterexample():
    rng = np.random.default_rng(3)
    fld = random_small_field(8, rng)
    op = build_spectral(fld)
    src = np.zeros(64, dtype=complex)
    src[op.mode_index(3, 3)] = 1.0
    src[op.mode_index(1, 0)] = 1.0
    with pytest.raises(ValueError):
        verify_low_mode_exactness(fld, 2, src)
    dev = verify_low_mode_exactness(fld, 2, src, strict=False)
    assert dev > 1e-6  # the premise is necessary


def test_nesting_composition():
    rng = np.random.default_rng(4)
    fld = random_small_field(16, rng)
    op = build_spectral(fld)
    red3, low3 = reduce_operator(op, 3)
    red1, low1 = reduce_operator(op, 1)
    m3 = op.modes[low3]
    inner = (np.abs(m3[:, 0]) <= 1) & (np.abs(m3[:, 1]) <= 1)
    A = red3[np.ix_(inner, inner)]
    B = red3[np.ix_(inner, ~inner)]
    C = red3[np.ix_(~inner, inner)]
    D = red3[np.ix_(~inner, ~inner)]
    nested = A - B @ np.linalg.solve(D, C)
    assert np.max(np.abs(nested - red1)) < 1e-9 * np.max(np.abs(red1))


def test_guards():
    with pytest.raises(SpectralError):
        build_spectral(uniform_field(64, 1.0))
    op = build_spectral(uniform_field(8, 1.0))
    with pytest.raises(ValueError):
        op.low_mask(0)
    with pytest.raises(ValueError):
        op.low_mask(4)
    with pytest.raises(KeyError):
        op.mode_index(17, 0)
    with pytest.raises(ValueError):
        verify_low_mode_exactness(uniform_field(8, 1.0), 2, np.zeros(10))


def test_mode_ordering_canonical():
    op = build_spectral(uniform_field(8, 1.0))
    order = np.lexsort((op.modes[:, 0], op.modes[:, 1]))
    assert np.array_equal(order, np.arange(64))
