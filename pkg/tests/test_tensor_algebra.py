import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from vsig.tensor_algebra import (
    TensorMatrix,
    TensorShapeError,
    TruncatedTensor,
    horner_vte,
    scale_levels,
    shuffle_by_vector,
    signature_pwl,
    tensor_exp,
    tensor_matrix_product,
    truncated_product,
)

from _word_algebra import concat, from_words, shuffle, to_words

vecs = arrays(np.float64, st.integers(1, 3), elements=st.floats(-2, 2))


def random_tensor(rng, m, N):
    return TruncatedTensor.from_flat(rng.normal(size=sum(m**n for n in range(N + 1))), m, N)


def test_unit_is_left_identity(rng):
    y = random_tensor(rng, 3, 3)
    assert truncated_product(TruncatedTensor.unit(3, 3), y).max_abs_diff(y) == 0.0


def test_single_concatenation():
    e1 = TruncatedTensor.from_levels([[0.0], [1.0, 0.0], [0.0] * 4])
    e2 = TruncatedTensor.from_levels([[0.0], [0.0, 1.0], [0.0] * 4])
    out = truncated_product(e1, e2)
    assert out.coeff((1, 2)) == 1.0
    assert np.count_nonzero(out.flat()) == 1


def test_product_matches_word_oracle(rng):
    x, y = random_tensor(rng, 2, 4), random_tensor(rng, 2, 4)
    ref = from_words(concat(to_words(x), to_words(y), 4), 2, 4)
    assert truncated_product(x, y).max_abs_diff(ref) < 1e-12


def test_exp_of_commuting_sum(rng):
    v = rng.normal(size=3)
    lhs = truncated_product(tensor_exp(v, 4), tensor_exp(v, 4))
    ref = [np.ones(1)]
    blk = np.ones(1)
    for n in range(1, 5):
        blk = np.kron(blk, 2 * v)
        ref.append(blk / math.factorial(n))
    assert lhs.max_abs_diff(TruncatedTensor.from_levels(ref)) < 1e-13


def test_tensor_exp_small_cases():
    assert tensor_exp(np.zeros(3), 3).max_abs_diff(TruncatedTensor.unit(3, 3)) == 0.0
    t = tensor_exp([2.0, 0.0, 0.0], 2)
    assert t.coeff((1, 1)) == 2.0
    assert np.count_nonzero(t.levels[2]) == 1


def test_tensor_exp_outer_products(rng):
    v = rng.normal(size=2)
    t = tensor_exp(v, 5)
    for n in range(6):
        brute = np.ones(())
        for _ in range(n):
            brute = np.multiply.outer(brute, v)
        np.testing.assert_allclose(t.levels[n], brute.ravel() / math.factorial(n), rtol=1e-14, atol=0)


def test_shuffle_two_letters():
    out = shuffle_by_vector([1.0, 0.0], [0.0, 1.0])
    np.testing.assert_array_equal(out, [0.0, 1.0, 1.0, 0.0])


@given(vecs, st.integers(0, 3))
def test_shuffle_power_identity(y, k):
    """y shuffled k times equals k! y^(x)k, so shuffling y^(x)k with y gives (k+1) y^(x)(k+1)."""
    yk = np.ones(1)
    for _ in range(k):
        yk = np.kron(yk, y)
    np.testing.assert_allclose(shuffle_by_vector(yk, y, k=k), (k + 1) * np.kron(yk, y), rtol=1e-12, atol=1e-12)


def test_shuffle_matches_recursive_definition(rng):
    m = 2
    x = rng.normal(size=m**3)
    y = rng.normal(size=m)
    xt = TruncatedTensor.from_levels([np.zeros(1), np.zeros(m), np.zeros(m**2), x, np.zeros(m**4)])
    yt = TruncatedTensor.from_levels([np.zeros(1), y, np.zeros(m**2), np.zeros(m**3), np.zeros(m**4)])
    ref = from_words(shuffle(to_words(xt), to_words(yt), 4), m, 4)
    np.testing.assert_allclose(shuffle_by_vector(x, y), ref.levels[4], atol=1e-13)


def test_shuffle_rejects_overflow():
    with pytest.raises(TensorShapeError):
        shuffle_by_vector(np.ones(4), np.ones(2), N=2)


def test_horner_small_cases(rng):
    v = random_tensor(rng, 2, 3)
    y = rng.normal(size=2)
    assert np.all(horner_vte(v, y, np.zeros(3)).flat() == 0.0)
    out = horner_vte(TruncatedTensor.unit(2, 3), y, [1.0, 1 / 2, 1 / 6])
    e = tensor_exp(y, 3)
    assert out.levels[0][0] == 0.0
    for n in range(1, 4):
        np.testing.assert_allclose(out.levels[n], e.levels[n], rtol=1e-14)


def test_horner_matches_explicit_assembly(rng):
    N = 4
    v = random_tensor(rng, 3, N)
    y = rng.normal(size=3)
    beta = rng.normal(size=N)
    E = tensor_exp(y, N)
    E_lv = [np.zeros(1)] + [beta[n - 1] * math.factorial(n) * E.levels[n] for n in range(1, N + 1)]
    ref = truncated_product(v, TruncatedTensor.from_levels(E_lv))
    assert horner_vte(v, y, beta).max_abs_diff(ref) < 1e-12


def test_scale_levels():
    rng = np.random.default_rng(1)
    x = random_tensor(rng, 2, 3)
    assert scale_levels(x, 1.0, 1.0).max_abs_diff(x) == 0.0
    z = scale_levels(x, 5.0, 0.0)
    assert z.levels[0][0] == x.levels[0][0] and not np.any(z.flat()[1:])
    v = rng.normal(size=2)
    np.testing.assert_allclose(scale_levels(tensor_exp(v, 3), 2.0, 3.0).levels[2], 6 * np.kron(v, v) / 2, rtol=1e-14)


def test_tensor_matrix_identity_and_1x1(rng):
    m, N = 2, 3
    M = TensorMatrix.zeros(2, 2, m, N)
    lv = [rng.normal(size=b.shape) for b in M.levels]
    M = TensorMatrix(m, N, tuple(lv))
    out = tensor_matrix_product(TensorMatrix.identity(2, m, N), M)
    for a, b in zip(out.levels, M.levels):
        np.testing.assert_array_equal(a, b)
    x, y = random_tensor(rng, m, N), random_tensor(rng, m, N)
    X = TensorMatrix(m, N, tuple(b[None, None] for b in x.levels))
    Y = TensorMatrix(m, N, tuple(b[None, None] for b in y.levels))
    assert tensor_matrix_product(X, Y).entry(0, 0).max_abs_diff(truncated_product(x, y)) < 1e-14


def test_tensor_matrix_times_real_matrix(rng):
    m, N = 2, 2
    row = TensorMatrix(m, N, tuple(rng.normal(size=(1, 3, m**n)) for n in range(N + 1)))
    E = rng.normal(size=(3, 3))
    out = tensor_matrix_product(row, E)
    for j in range(3):
        ref = sum((row.entry(0, l) * E[l, j] for l in range(1, 3)), row.entry(0, 0) * E[0, j])
        assert out.entry(0, j).max_abs_diff(ref) < 1e-14
    with pytest.raises(TensorShapeError):
        tensor_matrix_product(row, np.eye(2))


def test_signature_chen(rng):
    inc = rng.normal(size=(5, 2))
    full = signature_pwl(inc, 4)
    split = truncated_product(signature_pwl(inc[:2], 4), signature_pwl(inc[2:], 4))
    assert full.max_abs_diff(split) < 1e-13


@given(st.integers(1, 3), st.integers(0, 4))
def test_serialization_round_trip(m, N):
    x = random_tensor(np.random.default_rng(m * 10 + N), m, N)
    assert np.array_equal(TruncatedTensor.from_bytes(x.to_bytes()).flat(), x.flat())
    assert np.array_equal(TruncatedTensor.from_json(x.to_json()).flat(), x.flat())


def test_shape_mismatch_raises():
    with pytest.raises(TensorShapeError):
        truncated_product(TruncatedTensor.unit(2, 2), TruncatedTensor.unit(3, 2))
