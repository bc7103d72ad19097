import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vsig import opcount
from vsig.fft_scheme import GridError, causal_convolve, padded_length, run_fft_batch, run_fft_scheme
from vsig.kernel_weights import Exponential, Fractional, MatrixKernelSpec, PiecewiseConstant
from vsig.paths import Path, gen_paths
from vsig.quad_scheme import ExponentSet, run_scheme
from vsig.tensor_algebra import TruncatedTensor


def direct_convolution(G, omega):
    J = G.shape[0]
    out = np.zeros((J + 1,) + G.shape[1:])
    for j in range(J + 1):
        for i in range(j):
            out[j] += omega[j - i - 1] * G[i]
    return out


@given(st.integers(1, 300))
def test_padded_length(J):
    L = padded_length(J)
    assert L >= 2 * J and L & (L - 1) == 0 and L // 2 < 2 * J


def test_unit_lag_shifts_input(rng):
    G = rng.normal(size=(9, 2))
    omega = np.zeros(9)
    omega[0] = 1.0
    out = causal_convolve(G, omega)
    np.testing.assert_allclose(out[1:], G, atol=1e-14)
    np.testing.assert_allclose(out[0], 0.0, atol=1e-14)


def test_ones_give_prefix_sums(rng):
    G = rng.normal(size=12)
    out = causal_convolve(G, np.ones(12))
    np.testing.assert_allclose(out, np.concatenate([[0.0], np.cumsum(G)]), atol=1e-13)


def test_matches_direct_summation(rng):
    G = rng.normal(size=(16, 3))
    omega = rng.normal(size=16)
    np.testing.assert_allclose(causal_convolve(G, omega), direct_convolution(G, omega), atol=1e-12)


def test_bad_weight_length():
    with pytest.raises(ValueError):
        causal_convolve(np.ones(4), np.ones(3))


def test_exponential_order1_matches_quadratic_scheme():
    x = gen_paths(0, 1, 64)[0]
    spec = MatrixKernelSpec.scalar(Exponential(1.0, 0.8), 3)
    B = ExponentSet.order1(0.5)
    fast = run_fft_scheme(x, spec, 5, B).v
    slow = run_scheme(x, spec, 5, B).v
    for a, b in zip(fast, slow):
        scale = max(1.0, float(np.max(np.abs(b.flat()))))
        assert a.max_abs_diff(b) / scale < 1e-9


def test_fractional_matches_and_scales():
    x1, x2 = gen_paths(1, 1, 128)[0], gen_paths(1, 1, 256)[0]
    spec = MatrixKernelSpec.scalar(Fractional(0.6), 3)
    fast = run_fft_scheme(x1, spec, 3).v[-1]
    assert fast.max_abs_diff(run_scheme(x1, spec, 3).v[-1], factorial=True) < 1e-9
    with opcount.counting() as c1:
        run_fft_scheme(x1, spec, 3)
    with opcount.counting() as c2:
        run_fft_scheme(x2, spec, 3)
    assert 1.9 <= opcount.total(c2) / opcount.total(c1) <= 2.6


def test_zero_increments_stay_unit():
    x = Path(np.linspace(0, 1, 9), np.ones((9, 2)))
    for v in run_fft_scheme(x, MatrixKernelSpec.scalar(Fractional(0.4), 2), 3).v:
        assert v.max_abs_diff(TruncatedTensor.unit(2, 3)) == 0.0


def test_batch_equals_single_runs():
    paths = gen_paths(2, 3, 16)
    spec = MatrixKernelSpec.of([(Fractional(0.4), np.eye(3)), (Fractional(0.7), np.eye(3)[::-1])])
    batch = run_fft_batch(paths, spec, 3, mem_budget=1e4)
    for p, vs in zip(paths, batch):
        assert vs[-1].max_abs_diff(run_fft_scheme(p, spec, 3).v[-1]) < 1e-14


def test_rejects_nonuniform_and_nonconvolution(rng):
    t = np.array([0.0, 0.1, 0.5, 1.0])
    with pytest.raises(GridError):
        run_fft_scheme(Path(t, rng.normal(size=(4, 2))), MatrixKernelSpec.scalar(Fractional(0.5), 2), 2)
    k = PiecewiseConstant((0.0, 1.0), np.ones((1, 1)))
    with pytest.raises(GridError):
        run_fft_scheme(gen_paths(0, 1, 4)[0], MatrixKernelSpec.scalar(k, 3), 2)
