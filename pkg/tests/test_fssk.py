import itertools
import math

import numpy as np
import pytest
import scipy.linalg

from vsig.fssk import (
    ContourError,
    FsskData,
    JordanBlock,
    JordanForm,
    eval_fg,
    eval_phi_psi,
    jordan_exp,
    phi_psi_series,
    prony_to_jordan,
    readout,
    run_fssk,
    state_step,
    state_step_q1_horner,
)
from vsig.kernel_weights import Constant, Exponential, MatrixKernelSpec, kappa
from vsig.oracles import frechet_mixed_derivative
from vsig.paths import gen_paths
from vsig.tensor_algebra import TruncatedTensor, horner_vte, signature_pwl, tensor_exp, truncated_product


def scalar_data(lam=1.0, alpha=1.0, d=2):
    return FsskData(JordanForm.diagonal([lam]), [[alpha]], np.eye(d)[None])


def kernel_from(J, b, d):
    return float(np.sum(jordan_exp(J, d) @ b))


# --- Prony conversion and block exponentials


def test_prony_single_exponential():
    J, b = prony_to_jordan([(0.7, [1.3])])
    assert J.R == 1 and J.blocks[0].lam == 0.7
    np.testing.assert_allclose(b, [1.3])


def test_prony_cosine():
    om = 2.5
    J, b = prony_to_jordan(osc_terms=[(0.0, om, [1.0], [0.0])])
    assert J.R == 2 and J.blocks[0].kind == "rot"
    np.testing.assert_allclose(b, [0.5, 0.5])
    for d in np.linspace(0, 3, 7):
        assert kernel_from(J, b, d) == pytest.approx(math.cos(om * d), abs=1e-13)


def test_prony_polynomial_times_exponential():
    J, b = prony_to_jordan([(1.0, [1.0, 1.0])])
    assert J.blocks[0].size == 2
    for d in np.linspace(0, 4, 20):
        assert kernel_from(J, b, d) == pytest.approx((1 + d) * math.exp(-d), abs=1e-12)


def test_prony_damped_sine():
    J, b = prony_to_jordan(osc_terms=[(0.4, 1.7, [0.0], [2.0])])
    for d in np.linspace(0, 3, 9):
        assert kernel_from(J, b, d) == pytest.approx(2 * math.exp(-0.4 * d) * math.sin(1.7 * d), abs=1e-13)


def test_jordan_exp_cases():
    J = JordanForm((JordanBlock("real", 2, lam=0.9), JordanBlock("rot", 2, a=0.3, omega=1.1)))
    np.testing.assert_array_equal(jordan_exp(J, 0.0), np.eye(J.R))
    assert jordan_exp(JordanForm.diagonal([1.0]), 1.0)[0, 0] == pytest.approx(math.exp(-1), rel=1e-15)
    E = jordan_exp(J, 0.7)
    assert E[0, 1] == pytest.approx(0.7 * math.exp(-0.9 * 0.7), rel=1e-14)
    np.testing.assert_allclose(E, scipy.linalg.expm(-0.7 * J.dense()), atol=1e-13)


def test_negative_spectrum_rejected():
    with pytest.raises(ContourError):
        FsskData(JordanForm.diagonal([-0.5]), [[1.0]], np.eye(2)[None])


def test_contour_must_enclose_spectrum():
    data = FsskData(JordanForm((JordanBlock("rot", 1, a=0.1, omega=40.0),)), [[0.5, 0.5]], np.eye(2)[None])
    with pytest.raises(ContourError):
        eval_phi_psi(1.0, data, 2, mquad=8)


# --- contour tables


def test_zero_lambda_tables_are_factorials():
    tab = eval_phi_psi(0.6, scalar_data(lam=0.0), 6)
    for n in range(7):
        assert tab.psi_of((n,))[0] == pytest.approx(1 / math.factorial(n + 1), abs=1e-10)
        assert tab.Phi_of(0, (n,))[0, 0] == pytest.approx(1 / math.factorial(n + 1), abs=1e-10)


def test_first_phi_at_unit_interval():
    tab = eval_phi_psi(1.0, scalar_data(), 1)
    assert tab.Phi_of(0, (0,))[0, 0] == pytest.approx(math.exp(-1), abs=1e-12)


def _psi_closed(n, lam, alpha, delta):
    # alpha^{n-1} int_0^delta e^{-lam u} u^{n-1}/(n-1)! du, via the finite Poisson sum
    x = lam * delta
    tail = 1.0 - math.exp(-x) * sum(x**k / math.factorial(k) for k in range(n))
    return alpha ** (n - 1) * tail / lam**n


@pytest.mark.parametrize("delta", [0.1, 1.0])
@pytest.mark.parametrize("lam,alpha", [(1.0, 1.0), (1.7, 0.6)])
def test_exponential_closed_forms(delta, lam, alpha):
    phis, psis = phi_psi_series(delta, scalar_data(lam, alpha), 6)
    for n in range(1, 7):
        phi = alpha**n * delta**n * math.exp(-lam * delta) / math.factorial(n)
        assert abs(phis[n][0, 0] - phi) < 1e-9
        assert abs(psis[n][0] - _psi_closed(n, lam, alpha, delta)) < 1e-9


def test_frechet_relation_r3():
    rng = np.random.default_rng(7)
    Lam = JordanForm((JordanBlock("real", 2, lam=0.8), JordanBlock("real", 1, lam=1.5)))
    b = rng.uniform(0.3, 1.0, (2, 3))
    data = FsskData(Lam, b, np.repeat(np.eye(2)[None], 2, axis=0))
    for t in (0.3, 1.0):
        tab = eval_phi_psi(t, data, 3)
        for n in range(1, 4):
            for w in itertools.combinations_with_replacement((1, 2), n):
                ell = [w.count(1), w.count(2)]
                fd = frechet_mixed_derivative(Lam.dense(), [np.outer(b[p - 1], np.ones(3)) for p in w], t)
                rhs = np.zeros((3, 3))
                for p in range(2):
                    if ell[p]:
                        e = list(ell)
                        e[p] -= 1
                        rhs += ell[p] * t**n * tab.Phi_of(p, tuple(e))
                rhs *= math.factorial(n - 1)
                assert np.max(np.abs(fd - rhs)) / np.max(np.abs(fd)) < 1e-5


# --- local operators


def test_fg_zero_increments():
    data = FsskData(JordanForm.diagonal([0.5, 1.2]), np.ones((2, 2)), np.repeat(np.eye(2)[None], 2, axis=0))
    tab = eval_phi_psi(0.3, data, 3)
    f, G = eval_fg(np.zeros((2, 2)), 4, tab)
    np.testing.assert_allclose(f[0][:, 0], tab.psi_of((0, 0)))
    assert all(not np.any(blk) for blk in f[1:])
    np.testing.assert_allclose(G[0][..., 0], tab.Phi[tab.rank[(0, 0)]])
    assert all(not np.any(blk) for blk in G[1:])


def test_fg_q1_is_power_series(rng):
    data = scalar_data(0.7, 1.1)
    tab = eval_phi_psi(0.4, data, 4)
    y = rng.normal(size=2)
    f, _ = eval_fg(y[None], 5, tab)
    for n in range(5):
        np.testing.assert_allclose(f[n][0], tab.psi_of((n,))[0] * tensor_exp(y, n).levels[n] * math.factorial(n),
                                   rtol=1e-12)


def test_fg_q2_word_sum(rng):
    data = FsskData(JordanForm.diagonal([0.4, 1.3]), rng.uniform(0.5, 1, (2, 2)), np.repeat(np.eye(2)[None], 2, 0))
    tab = eval_phi_psi(0.5, data, 2)
    ys = rng.normal(size=(2, 2))
    f, _ = eval_fg(ys, 3, tab)
    for n in range(3):
        ref = np.zeros((2, 2**n))
        for w in itertools.product((1, 2), repeat=n):
            ell = (w.count(1), w.count(2))
            mono = np.ones(1)
            for p in w:
                mono = np.kron(mono, ys[p - 1])
            ref += np.outer(tab.psi_of(ell), mono)
        np.testing.assert_allclose(f[n], ref, atol=1e-13)


def _zero_state(q, R, m, N):
    return [np.zeros((q, R, m**n)) for n in range(N + 1)]


def test_state_step_trivial_cases(rng):
    data = FsskData(JordanForm.diagonal([0.3, 0.9]), np.ones((1, 2)), np.eye(2)[None])
    tab = eval_phi_psi(0.2, data, 3)
    E = data.E(0.2)
    Z = [rng.normal(size=(1, 2, 2**n)) for n in range(5)]
    f, G = eval_fg(np.zeros((1, 2)), 4, tab)
    out = state_step(Z, np.zeros((1, 2)), E, f, G)
    for n in range(1, 5):
        np.testing.assert_allclose(out[n], np.einsum("pia,ij->pja", Z[n], E), atol=1e-15)
    ys = rng.normal(size=(1, 2))
    f, G = eval_fg(ys, 4, tab)
    out = state_step(_zero_state(1, 2, 2, 4), ys, E, f, G)
    for n in range(1, 5):
        np.testing.assert_allclose(out[n][0], np.einsum("ia,b->iab", f[n - 1], ys[0]).reshape(2, -1), atol=1e-15)


def test_horner_update_matches_general(rng):
    data = FsskData(JordanForm((JordanBlock("real", 2, lam=0.6),)), [[0.8, 0.4]], np.eye(2)[None])
    N, delta = 4, 0.3
    tab = eval_phi_psi(delta, data, N)
    E = data.E(delta)
    Z = [rng.normal(size=(1, 2, 2**n)) for n in range(N + 1)]
    Z[0][:] = 0.0  # states carry no level-0 part
    dx = rng.normal(size=2)
    f, G = eval_fg(dx[None], N, tab)
    general = state_step(Z, dx[None], E, f, G)
    psi_hat = [None] + [tab.psi_of((n - 1,)) for n in range(1, N + 1)]
    phi_hat = [E] + [tab.Phi_of(0, (n - 1,)) for n in range(1, N)]
    fused = state_step_q1_horner([z[0] for z in Z], dx, psi_hat, phi_hat)
    for a, b in zip(general[1:], fused[1:]):
        np.testing.assert_allclose(a[0], b, atol=1e-12)


def test_two_steps_classical(rng):
    dx = rng.normal(size=(2, 3))
    t = np.array([0.0, 0.4, 1.0])
    from vsig.paths import Path

    path = Path(t, np.vstack([np.zeros(3), np.cumsum(dx, axis=0)]))
    out = run_fssk(path, scalar_data(0.0, 1.0, 3), 5).v[-1]
    assert out.max_abs_diff(truncated_product(tensor_exp(dx[0], 5), tensor_exp(dx[1], 5))) < 1e-12


def test_readout_cases():
    data = FsskData(JordanForm.diagonal([0.5, 2.0]), [[1.0, 3.0]], np.eye(2)[None])
    assert readout(_zero_state(1, 2, 2, 3), 0.4, data).max_abs_diff(TruncatedTensor.unit(2, 3)) == 0.0
    Z = _zero_state(1, 2, 2, 1)
    Z[1][0] = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(readout(Z, 0.0, data).levels[1], [1.0, 3.0])


def test_single_interval_exponential_lookahead(rng):
    from vsig.paths import Path

    lam, alpha, h, lead = 1.3, 0.7, 0.5, 0.4
    dx = rng.normal(size=2)
    path = Path(np.array([0.0, h]), np.vstack([np.zeros(2), dx]))
    res = run_fssk(path, scalar_data(lam, alpha), 4, readout_taus=[0.0, h + lead])
    k = Exponential(alpha, lam)
    np.testing.assert_allclose(res.readouts[-1].levels[1], kappa(k, 1, 0.0, h, h + lead) / h * dx, rtol=1e-10)
    beta = [kappa(k, n, 0.0, h, h) / h**n for n in range(1, 5)]
    ref = horner_vte(TruncatedTensor.unit(2, 4), dx, beta) + TruncatedTensor.unit(2, 4)
    assert res.v[-1].max_abs_diff(ref) < 1e-10


@pytest.mark.parametrize("q,R", [(1, 1), (3, 2)])
def test_zero_lambda_is_classical(q, R):
    rng = np.random.default_rng(q * 10 + R)
    b = rng.uniform(0.2, 1.0, (q, R))
    A = rng.normal(size=(q, 2, 3))
    data = FsskData(JordanForm.diagonal([0.0] * R), b, A)
    for x in gen_paths(5, 2, 8):
        M = np.einsum("p,pmd->md", b.sum(axis=1), A)
        ref = signature_pwl(x.increments() @ M.T, 6)
        assert run_fssk(x, data, 6).v[-1].max_abs_diff(ref, factorial=True) < 1e-10


def test_from_spec_matches_direct():
    spec = MatrixKernelSpec.of([(Exponential(0.5, 1.0), np.eye(3)), (Constant(2.0), np.eye(3)[::-1])])
    data = FsskData.from_spec(spec)
    assert data.R == 2 and data.q == 2
    again = FsskData.from_json(data.to_json())
    x = gen_paths(0, 1, 6)[0]
    assert run_fssk(x, data, 3).v[-1].max_abs_diff(run_fssk(x, again, 3).v[-1]) == 0.0


def test_prony_json_form():
    obj = {"prony": [{"real": [[0.7, [1.3]]]}], "A": np.eye(2).tolist()}
    data = FsskData.from_json(obj)
    assert data.R == 1 and data.b[0, 0] == pytest.approx(1.3)


def test_euler_oracle_converges():
    from vsig.oracles import euler_state_ode

    data = FsskData(JordanForm.diagonal([1.0]), [[1.0]], np.eye(3)[None])
    x = gen_paths(3, 1, 8)[0]
    exact = run_fssk(x, data, 3).v[-1]
    errs = [euler_state_ode(x, data.dense_lambda(), data.b, data.A, 3, p).max_abs_diff(exact) for p in range(2, 7)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-2] / errs[-1] == pytest.approx(2.0, rel=0.15)
