import math

import numpy as np
import pytest
import scipy.linalg

from vsig import opcount
from vsig._accel import HAVE_NUMBA
from vsig.experiments import classical_kernel, goursat_test_kernel
from vsig.fssk import FsskData, JordanBlock, JordanForm
from vsig.oracles import kappa_reference
from vsig.paths import Path, gen_paths
from vsig.sig_kernel import (
    GoursatGrid,
    GramShapeError,
    StaticLift,
    gamma_cells,
    phi12_matrix,
    rbf_kernel,
    run_goursat,
)
from vsig.tensor_algebra import signature_pwl


def one_cell(dx, dw):
    return (Path(np.array([0.0, 1.0]), np.vstack([np.zeros(len(dx)), dx])),
            Path(np.array([0.0, 1.0]), np.vstack([np.zeros(len(dw)), dw])))


def phi_oracle(M, which):
    """phi_1 and phi_2 from the exponential of an augmented block matrix."""
    n = M.shape[0]
    big = np.zeros((3 * n, 3 * n))
    big[:n, :n] = M
    big[:n, n:2 * n] = np.eye(n)
    big[n:2 * n, 2 * n:] = np.eye(n)
    ex = scipy.linalg.expm(big)
    return ex[:n, n:2 * n] if which == 1 else ex[:n, 2 * n:]


# --- matrix phi functions


def test_phi_at_zero():
    np.testing.assert_allclose(phi12_matrix(np.zeros((3, 3)), 1), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(phi12_matrix(np.zeros((3, 3)), 2), np.eye(3) / 2, atol=1e-15)


def test_phi_scalar():
    assert phi12_matrix(np.array([[-1.0]]), 1)[0, 0] == pytest.approx(1 - math.exp(-1), rel=1e-15)
    assert phi12_matrix(np.array([[-1.0]]), 2)[0, 0] == pytest.approx(math.exp(-1), rel=1e-14)


@pytest.mark.parametrize("lam", [1e-5, 2e-3, 0.7, 5.0])
def test_phi_jordan_chain(lam):
    M = -np.array([[lam, -1.0], [0.0, lam]]) * 0.3
    for which in (1, 2):
        np.testing.assert_allclose(phi12_matrix(M, which), phi_oracle(M, which), atol=1e-12)


def test_phi_mixed_block():
    M = -np.array([[0.0, -1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 3.0]])
    for which in (1, 2):
        np.testing.assert_allclose(phi12_matrix(M, which, blocks=[(0, 3)]), phi_oracle(M, which), atol=1e-12)


# --- increments and lifts


def test_constant_paths_have_zero_gamma():
    x = Path(np.linspace(0, 1, 5), np.ones((5, 3)))
    w = gen_paths(0, 1, 6)[0]
    assert not np.any(gamma_cells(x, w, None, goursat_test_kernel()))


def test_classical_gamma_is_inner_product():
    x, w = gen_paths(1, 2, 5)
    g = gamma_cells(x, w, None, classical_kernel())
    np.testing.assert_allclose(g[..., 0, 0], x.increments() @ w.increments().T, atol=1e-15)


def test_rbf_gram_matches_double_loop():
    x, w = gen_paths(2, 2, 4)
    k = rbf_kernel(0.7)
    lift = StaticLift.from_kernel(k, x, w, np.eye(3))
    data = classical_kernel()
    g = gamma_cells(x, w, lift, data)
    kv = lambda u, v: math.exp(-np.sum((u - v) ** 2) / (2 * 0.49))
    for i in range(x.J):
        for j in range(w.J):
            ref = (kv(x.x[i + 1], w.x[j + 1]) - kv(x.x[i], w.x[j + 1])
                   - kv(x.x[i + 1], w.x[j]) + kv(x.x[i], w.x[j]))
            assert g[i, j, 0, 0] == pytest.approx(ref, abs=1e-14)


def test_linear_lift_equals_user_gram():
    x, w = gen_paths(3, 2, 6)
    data = goursat_test_kernel()
    lin = StaticLift.from_kernel(lambda U, V: U @ V.T, x, w, data.A)
    a = run_goursat(x, w, data).kappa
    b = run_goursat(x, w, data, lift=lin).kappa
    assert a == pytest.approx(b, abs=1e-13)


def test_gram_shape_checked():
    x, w = gen_paths(0, 2, 4)
    with pytest.raises(GramShapeError):
        run_goursat(x, w, classical_kernel(), lift=StaticLift.from_gram(np.zeros((4, 5))))


# --- solver


def test_zero_gamma_gives_unit_kernel():
    x = Path(np.linspace(0, 1, 5), np.zeros((5, 3)))
    w = gen_paths(0, 1, 7)[0]
    for scheme in ("pc", "exp", "naive"):
        g = run_goursat(x, w, goursat_test_kernel(), scheme=scheme, lam=1)
        assert np.all(g.eta == 1.0) and not np.any(g.K)


@pytest.mark.parametrize("dx,dw", [([0.3, -0.2], [0.5, 0.1]), ([1.0, 0.0], [-0.4, 0.0])])
def test_single_cell_picard(dx, dw):
    x, w = one_cell(np.array(dx), np.array(dw))
    gam = float(np.dot(dx, dw))
    data = FsskData(JordanForm.diagonal([0.0]), [[1.0]], np.eye(2)[None])
    assert run_goursat(x, w, data, scheme="pc").kappa == pytest.approx(1 + gam + gam**2 / 4, abs=1e-15)
    assert run_goursat(x, w, data, scheme="exp").kappa == pytest.approx(1 + gam, abs=1e-15)
    assert run_goursat(x, w, data, scheme="naive").kappa == pytest.approx(1 + gam, abs=1e-15)


def test_boundaries_stay_fixed():
    x, w = gen_paths(4, 2, 5)
    g = run_goursat(x, w, goursat_test_kernel(), lam=1)
    assert g.boundary_ok()


def test_classical_convergence_and_diagonal():
    x, w = gen_paths(0, 2, 8)
    data = classical_kernel()
    ref = kappa_reference(x, w, data, 10)
    errs = [abs(run_goursat(x, w, data, lam=l).kappa - ref) for l in range(1, 5)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    kxx = run_goursat(x, x, data, lam=2).kappa
    sig = signature_pwl(x.increments(), 10).flat()
    assert kxx >= 1.0 and kxx == pytest.approx(float(sig @ sig), rel=1e-4)


def test_symmetry():
    x, w = gen_paths(5, 2, 6)
    data = goursat_test_kernel()
    assert run_goursat(x, w, data).kappa == pytest.approx(run_goursat(w, x, data).kappa, abs=1e-14)


def test_pc_beats_naive_on_test_kernel():
    x, w = gen_paths(6, 2, 16)
    data = goursat_test_kernel()
    ref = kappa_reference(x, w, data, 10)
    pc = abs(run_goursat(x, w, data, scheme="pc", lam=1).kappa - ref)
    naive = abs(run_goursat(x, w, data, scheme="naive", lam=1).kappa - ref)
    assert pc < naive


@pytest.mark.skipif(not HAVE_NUMBA, reason="numba disabled")
def test_backends_agree():
    x, w = gen_paths(7, 2, 8)
    data = goursat_test_kernel()
    for scheme in ("pc", "exp", "naive"):
        a = run_goursat(x, w, data, scheme=scheme, lam=1, backend="numba")
        b = run_goursat(x, w, data, scheme=scheme, lam=1, backend="numpy")
        np.testing.assert_allclose(a.K, b.K, atol=1e-13)


def test_rotation_block_kernel_runs():
    data = FsskData(JordanForm((JordanBlock("rot", 1, a=1.0, omega=2.0),)), [[0.5, 0.5]], np.eye(3)[None])
    x, w = gen_paths(8, 2, 6)
    ref = kappa_reference(x, w, data, 10)
    errs = [abs(run_goursat(x, w, data, lam=l).kappa - ref) for l in range(3)]
    assert errs[2] < errs[0]


def test_op_counts_scale_with_area():
    data = goursat_test_kernel()
    (x1, w1), (x2, w2) = gen_paths(0, 2, 12), gen_paths(0, 2, 24)
    with opcount.counting() as a:
        run_goursat(x1, w1, data)
    with opcount.counting() as b:
        run_goursat(x2, w2, data)
    assert opcount.total(b) / opcount.total(a) == pytest.approx(4.0, rel=0.1)


def test_unknown_scheme_and_level():
    x, w = gen_paths(0, 2, 3)
    with pytest.raises(ValueError):
        run_goursat(x, w, classical_kernel(), scheme="rk4")
    with pytest.raises(ValueError):
        run_goursat(x, w, classical_kernel(), lam=-1)


def test_grid_json():
    x, w = gen_paths(0, 2, 3)
    g = run_goursat(x, w, classical_kernel(), scheme="exp_integrator")
    js = g.to_json(full=True)
    assert js["grid_dims"] == [3, 3] and js["kappa"] == g.kappa and len(js["eta"]) == 4
    assert isinstance(g, GoursatGrid) and g.manifest["scheme"] == "exp"
