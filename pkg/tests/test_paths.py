import numpy as np
import pytest
from hypothesis import given, strategies as st

from vsig.paths import Path, gen_paths
from vsig.tensor_algebra import signature_pwl


@given(seed=st.integers(0, 2**31 - 1), J=st.integers(1, 40))
def test_increments_bounded_by_step(seed, J):
    (p,) = gen_paths(seed, 1, J)
    norms = np.linalg.norm(p.increments(), axis=1)
    assert np.all(norms <= p.steps() * (1 + 1e-9))
    assert p.t[0] == 0.0 and p.t[-1] == 1.0 and p.d == 3


def test_generation_is_deterministic():
    a = [p.to_csv() for p in gen_paths(42, 3, 10)]
    b = [p.to_csv() for p in gen_paths(42, 3, 10)]
    assert a == b
    assert a != [p.to_csv() for p in gen_paths(43, 3, 10)]


def test_signature_levels_vary_across_samples():
    sigs = [signature_pwl(p.increments(), 6) for p in gen_paths(0, 64, 16)]
    for n in range(1, 7):
        stack = np.stack([s.level(n) for s in sigs])
        assert np.max(stack.std(axis=0)) > 0


def test_csv_round_trip(tmp_path):
    (p,) = gen_paths(1, 1, 7)
    f = tmp_path / "p.csv"
    p.save(f)
    q = Path.load(f)
    np.testing.assert_array_equal(p.t, q.t)
    np.testing.assert_array_equal(p.x, q.x)


def test_refine_keeps_endpoints_and_path():
    (p,) = gen_paths(3, 1, 5)
    r = p.refine(2)
    assert r.J == 20
    np.testing.assert_allclose(r.x[::4], p.x, atol=1e-15)
    np.testing.assert_allclose(r.increments()[:4].sum(axis=0), p.increments()[0], atol=1e-15)


def test_rejects_bad_time_column():
    with pytest.raises(ValueError):
        Path(np.array([0.0, 0.5, 0.5]), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        gen_paths(0, 0, 3)
