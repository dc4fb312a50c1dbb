"""Backend equivalence: the compiled kernels must agree with the numpy
fallback to floating-point rounding on the same inputs."""
import numpy as np
import pytest

from ssmkit import _purekernels
from ssmkit.simulation import IdmPlusParams

native = pytest.importorskip("ssmkit._native")


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(123)


def test_backend_registry():
    from ssmkit import kernels
    names = [n for n, _ in kernels.get_backends()]
    assert "pure" in names and "native" in names


def test_ws_batch_equivalence(rng):
    for _ in range(10):
        dv = float(rng.uniform(1, 40))
        ttc = float(rng.uniform(0.2, 4))
        n = int(rng.integers(1, 200))
        t_react = rng.uniform(0.1, 3.0, n)
        madr = rng.uniform(4.2, 12.7, n)
        a = native.simulate_ws_batch(dv, ttc, t_react, madr, 0.1)
        b = _purekernels.simulate_ws_batch(dv, ttc, t_react, madr, 0.1)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_idm_batch_equivalence(rng):
    idm = IdmPlusParams().as_tuple()
    for _ in range(10):
        n = int(rng.integers(1, 60))
        v_l = float(rng.uniform(3, 25))
        knots = np.maximum(v_l + np.cumsum(rng.normal(0, 0.4, (n, 51)), axis=1), 0)
        knots[:, 0] = v_l
        t_react = rng.uniform(0.2, 2.5, n)
        madr = rng.uniform(4.2, 12.7, n)
        v_e = float(rng.uniform(3, 30))
        gap = float(rng.uniform(4, 60))
        a = native.simulate_idm_batch(knots, 0.1, v_e, gap, t_react, madr, idm, 0.1, 60.0)
        b = _purekernels.simulate_idm_batch(knots, 0.1, v_e, gap, t_react, madr, idm, 0.1, 60.0)
        assert np.allclose(a, b, rtol=1e-9, atol=1e-9)


def test_nw_eval_and_gradient_equivalence(rng):
    for _ in range(5):
        n = int(rng.integers(5, 400))
        d = int(rng.integers(1, 6))
        pts = rng.normal(0, 3, (n, d))
        probs = rng.random(n)
        binv = rng.uniform(0.1, 4.0, d)
        queries = rng.normal(0, 4, (50, d))
        assert np.allclose(native.nw_evaluate_many(pts, probs, binv, queries),
                           _purekernels.nw_evaluate_many(pts, probs, binv, queries),
                           rtol=1e-9, atol=1e-12)
        assert np.allclose(native.nw_gradient_many(pts, probs, binv, queries),
                           _purekernels.nw_gradient_many(pts, probs, binv, queries),
                           rtol=1e-7, atol=1e-10)


def test_greedy_cover_equivalence(rng):
    for _ in range(10):
        n = int(rng.integers(1, 500))
        d = int(rng.integers(1, 5))
        scaled = rng.normal(0, rng.uniform(0.5, 3), (n, d))
        a = native.greedy_cover(scaled)
        b = _purekernels.greedy_cover(scaled)
        assert np.array_equal(a, b)


def test_pure_override_env(monkeypatch):
    import importlib
    import ssmkit.kernels as kmod

    monkeypatch.setenv("SSMKIT_PURE", "1")
    mod = importlib.reload(kmod)
    assert mod.BACKEND == "pure"
    monkeypatch.delenv("SSMKIT_PURE")
    mod = importlib.reload(kmod)
    assert mod.BACKEND == "native"
