import numpy as np
import pytest

from lpmodrec import BACKEND, _backend, _fallback
from lpmodrec.classifier import train_svm
from lpmodrec.iq import Modulation
from lpmodrec.local_features import GmmDictionary, SeriesTag, encode_instance, fit_gmm
from lpmodrec.simulator import SimConfig, generate_instance

try:
    compiled = _backend.get_backend("cython")
except ImportError:
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def test_selection():
    assert _backend.get_backend("python") is _fallback
    assert BACKEND in ("cython", "python")
    assert _backend.get_backend("auto") is (compiled or _fallback)
    with pytest.raises(ValueError):
        _backend.get_backend("fortran")


def test_env_override(monkeypatch):
    monkeypatch.setenv("LPMODREC_BACKEND", "python")
    assert _backend.get_backend() is _fallback


def _gmm_case(rng, n=3000, K=7, l=3):
    X = np.ascontiguousarray(rng.normal(size=(n, l)))
    w = rng.dirichlet(np.ones(K))
    mu = np.ascontiguousarray(rng.normal(size=(K, l)))
    var = np.ascontiguousarray(rng.uniform(0.05, 2.0, size=(K, l)))
    return X, w, mu, var


def test_fallback_gmm_matches_direct_formula(rng):
    X, w, mu, var = _gmm_case(rng, n=200, K=4)
    ll, S0, S1, S2 = _fallback.gmm_accumulate(X, w, mu, var)
    d = X[:, None, :] - mu[None]
    lj = np.log(w) - 0.5 * np.sum(np.log(2 * np.pi * var) + d * d / var, axis=2)
    lse = np.logaddexp.reduce(lj, axis=1)
    g = np.exp(lj - lse[:, None])
    assert ll == pytest.approx(lse.sum(), rel=1e-12)
    np.testing.assert_allclose(S0, g.sum(0), rtol=1e-12)
    np.testing.assert_allclose(S1, np.einsum("nk,nkd->kd", g, d), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(S2, np.einsum("nk,nkd->kd", g, d * d), rtol=1e-10, atol=1e-12)


@needs_compiled
def test_gmm_kernels_agree(rng):
    for K, l in ((1, 1), (7, 3), (50, 5)):
        args = _gmm_case(rng, K=K, l=l)
        a = _fallback.gmm_accumulate(*args)
        b = compiled.gmm_accumulate(*args)
        assert a[0] == pytest.approx(b[0], rel=1e-12)
        for x, y in zip(a[1:], b[1:]):
            np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


@needs_compiled
def test_gmm_kernels_underflow(rng):
    X = np.array([[1e3, -1e3], [0.0, 0.0]])
    w = np.array([0.5, 0.5])
    mu = np.array([[0.0, 0.0], [5.0, 5.0]])
    var = np.full((2, 2), 1e-6)
    for k in (_fallback, compiled):
        ll, S0, _, _ = k.gmm_accumulate(X, w, mu, var)
        assert np.isfinite(ll) and S0.sum() == pytest.approx(2.0, abs=1e-12)


@needs_compiled
def test_dual_cd_epochs_agree(rng):
    n, d = 400, 20
    X = np.ascontiguousarray(np.hstack([rng.normal(size=(n, d)), np.ones((n, 1))]))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    q = np.einsum("ij,ij->i", X, X)
    states = []
    for k in (_fallback, compiled):
        alpha, w = np.zeros(n), np.zeros(d + 1)
        r = np.random.default_rng(0)
        pgs = [k.dual_cd_epoch(X, y, alpha, w, q, 1.0, r.permutation(n).astype(np.int64)) for _ in range(5)]
        states.append((alpha, w, pgs))
    np.testing.assert_allclose(states[0][0], states[1][0], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(states[0][1], states[1][1], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(states[0][2], states[1][2], rtol=1e-8, atol=1e-10)


@needs_compiled
def test_shrinking_epochs_agree(rng):
    n, d = 400, 20
    X = np.ascontiguousarray(np.hstack([rng.normal(size=(n, d)), np.ones((n, 1))]))
    y = np.where(X[:, 0] + 0.5 * rng.normal(size=n) > 0, 1.0, -1.0)
    q = np.einsum("ij,ij->i", X, X)
    states = []
    for k in (_fallback, compiled):
        alpha, w, active = np.zeros(n), np.zeros(d + 1), np.ones(n, dtype=np.uint8)
        r = np.random.default_rng(0)
        hi, lo, pgs = np.inf, -np.inf, []
        for _ in range(6):
            idx = np.flatnonzero(active)
            pg = k.dual_cd_epoch_shrink(X, y, alpha, w, q, 1.0, idx[r.permutation(idx.size)].astype(np.int64),
                                        active, hi, lo)
            hi, lo = (pg[0] if pg[0] > 0 else np.inf), (pg[1] if pg[1] < 0 else -np.inf)
            pgs.append(pg)
        states.append((alpha, w, active.copy(), pgs))
    np.testing.assert_allclose(states[0][0], states[1][0], rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(states[0][1], states[1][1], rtol=1e-9, atol=1e-12)
    np.testing.assert_array_equal(states[0][2], states[1][2])
    assert states[0][2].sum() < n  # something was shrunk


def test_shrinking_reaches_the_same_optimum(rng):
    from lpmodrec.classifier import _fit_binary

    n, d, C = 600, 10, 1.0
    X = np.ascontiguousarray(np.hstack([rng.normal(size=(n, d)), np.ones((n, 1))]))
    y = np.where(X[:, 0] + X[:, 1] + rng.normal(size=n) > 0, 1.0, -1.0)

    def primal(w):
        return 0.5 * w @ w + C * np.maximum(0.0, 1.0 - y * (X @ w)).sum()

    w_shrink, _ = _fit_binary(X, y, C, np.random.default_rng(1), _fallback, 2000, 1e-6)
    alpha, w = np.zeros(n), np.zeros(d + 1)
    q = np.einsum("ij,ij->i", X, X)
    r = np.random.default_rng(1)
    for _ in range(2000):
        hi, lo = _fallback.dual_cd_epoch(X, y, alpha, w, q, C, r.permutation(n).astype(np.int64))
        if hi - lo < 1e-6:
            break
    assert primal(w_shrink) == pytest.approx(primal(w), rel=1e-6)


@needs_compiled
def test_end_to_end_agreement(rng):
    x = generate_instance(SimConfig(Modulation.QAM16, 10.0, rng_seed=3))
    dicts = [GmmDictionary(rng.dirichlet(np.ones(8)), rng.normal(size=(8, 3)),
                           rng.uniform(0.1, 1, size=(8, 3)), t) for t in SeriesTag]
    a = encode_instance(*dicts, x, kernels=_fallback).values
    b = encode_instance(*dicts, x, kernels=compiled).values
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)
    S = rng.normal(size=(600, 2))
    ga, _ = fit_gmm(S, 3, seed=1, kernels=_fallback, max_iter=20)
    gb, _ = fit_gmm(S, 3, seed=1, kernels=compiled, max_iter=20)
    np.testing.assert_allclose(ga.means, gb.means, rtol=1e-7, atol=1e-9)
    F = rng.normal(size=(90, 4))
    lab = list(np.repeat(["p", "q", "r"], 30))
    ma = train_svm(F + np.repeat(np.eye(3, 4), 30, axis=0), lab, kernels=_fallback)
    mb = train_svm(F + np.repeat(np.eye(3, 4), 30, axis=0), lab, kernels=compiled)
    np.testing.assert_allclose(ma.weights, mb.weights, rtol=1e-6, atol=1e-8)
