import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eelsvae import pca
from eelsvae.errors import ConfigError, DimensionError


def eig_components(X, k):
    """Independent oracle: eigenvectors of the sample covariance."""
    C = np.cov(X, rowvar=False)
    w, v = np.linalg.eigh(C)
    order = np.argsort(w)[::-1][:k]
    return w[order], v[:, order].T


def match_up_to_sign(a, b):
    signs = np.sign(np.sum(a * b, axis=1))
    return np.max(np.abs(a - signs[:, None] * b))


def test_round_robin_covers_all_pairs():
    for n in (2, 4, 8, 10):
        seen = set()
        for p, q in pca._round_robin(n):
            assert len(set(p) | set(q)) == n
            seen |= set(zip(p.tolist(), q.tolist()))
        assert seen == {(i, j) for i in range(n) for j in range(i + 1, n)}


def test_jacobi_singular_values_vs_lapack():
    rng = np.random.default_rng(0)
    for shape in [(40, 7), (7, 12), (15, 15), (1, 5), (5, 1)]:
        a = rng.standard_normal(shape)
        s, _ = pca.jacobi_svd(a)
        ref = np.linalg.svd(a, compute_uv=False)
        np.testing.assert_allclose(s[:ref.size], ref, rtol=1e-11, atol=1e-12)


def test_rank_one():
    rng = np.random.default_rng(1)
    u, v = rng.standard_normal(60), rng.standard_normal(20)
    model = pca.fit(np.outer(u, v), 1)
    cos = abs(model.components[0] @ v) / np.linalg.norm(v)
    assert cos > 1 - 1e-10


def test_full_rank_reconstruction():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((30, 12))
    model = pca.fit(X, 12)
    rec = pca.reconstruct(X, model)
    assert np.linalg.norm(rec - X) / np.linalg.norm(X) < 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_eigh_oracle(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((100, 32)) * np.linspace(3, 0.2, 32)
    for k in (3, 4, 5):
        model = pca.fit(X, k)
        w, v = eig_components(X, k)
        assert match_up_to_sign(model.components, v) < 1e-8
        np.testing.assert_allclose(model.explained_variance, w, rtol=1e-10)


def test_model_invariants():
    rng = np.random.default_rng(3)
    model = pca.fit(rng.standard_normal((50, 20)), 6)
    np.testing.assert_allclose(model.components @ model.components.T, np.eye(6), atol=1e-10)
    assert np.all(np.diff(model.explained_variance) <= 0)
    big = np.argmax(np.abs(model.components), axis=1)
    assert np.all(model.components[np.arange(6), big] > 0)


def test_k_too_large():
    with pytest.raises(ConfigError):
        pca.fit(np.ones((4, 10)), 5)


def test_dimension_mismatch():
    model = pca.fit(np.random.default_rng(0).standard_normal((10, 5)), 2)
    with pytest.raises(DimensionError):
        pca.reconstruct(np.ones((3, 6)), model)


def test_k_zero_gives_mean():
    X = np.random.default_rng(4).standard_normal((10, 5))
    model = pca.fit(X, 0)
    rec = pca.reconstruct(X, model)
    np.testing.assert_allclose(rec, np.broadcast_to(X.mean(axis=0), X.shape))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(2, 9), st.integers(1, 4))
def test_projection_properties(seed, N, E, k):
    k = min(k, N, E)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((N, E))
    model = pca.fit(X, k)
    rec = pca.reconstruct(X, model)
    assert np.max(np.abs(pca.reconstruct(rec, model) - rec)) < 1e-10
    resid = X - rec
    assert np.max(np.abs(resid @ model.components.T)) < 1e-10
    in_span = model.mean_spectrum + rng.standard_normal((3, k)) @ model.components
    assert np.max(np.abs(pca.reconstruct(in_span, model) - in_span)) < 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_row_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((25, 8)) * np.arange(8, 0, -1)
    a = pca.fit(X, 3)
    b = pca.fit(X[rng.permutation(25)], 3)
    assert np.max(np.abs(a.components - b.components)) < 1e-9
    np.testing.assert_allclose(a.explained_variance, b.explained_variance, rtol=1e-10)


def test_beats_random_projections():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 10)) * np.linspace(4, 0.5, 10)
    k = 3
    model = pca.fit(X, k)
    best = np.linalg.norm(X - pca.reconstruct(X, model))
    Xc = X - X.mean(axis=0)
    for _ in range(200):
        Q, _ = np.linalg.qr(rng.standard_normal((10, k)))
        other = np.linalg.norm(Xc - Xc @ Q @ Q.T)
        assert best <= other + 1e-12


def test_fit_many_shares_components():
    X = np.random.default_rng(6).standard_normal((40, 12))
    models = pca.fit_many(X, (3, 4, 5))
    np.testing.assert_array_equal(models[3].components, models[5].components[:3])
    assert [m.k for m in models.values()] == [3, 4, 5]


def test_export_csv(tmp_path):
    X = np.random.default_rng(7).standard_normal((20, 6))
    model = pca.fit(X, 2)
    pca.export_csv(model, tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert len(rows) == 4
    np.testing.assert_array_equal([float(v) for v in rows[0].split(",")], model.mean_spectrum)
    ev = rows[3].split(",")
    assert [float(v) for v in ev[:2]] == list(model.explained_variance) and ev[2:] == [""] * 4
