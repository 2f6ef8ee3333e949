import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eelsvae import cvae, latentdiag, synth
from eelsvae.datacube import EnergyAxis
from eelsvae.errors import ConfigError, UndefinedSimilarityError

CFG = cvae.ModelConfig(shard=8, L=16, channels=(2, 3), latent_dim=5, channel_start=0)


@pytest.fixture(scope="module")
def small_cube():
    # 16 channels at 0.5 eV from 700 eV: L3 inside, segment 701-704 shifts within the axis
    axis = EnergyAxis(700.0, 0.5, 16)
    model = synth.SpectrumModel(peaks=[(704.0, 1.5, 3000.0)])
    return synth.generate_bulk(model, 32, 16, axis, seed=1)


def test_cosine_examples():
    a = np.array([1.0, 2.0, -3.0])
    assert latentdiag.cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-15)
    assert latentdiag.cosine_similarity(a, 2 * a) == pytest.approx(1.0, abs=1e-15)
    assert latentdiag.cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0
    with pytest.raises(UndefinedSimilarityError):
        latentdiag.cosine_similarity(a, np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3).filter(lambda v: v == 0 or abs(v) > 1e-100), min_size=2, max_size=8),
       st.integers(0, 10**6))
def test_cosine_bounded(xs, seed):
    a = np.array(xs)
    if not np.any(a):
        return
    b = np.random.default_rng(seed).standard_normal(a.size)
    assert -1.0 <= latentdiag.cosine_similarity(a, b) <= 1.0


def test_pairs_layout(small_cube):
    pairs = latentdiag.make_pairs(small_cube, CFG, 2.5, (701, 704), n=8, fraction=0.05, radius=1)
    assert pairs.n == 8
    assert pairs.origins[:5] == [(0, 0), (8, 0), (16, 0), (24, 0), (0, 8)]
    assert pairs.bulk.shape == (8, 8, 8, 16)
    for b, i, m in zip(pairs.bulk, pairs.injected, pairs.masks):
        assert m.any()
        assert np.array_equal(b[~m], i[~m])
        assert np.all(np.any(b[m] != i[m], axis=-1))


def test_too_few_tiles(small_cube):
    with pytest.raises(ConfigError, match="8"):
        latentdiag.make_pairs(small_cube, CFG, n=9, radius=1, segment=(701, 704))


def test_zero_shift_diagonal_is_one(small_cube):
    params = cvae.init_params(CFG, 0)
    pairs = latentdiag.make_pairs(small_cube, CFG, 0.0, (701, 704), n=8, fraction=0.05, radius=1)
    M = latentdiag.similarity_matrix(pairs, params)
    assert M.shape == (8, 8)
    assert np.max(np.abs(np.diag(M) - 1.0)) < 1e-12
    assert np.all(np.abs(M) <= 1.0)


def test_matrix_is_pure_and_entrywise_cosine(small_cube):
    params = cvae.init_params(CFG, 1)
    pairs = latentdiag.make_pairs(small_cube, CFG, 2.5, (701, 704), n=4, fraction=0.05, radius=1)
    M = latentdiag.similarity_matrix(pairs, params)
    assert np.array_equal(M, latentdiag.similarity_matrix(pairs, params))
    mu_a = cvae.encode(pairs.bulk[2], params).mu
    mu_b = cvae.encode(pairs.injected[3], params).mu
    assert M[2, 3] == pytest.approx(latentdiag.cosine_similarity(mu_a, mu_b), abs=1e-12)


def test_margin_and_io(tmp_path):
    M = np.array([[1.0, 0.2], [0.4, 0.9]])
    diag, off = latentdiag.diagonal_margin(M)
    assert diag == pytest.approx(0.95) and off == pytest.approx(0.3)
    latentdiag.write_matrix_csv(M, tmp_path / "m.csv")
    np.testing.assert_array_equal(latentdiag.read_matrix_csv(tmp_path / "m.csv"), M)
    latentdiag.write_matrix_pgm(M, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n2 2\n65535\n")
