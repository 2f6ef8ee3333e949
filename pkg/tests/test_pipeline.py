import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest

from eelsvae import cvae, datacube, detect, pipeline, study, synth
from eelsvae.cli import main
from eelsvae.datacube import EnergyAxis

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

TINY = cvae.ModelConfig(shard=8, L=48, channels=(2, 3), latent_dim=4)


@pytest.fixture(scope="module")
def world():
    axis = EnergyAxis(690.0, 0.5, 64)
    model = synth.SpectrumModel(peaks=[(708.0, 1.5, 3000.0), (721.0, 1.8, 1500.0)], jitter=0.05)
    bulk = synth.generate_bulk(model, 24, 24, axis, seed=1)
    spec = synth.AnomalySpec(2.5, (700.0, 712.0), [(6, 6, 2), (17, 15, 2)])
    return bulk, spec


def test_score_identity_is_all_ones(world):
    bulk, _ = world
    n = datacube.normalize_spectra(bulk)
    pm = pipeline.score(n, n)
    assert np.all(pm.values == 1.0)
    assert detect.unimodality_check(pm.values)


def test_run_methods_layout(world):
    bulk, spec = world
    cube, mask = synth.inject_peak_shift(bulk, spec)
    params = cvae.init_params(TINY, 0)
    res = pipeline.run_methods(cube, mask, params, (3, 4), stride=8)
    assert list(res) == ["vae", "pca3", "pca4"]
    for r in res.values():
        assert r.pmap.values.shape == (24, 24)
        assert r.report.tp + r.report.fn == mask.sum()


def test_pca_sees_same_spectra_as_vae(world):
    bulk, _ = world
    params = cvae.init_params(dataclasses.replace(TINY, channel_start=4), 0)
    res = pipeline.run_methods(bulk, np.zeros((24, 24), bool), params, (5,))
    original = cvae.model_input(bulk, params.config)
    rec = pipeline.pca_reconstructions(original, (5,))[5]
    np.testing.assert_array_equal(res["pca5"].pmap.values, pipeline.score(original, rec).values)


def test_bulk_fitted_pca_misses_nothing_it_never_saw(world):
    bulk, spec = world
    cube, mask = synth.inject_peak_shift(bulk, spec)
    own = pipeline.run_methods(cube, mask, None, (3,))["pca3"].pmap.values
    fitted_on_bulk = pipeline.run_methods(cube, mask, None, (3,), pca_fit_cube=bulk)["pca3"].pmap.values
    # a basis learned without anomalies reconstructs them worse
    assert fitted_on_bulk[mask].mean() < own[mask].mean()


def test_f1_sweep_rows(world):
    bulk, spec = world
    params = cvae.init_params(TINY, 0)
    rows = pipeline.f1_sweep(bulk, spec, [0.0, 1.5, 3.0], params, (3,))
    assert [(k["method"], k["magnitude"]) for k, _ in rows] == [
        ("vae", 0.0), ("pca3", 0.0), ("vae", 1.5), ("pca3", 1.5), ("vae", 3.0), ("pca3", 3.0)]
    assert all(math.isnan(r.f1) for k, r in rows if k["magnitude"] == 0.0)
    assert all(r.tp == 0 for k, r in rows if k["magnitude"] == 0.0)
    table = study.f1_table(rows)
    assert set(table) == {"vae", "pca3"} and set(table["vae"]) == {0.0, 1.5, 3.0}


# ---------------------------------------------------------------- study wiring

def test_study_window_covers_pcc_window_and_shifts():
    cfg = study.StudyConfig()
    mc = cfg.model_config()
    axis = cfg.axis()
    lo = axis.energy(mc.channel_start)
    hi = axis.energy(mc.channel_start + mc.L - 1)
    assert lo <= cfg.window_eV[0] and hi >= cfg.window_eV[1]
    # the L2 line at 721 eV shifted by the largest magnitude stays on the model window
    assert hi >= 721.0 + max(cfg.magnitudes)
    assert cfg.magnitudes == tuple(np.arange(1.0, 6.01, 0.5))


def test_cli_gen_reproduces_study_cube(tmp_path):
    cfg = study.StudyConfig()
    path = tmp_path / "bulk.esi"
    assert main(["gen", "--config", str(CONFIGS / "bulk.cfg"), "--seed", str(cfg.train_seed),
                 "--out", str(path)]) == 0
    np.testing.assert_array_equal(datacube.load(path).intensities, study.train_cube(cfg).intensities)


def test_cli_inject_draws_study_clusters(tmp_path):
    cfg = study.StudyConfig()
    src = tmp_path / "bulk.esi"
    datacube.save(study.test_cube(cfg), src)
    out = tmp_path / "inj"
    assert main(["inject", "--config", str(CONFIGS / "inject.cfg"), "--seed", str(cfg.anomaly_seed),
                 "--out", str(out), "--set", f"input={src}"]) == 0
    _, mask = synth.inject_peak_shift(study.test_cube(cfg), study.anomaly_spec(cfg))
    from eelsvae.pgm import read_mask
    np.testing.assert_array_equal(read_mask(out / "mask.pgm"), mask)
    assert 0.03 <= mask.mean() < 0.04


def test_class_separation():
    truth = np.array([False] * 6 + [True] * 4)
    vals = np.array([1.0, 1.1, 0.9, 1.0, 1.1, 0.9, 0.0, 0.1, -0.1, 0.0])
    pooled = math.sqrt((5 * np.var(vals[:6], ddof=1) + 3 * np.var(vals[6:], ddof=1)) / 8)
    assert study.class_separation(vals, truth) == pytest.approx(1.0 / pooled)
    assert math.isnan(study.class_separation(vals, np.zeros(10, bool)))
