"""The standard synthetic study: one bulk world, one trained model, four experiments.

Training uses a bulk cube; every experiment injects into a second, held-out
cube of the same world so the model never sees the spectra it scores.
The latent diagnostic tiles a larger third cube into 64 disjoint shards.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import cvae, detect, latentdiag, pipeline, synth
from .config import substream
from .datacube import Datacube, EnergyAxis, energy_window, extract_shards


def _bulk_model() -> synth.SpectrumModel:
    # mild smooth drift and thickness fields give the encoder something to describe per shard
    return synth.SpectrumModel(jitter=0.1, energy_drift_eV=0.1, thickness_variation=0.3)


def _train_config() -> cvae.TrainConfig:
    return cvae.TrainConfig(epochs=120, batch_size=2, seed=0)


@dataclass
class StudyConfig:
    width: int = 48
    height: int = 48
    model: synth.SpectrumModel = field(default_factory=_bulk_model)
    train_seed: int = 1
    test_seed: int = 2
    heldout_seed: int = 3
    heldout_size: int = 192  # 8 x 8 disjoint shards
    window_start_eV: float = 688.0
    L: int = 96
    train_stride: int = 4
    train: cvae.TrainConfig = field(default_factory=_train_config)
    shift_eV: float = 2.5
    segment: tuple[float, float] = (700.0, 730.0)
    anomaly_fraction: float = 0.03
    cluster_radius: int = 3
    anomaly_seed: int = 5
    magnitudes: tuple[float, ...] = tuple(1.0 + 0.5 * i for i in range(11))
    pca_ks: tuple[int, ...] = (3, 4, 5)
    window_eV: tuple[float, float] = pipeline.FE_L_WINDOW_EV
    bins: int = detect.DEFAULT_BINS
    gamma: float = detect.DEFAULT_GAMMA
    pr_steps: int = 200
    latent_pairs: int = 64

    def axis(self) -> EnergyAxis:
        return synth.default_axis()

    def model_config(self) -> cvae.ModelConfig:
        axis = self.axis()
        start, _ = energy_window(axis, self.window_start_eV, axis.end_eV)
        return cvae.ModelConfig(L=self.L, channel_start=start)


def train_cube(cfg: StudyConfig) -> Datacube:
    return synth.generate_bulk(cfg.model, cfg.width, cfg.height, cfg.axis(), seed=cfg.train_seed)


def test_cube(cfg: StudyConfig) -> Datacube:
    return synth.generate_bulk(cfg.model, cfg.width, cfg.height, cfg.axis(), seed=cfg.test_seed)


def heldout_cube(cfg: StudyConfig) -> Datacube:
    n = cfg.heldout_size
    return synth.generate_bulk(cfg.model, n, n, cfg.axis(), seed=cfg.heldout_seed)


def anomaly_spec(cfg: StudyConfig, shift_eV: float | None = None) -> synth.AnomalySpec:
    """Clusters drawn as the CLI draws them for the same seed."""
    clusters = synth.random_clusters(cfg.width, cfg.height, cfg.anomaly_fraction, cfg.cluster_radius,
                                     substream(cfg.anomaly_seed, "clusters"))
    shift = cfg.shift_eV if shift_eV is None else shift_eV
    return synth.AnomalySpec(shift, tuple(cfg.segment), clusters, "background", cfg.anomaly_seed)


def train_model(cfg: StudyConfig, progress=None) -> tuple[cvae.ModelParams, list[cvae.EpochStats]]:
    mc = cfg.model_config()
    shards = extract_shards(cvae.model_input(train_cube(cfg), mc), cfg.train_stride, mc.shard)
    return cvae.train(shards, cfg.train, mc, progress=progress)


def detection_run(cfg: StudyConfig, params: cvae.ModelParams, shift_eV: float | None = None):
    """(results per method, truth mask) for one injected copy of the test cube.

    A zero shift scores the clean cube against an empty truth.
    """
    spec = anomaly_spec(cfg, shift_eV)
    cube, mask = synth.inject_peak_shift(test_cube(cfg), spec)
    if spec.shift_eV == 0:
        mask = np.zeros_like(mask)
    res = pipeline.run_methods(cube, mask, params, cfg.pca_ks, cfg.window_eV, cfg.bins, cfg.gamma)
    return res, mask


def magnitude_sweep(cfg: StudyConfig, params: cvae.ModelParams, magnitudes=None):
    mags = cfg.magnitudes if magnitudes is None else magnitudes
    return pipeline.f1_sweep(test_cube(cfg), anomaly_spec(cfg), mags, params, cfg.pca_ks,
                             cfg.window_eV, cfg.bins, cfg.gamma)


def f1_table(rows) -> dict[str, dict[float, float]]:
    """method -> {magnitude: F1} from f1_sweep rows."""
    out: dict[str, dict[float, float]] = {}
    for key, rep in rows:
        out.setdefault(key["method"], {})[key["magnitude"]] = rep.f1
    return out


def pr_curves(results: dict, truth: np.ndarray, steps: int = 200) -> dict[str, list]:
    return {name: detect.pr_curve(r.pmap, truth, steps) for name, r in results.items()}


def class_separation(values: np.ndarray, truth: np.ndarray) -> float:
    """Gap between bulk and anomalous mean PCC in units of the pooled standard deviation."""
    bulk, anom = values[~truth], values[truth]
    nb, na = bulk.size, anom.size
    if nb < 2 or na < 2:
        return math.nan
    pooled = math.sqrt(((nb - 1) * bulk.var(ddof=1) + (na - 1) * anom.var(ddof=1)) / (nb + na - 2))
    gap = float(bulk.mean() - anom.mean())
    return math.inf if pooled == 0 else gap / pooled


def latent_matrices(cfg: StudyConfig, params: cvae.ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """(similarity at the study shift, similarity of the zero-shift control)."""
    cube = heldout_cube(cfg)
    out = []
    for shift in (cfg.shift_eV, 0.0):
        pairs = latentdiag.make_pairs(cube, params.config, shift, cfg.segment, cfg.latent_pairs,
                                      cfg.anomaly_fraction, cfg.cluster_radius, cfg.anomaly_seed)
        out.append(latentdiag.similarity_matrix(pairs, params))
    return out[0], out[1]
