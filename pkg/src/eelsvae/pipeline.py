"""End-to-end detection runs: reconstruct with the VAE or PCA, score, classify."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import cvae, detect, pca
from .datacube import Datacube, energy_window
from .synth import AnomalySpec, sweep_shifts

FE_L_WINDOW_EV = (690.0, 730.0)


def vae_reconstruction(cube: Datacube, params: cvae.ModelParams, stride: int | None = None):
    """(model-space original, reconstruction) on the VAE's channel range."""
    return cvae.model_input(cube, params.config), cvae.reconstruct_cube(cube, params, stride)


def pca_reconstruction(cube_n: Datacube, model: pca.PcaModel) -> Datacube:
    rec = pca.reconstruct(cube_n.spectra(), model)
    return Datacube(rec.reshape(cube_n.intensities.shape), cube_n.axis)


def pca_reconstructions(cube_n: Datacube, ks=(3, 4, 5)) -> dict[int, Datacube]:
    """PCA fitted on the cube itself (unsupervised), one reconstruction per k."""
    models = pca.fit_many(cube_n.spectra(), ks)
    return {k: pca_reconstruction(cube_n, m) for k, m in models.items()}


def score(original: Datacube, recon: Datacube, window_eV=FE_L_WINDOW_EV) -> detect.PccMap:
    lo, hi = energy_window(original, *window_eV)
    return detect.pcc_map(original, recon, (lo, hi))


@dataclass
class MethodResult:
    method: str
    pmap: detect.PccMap
    report: detect.DetectionReport


def run_methods(cube: Datacube, truth: np.ndarray, params: cvae.ModelParams | None,
                pca_ks=(3, 4, 5), window_eV=FE_L_WINDOW_EV, bins: int = detect.DEFAULT_BINS,
                gamma: float = detect.DEFAULT_GAMMA, stride: int | None = None,
                pca_fit_cube: Datacube | None = None) -> dict[str, MethodResult]:
    """Score the VAE and each PCA variant on one cube.

    PCA is fitted on ``cube`` itself unless ``pca_fit_cube`` (e.g. a bulk
    cube) is given. Both methods see the same cropped, normalized spectra.
    """
    results = {}
    if params is not None:
        original, recon = vae_reconstruction(cube, params, stride)
        cube_n = original
        pm = score(original, recon, window_eV)
        results["vae"] = MethodResult("vae", pm, detect.detect(pm, truth, bins, gamma))
    else:
        from .datacube import normalize_spectra
        cube_n = normalize_spectra(cube)
    if pca_ks:
        if pca_fit_cube is not None:
            fit_n = cvae.model_input(pca_fit_cube, params.config) if params else pca_fit_cube
            models = pca.fit_many(fit_n.spectra(), pca_ks)
            recons = {k: pca_reconstruction(cube_n, m) for k, m in models.items()}
        else:
            recons = pca_reconstructions(cube_n, pca_ks)
        for k, rec in recons.items():
            pm = score(cube_n, rec, window_eV)
            results[f"pca{k}"] = MethodResult(f"pca{k}", pm, detect.detect(pm, truth, bins, gamma))
    return results


def f1_sweep(bulk: Datacube, base_spec: AnomalySpec, magnitudes, params: cvae.ModelParams,
             pca_ks=(3, 4, 5), window_eV=FE_L_WINDOW_EV, bins: int = detect.DEFAULT_BINS,
             gamma: float = detect.DEFAULT_GAMMA, keep_maps: bool = False):
    """F1 per (method, magnitude) over injected copies of one bulk cube.

    A zero shift leaves the cube untouched, so there is no positive class:
    F1 is reported as NaN (not applicable) and the predicted mask is scored
    against an empty truth.
    """
    rows = []
    maps = {}
    for m, (cube, mask) in zip(magnitudes, sweep_shifts(bulk, base_spec, magnitudes)):
        truth = mask if m != 0 else np.zeros_like(mask)
        res = run_methods(cube, truth, params, pca_ks, window_eV, bins, gamma)
        for name, r in res.items():
            rep = r.report
            if m == 0:
                rep.f1 = math.nan
            rows.append(({"method": name, "magnitude": float(m)}, rep))
            if keep_maps:
                maps[(name, float(m))] = r.pmap
    return (rows, maps) if keep_maps else rows
