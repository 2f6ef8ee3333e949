"""Synthetic bulk EELS-SI datacubes and clustered peak-shift anomalies."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from . import config as kv
from .datacube import Datacube, EnergyAxis, energy_window
from .errors import ConfigError

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
FILL_POLICIES = ("background", "edge", "zero")


def default_axis() -> EnergyAxis:
    # 450-769.5 eV covers O K (~532 eV) and Fe L3/L2 (~708/721 eV)
    return EnergyAxis(450.0, 0.5, 640)


@dataclass
class SpectrumModel:
    """Power-law background plus Gaussian white lines.

    ``peaks`` holds (center_eV, fwhm_eV, amplitude_counts). ``jitter`` scales
    each peak amplitude per pixel by an independent uniform factor in
    [1 - jitter, 1 + jitter]. The three ``*_variation``/``drift`` terms add
    spatially smooth structure (Gaussian random fields with correlation length
    ``field_scale_px``): a shift of all edge energies and a modulation of the
    edge-to-background ratio, as thickness and energy drift do in real scans.
    """
    background_amplitude: float = 1500.0 * 700.0 ** 3
    background_exponent: float = 3.0
    peaks: list[tuple[float, float, float]] = field(default_factory=lambda: [
        (532.0, 2.0, 800.0),
        (708.0, 1.5, 3000.0),
        (721.0, 1.8, 1500.0),
    ])
    jitter: float = 0.05
    energy_drift_eV: float = 0.0
    thickness_variation: float = 0.0
    field_scale_px: float = 8.0

    def validate(self, axis: EnergyAxis) -> None:
        if not self.background_amplitude > 0 or not self.background_exponent > 0:
            raise ConfigError("background amplitude and exponent must be positive")
        if not 0.0 <= self.jitter < 1.0:
            raise ConfigError(f"jitter must lie in [0, 1), got {self.jitter}")
        if self.thickness_variation < 0 or self.energy_drift_eV < 0:
            raise ConfigError("spatial variation amplitudes must be non-negative")
        if axis.offset_eV <= 0:
            raise ConfigError("energy axis must start above 0 eV for a power-law background")
        lo, hi = axis.offset_eV, axis.end_eV
        for center, width, amp in self.peaks:
            if not lo <= center <= hi:
                raise ConfigError(f"peak at {center} eV lies outside the axis [{lo}, {hi}] eV")
            if width <= 0 or amp < 0:
                raise ConfigError(f"peak at {center} eV needs positive width and amplitude >= 0")

    def background(self, energies: np.ndarray) -> np.ndarray:
        return self.background_amplitude * energies ** (-self.background_exponent)

    def evaluate(self, axis: EnergyAxis) -> np.ndarray:
        """Noiseless, unjittered spectrum on ``axis``."""
        e = axis.energies
        out = self.background(e)
        for center, width, amp in self.peaks:
            sigma = width * FWHM_TO_SIGMA
            out = out + amp * np.exp(-0.5 * ((e - center) / sigma) ** 2)
        return out


def _smooth_field(rng: np.random.Generator, height: int, width: int, scale: float) -> np.ndarray:
    noise = rng.standard_normal((height, width))
    f = gaussian_filter(noise, sigma=scale, mode="wrap") if scale > 0 else noise
    std = f.std()
    return (f - f.mean()) / std if std > 0 else np.zeros_like(f)


def noiseless_cube(model: SpectrumModel, width: int, height: int, axis: EnergyAxis,
                   rng: np.random.Generator) -> np.ndarray:
    model.validate(axis)
    e = axis.energies
    npk = len(model.peaks)
    jit = rng.uniform(1.0 - model.jitter, 1.0 + model.jitter, size=(height, width, npk))
    drift = model.energy_drift_eV * _smooth_field(rng, height, width, model.field_scale_px)
    thick = 1.0 + model.thickness_variation * _smooth_field(rng, height, width, model.field_scale_px)
    thick = np.maximum(thick, 0.1)
    out = np.broadcast_to(model.background(e), (height, width, e.size)).copy()
    for p, (center, width_eV, amp) in enumerate(model.peaks):
        sigma = width_eV * FWHM_TO_SIGMA
        scale = amp * jit[:, :, p] * thick
        out += scale[..., None] * np.exp(-0.5 * ((e - center - drift[..., None]) / sigma) ** 2)
    return out


def generate_bulk(model: SpectrumModel, width: int, height: int, axis: EnergyAxis | None = None,
                  seed: int = 0, poisson: bool = True) -> Datacube:
    """Bulk (anomaly-free) cube: jittered model per pixel, then Poisson counts.

    A pure function of (model, dims, axis, seed).
    """
    axis = axis or default_axis()
    if width < 1 or height < 1:
        raise ConfigError("cube dimensions must be positive")
    rng = kv.substream(seed, "gen")
    mean = noiseless_cube(model, width, height, axis, rng)
    data = rng.poisson(mean).astype(np.float64) if poisson else mean
    return Datacube(data, axis)


# ---------------------------------------------------------------- anomalies

@dataclass
class AnomalySpec:
    shift_eV: float = 2.5
    segment: tuple[float, float] = (700.0, 730.0)
    clusters: list[tuple[int, int, int]] = field(default_factory=list)  # (cx, cy, radius)
    fill_policy: str = "background"
    seed: int = 0


def disc_mask(width: int, height: int, clusters) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    mask = np.zeros((height, width), dtype=bool)
    for cx, cy, r in clusters:
        mask |= (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    return mask


def random_clusters(width: int, height: int, fraction: float, radius: int,
                    rng: np.random.Generator, max_tries: int = 10_000) -> list[tuple[int, int, int]]:
    """Non-overlapping discs of ``radius`` until at least ``fraction`` of pixels are covered."""
    if not 0 < fraction < 1:
        raise ConfigError(f"anomaly fraction must lie in (0, 1), got {fraction}")
    lo_x, hi_x = min(radius, width - 1), max(width - 1 - radius, min(radius, width - 1))
    lo_y, hi_y = min(radius, height - 1), max(height - 1 - radius, min(radius, height - 1))
    clusters: list[tuple[int, int, int]] = []
    target = fraction * width * height
    for _ in range(max_tries):
        if disc_mask(width, height, clusters).sum() >= target:
            return clusters
        cx, cy = int(rng.integers(lo_x, hi_x + 1)), int(rng.integers(lo_y, hi_y + 1))
        # keep a one-pixel gap so discs stay distinct clusters
        if all((cx - x) ** 2 + (cy - y) ** 2 > (r + radius + 1) ** 2 for x, y, r in clusters):
            clusters.append((cx, cy, radius))
    raise ConfigError(f"could not place clusters covering {fraction:.1%} of a {width}x{height} cube")


def _segment_channels(cube: Datacube, spec: AnomalySpec) -> tuple[int, int, int]:
    lo, hi = spec.segment
    start, stop = energy_window(cube, lo, hi)
    lag = int(round(spec.shift_eV / cube.axis.dispersion_eV_per_channel))
    if lag < 0:
        raise ConfigError("peak shifts move content toward higher energy; shift must be >= 0")
    if stop + lag > cube.channels:
        raise ConfigError(
            f"shift of {spec.shift_eV} eV pushes segment [{lo}, {hi}] eV off the energy axis")
    if spec.fill_policy not in FILL_POLICIES:
        raise ConfigError(f"fill_policy must be one of {FILL_POLICIES}, got {spec.fill_policy!r}")
    return start, stop, lag


def inject_peak_shift(cube: Datacube, spec: AnomalySpec) -> tuple[Datacube, np.ndarray]:
    """Move the segment's content ``round(shift/dispersion)`` channels up inside the clusters.

    Vacated channels take the level just below the segment (``background``,
    with Poisson noise on count data), that level without noise (``edge``),
    or zero. Pixels outside the mask are left bit-identical.
    """
    for cx, cy, r in spec.clusters:
        if not (0 <= cx < cube.width and 0 <= cy < cube.height) or r < 0:
            raise ConfigError(f"cluster ({cx}, {cy}, r={r}) lies outside the {cube.width}x{cube.height} cube")
    start, stop, lag = _segment_channels(cube, spec)
    mask = disc_mask(cube.width, cube.height, spec.clusters)
    out = cube.intensities.copy()
    if lag == 0 or not mask.any():
        return Datacube(out, cube.axis, cube.normalized), mask
    rng = kv.substream(spec.seed, "inject")
    ys, xs = np.nonzero(mask)
    spectra = cube.intensities[ys, xs]
    shifted = spectra.copy()
    shifted[:, start + lag:stop + lag] = spectra[:, start:stop]
    if spec.fill_policy == "zero":
        fill = np.zeros((len(ys), lag))
    else:
        ref = spectra[:, max(0, start - 4):start] if start > 0 else spectra[:, start:start + 1]
        level = np.broadcast_to(ref.mean(axis=1, keepdims=True), (len(ys), lag))
        if spec.fill_policy == "background" and not cube.normalized:
            fill = rng.poisson(level).astype(np.float64)
        else:
            fill = level.copy()
    shifted[:, start:start + lag] = fill
    out[ys, xs] = shifted
    return Datacube(out, cube.axis, cube.normalized), mask


def sweep_shifts(cube: Datacube, base_spec: AnomalySpec, magnitudes) -> list[tuple[Datacube, np.ndarray]]:
    """One injected cube per magnitude; clusters and seed are shared so only the shift varies."""
    specs = [replace(base_spec, shift_eV=float(m)) for m in magnitudes]
    for s in specs:
        _segment_channels(cube, s)
    return [inject_peak_shift(cube, s) for s in specs]


# ---------------------------------------------------------------- config files

MODEL_KEYS = ("background_amplitude", "background_exponent", "peaks", "jitter",
              "energy_drift_eV", "thickness_variation", "field_scale_px")
AXIS_KEYS = ("offset_eV", "dispersion_eV", "channels")
ANOMALY_KEYS = ("shift_eV", "segment", "clusters", "fill_policy", "anomaly_fraction",
                "cluster_radius")


def model_from_kv(values: dict) -> SpectrumModel:
    d = SpectrumModel()
    try:
        peaks = kv.tuples(values["peaks"], 3) if "peaks" in values else d.peaks
    except ValueError as exc:
        raise ConfigError(f"bad value for 'peaks': {exc}") from exc
    return SpectrumModel(
        background_amplitude=kv.get(values, "background_amplitude", float, d.background_amplitude),
        background_exponent=kv.get(values, "background_exponent", float, d.background_exponent),
        peaks=peaks,
        jitter=kv.get(values, "jitter", float, d.jitter),
        energy_drift_eV=kv.get(values, "energy_drift_eV", float, d.energy_drift_eV),
        thickness_variation=kv.get(values, "thickness_variation", float, d.thickness_variation),
        field_scale_px=kv.get(values, "field_scale_px", float, d.field_scale_px),
    )


def axis_from_kv(values: dict) -> EnergyAxis:
    d = default_axis()
    try:
        return EnergyAxis(kv.get(values, "offset_eV", float, d.offset_eV),
                          kv.get(values, "dispersion_eV", float, d.dispersion_eV_per_channel),
                          kv.get(values, "channels", int, d.channels))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def anomaly_from_kv(values: dict, width: int, height: int, seed: int) -> AnomalySpec:
    seg = kv.floats(values["segment"]) if "segment" in values else [700.0, 730.0]
    if len(seg) != 2:
        raise ConfigError("segment needs two energies: lo, hi")
    if "clusters" in values:
        try:
            clusters = [tuple(int(v) for v in c) for c in kv.tuples(values["clusters"], 3)]
        except ValueError as exc:
            raise ConfigError(f"bad value for 'clusters': {exc}") from exc
    else:
        fraction = kv.get(values, "anomaly_fraction", float, 0.03)
        radius = kv.get(values, "cluster_radius", int, 3)
        clusters = random_clusters(width, height, fraction, radius, kv.substream(seed, "clusters"))
    return AnomalySpec(shift_eV=kv.get(values, "shift_eV", float, 2.5), segment=(seg[0], seg[1]),
                       clusters=clusters, fill_policy=kv.get(values, "fill_policy", str, "background"),
                       seed=seed)
