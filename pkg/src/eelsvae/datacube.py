"""EELS spectrum-image datacubes: data model, ESI1 I/O, normalization, shards.

Intensities are held as a (height, width, energy) float64 array, so the flat
index of (x, y, e) is ((y * W) + x) * E + e. Shard blocks use the same
(row, column, energy) order.
"""
from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import CoverageError, DegenerateSpectrumError, DimensionError, FormatError, WindowError

SHARD_SIZE = 24
MAGIC = b"ESI1"
_HEADER = struct.Struct("<4sIIIBdd")
HEADER_BYTES = _HEADER.size  # 33


@dataclass(frozen=True)
class EnergyAxis:
    offset_eV: float
    dispersion_eV_per_channel: float
    channels: int

    def __post_init__(self):
        if not self.dispersion_eV_per_channel > 0:
            raise ValueError("dispersion must be positive")
        if self.channels < 1:
            raise ValueError("axis needs at least one channel")

    def energy(self, e):
        return self.offset_eV + np.asarray(e) * self.dispersion_eV_per_channel

    @property
    def energies(self) -> np.ndarray:
        return self.energy(np.arange(self.channels))

    @property
    def end_eV(self) -> float:
        return float(self.energy(self.channels - 1))

    def crop(self, start: int, stop: int) -> "EnergyAxis":
        return EnergyAxis(float(self.energy(start)), self.dispersion_eV_per_channel, stop - start)


@dataclass
class Datacube:
    intensities: np.ndarray  # (H, W, E)
    axis: EnergyAxis
    normalized: bool = False

    def __post_init__(self):
        self.intensities = np.asarray(self.intensities, dtype=np.float64)
        if self.intensities.ndim != 3:
            raise DimensionError(f"datacube needs a (H, W, E) array, got {self.intensities.shape}")
        if self.intensities.shape[2] != self.axis.channels:
            raise DimensionError(
                f"energy axis has {self.axis.channels} channels, data has {self.intensities.shape[2]}")

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def channels(self) -> int:
        return self.intensities.shape[2]

    def spectrum(self, x: int, y: int) -> np.ndarray:
        return self.intensities[y, x]

    def spectra(self) -> np.ndarray:
        """(W*H, E) view in row-major pixel order."""
        return self.intensities.reshape(-1, self.channels)

    def copy(self) -> "Datacube":
        return Datacube(self.intensities.copy(), self.axis, self.normalized)


# ---------------------------------------------------------------- ESI1 format

def dumps(cube: Datacube) -> bytes:
    data = cube.intensities
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data.reshape(-1)))[0])
        raise FormatError("refusing to write non-finite intensity", HEADER_BYTES + 4 * bad)
    header = _HEADER.pack(MAGIC, cube.width, cube.height, cube.channels, int(cube.normalized),
                          cube.axis.offset_eV, cube.axis.dispersion_eV_per_channel)
    return header + data.astype("<f4").tobytes()


def loads(buf: bytes) -> Datacube:
    if len(buf) < HEADER_BYTES:
        raise FormatError(f"truncated header: {len(buf)} of {HEADER_BYTES} bytes", len(buf))
    magic, W, H, E, flag, offset, dispersion = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if flag not in (0, 1):
        raise FormatError(f"unknown normalization flag {flag}", 16)
    if not (math.isfinite(offset) and math.isfinite(dispersion) and dispersion > 0):
        raise FormatError("invalid energy calibration", 17)
    if W == 0 or H == 0 or E == 0:
        raise FormatError(f"empty cube dimensions {W}x{H}x{E}", 4)
    need = W * H * E * 4
    have = len(buf) - HEADER_BYTES
    if have < need:
        raise FormatError(f"truncated payload: header claims {need} bytes, found {have}", len(buf))
    if have > need:
        raise FormatError(f"{have - need} trailing bytes after payload", HEADER_BYTES + need)
    data = np.frombuffer(buf, dtype="<f4", count=W * H * E, offset=HEADER_BYTES)
    finite = np.isfinite(data)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise FormatError("non-finite intensity", HEADER_BYTES + 4 * bad)
    return Datacube(data.astype(np.float64).reshape(H, W, E),
                    EnergyAxis(offset, dispersion, E), bool(flag))


def save(cube: Datacube, destination) -> None:
    """Write ``cube`` as ESI1 to a path or binary stream.

    Intensities are stored as float32; counts round-trip exactly.
    """
    blob = dumps(cube)
    if isinstance(destination, (str, Path)):
        Path(destination).write_bytes(blob)
    else:
        destination.write(blob)


def load(source) -> Datacube:
    if isinstance(source, (str, Path)):
        return loads(Path(source).read_bytes())
    if isinstance(source, (bytes, bytearray)):
        return loads(bytes(source))
    return loads(source.read())


def write_spectrum_csv(path, axis: EnergyAxis, spectrum: np.ndarray) -> None:
    buf = io.StringIO()
    buf.write("energy_eV,intensity\n")
    for energy, value in zip(axis.energies, np.asarray(spectrum, dtype=np.float64)):
        buf.write(f"{float(energy)!r},{float(value)!r}\n")
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------- spectra

def normalize_spectra(cube: Datacube) -> Datacube:
    """Divide each spectrum by its own channel sum."""
    totals = cube.intensities.sum(axis=2)
    if np.any(totals <= 0):
        y, x = np.argwhere(totals <= 0)[0]
        raise DegenerateSpectrumError(int(x), int(y))
    out = cube.intensities / totals[..., None]
    # a second division pulls the sums to 1 within a couple of ulps
    out /= out.sum(axis=2, keepdims=True)
    return Datacube(out, cube.axis, normalized=True)


def energy_window(cube_or_axis, lo_eV: float, hi_eV: float) -> tuple[int, int]:
    """Half-open channel range whose energies lie inside [lo_eV, hi_eV]."""
    axis = cube_or_axis.axis if isinstance(cube_or_axis, Datacube) else cube_or_axis
    if not lo_eV < hi_eV:
        raise WindowError(f"empty energy window [{lo_eV}, {hi_eV}]")
    d = axis.dispersion_eV_per_channel
    # guard against (690 - 600) / 0.5 landing at 179.99999999
    eps = 1e-9
    start = math.ceil((lo_eV - axis.offset_eV) / d - eps)
    stop = math.floor((hi_eV - axis.offset_eV) / d + eps) + 1
    start, stop = max(start, 0), min(stop, axis.channels)
    if start >= stop:
        raise WindowError(
            f"window [{lo_eV}, {hi_eV}] eV does not overlap axis "
            f"[{axis.offset_eV}, {axis.end_eV}] eV")
    return start, stop


def crop_energy(cube: Datacube, start: int, stop: int) -> Datacube:
    if not 0 <= start < stop <= cube.channels:
        raise WindowError(f"channel range [{start}, {stop}) outside [0, {cube.channels})")
    # a cropped spectrum no longer sums to one
    return Datacube(cube.intensities[:, :, start:stop].copy(), cube.axis.crop(start, stop))


# ---------------------------------------------------------------- shards

@dataclass
class Shard:
    origin: tuple[int, int]  # (x0, y0)
    block: np.ndarray  # (size, size, L) in (row, column, energy) order
    padded: bool = False

    @property
    def L(self) -> int:
        return self.block.shape[2]


def _origins(n: int, size: int, stride: int) -> list[int]:
    if n <= size:
        return [0]
    starts = list(range(0, n - size + 1, stride))
    if starts[-1] + size < n:
        starts.append(n - size)
    return starts


def extract_shards(cube: Datacube, spatial_stride: int = SHARD_SIZE, size: int = SHARD_SIZE,
                   channels: tuple[int, int] | None = None) -> list[Shard]:
    """Tile the cube with size x size blocks; x varies fastest.

    Remainders at the right/bottom are covered by blocks aligned to the far
    edge. Cubes narrower than ``size`` are reflect-padded and the shards flagged.
    """
    if spatial_stride < 1:
        raise ValueError("spatial stride must be >= 1")
    data = cube.intensities
    if channels is not None:
        data = data[:, :, channels[0]:channels[1]]
    H, W = data.shape[:2]
    padded = W < size or H < size
    if padded:
        data = np.pad(data, ((0, max(0, size - H)), (0, max(0, size - W)), (0, 0)), mode="reflect")
    shards = []
    for y0 in _origins(H, size, spatial_stride):
        for x0 in _origins(W, size, spatial_stride):
            shards.append(Shard((x0, y0), data[y0:y0 + size, x0:x0 + size].copy(), padded))
    return shards


def recombine(shards: list[Shard], width: int, height: int,
              axis: EnergyAxis | None = None, normalized: bool = False) -> Datacube:
    """Average overlapping shard blocks back into a width x height cube."""
    if not shards:
        raise CoverageError([(x, y) for y in range(height) for x in range(width)])
    L = shards[0].L
    size_y, size_x = shards[0].block.shape[:2]
    acc = np.zeros((max(height, size_y), max(width, size_x), L))
    hits = np.zeros(acc.shape[:2])
    for s in shards:
        if s.L != L:
            raise DimensionError(f"shard at {s.origin} has {s.L} channels, expected {L}")
        x0, y0 = s.origin
        h, w = s.block.shape[:2]
        acc[y0:y0 + h, x0:x0 + w] += s.block
        hits[y0:y0 + h, x0:x0 + w] += 1
    acc, hits = acc[:height, :width], hits[:height, :width]
    if np.any(hits == 0):
        raise CoverageError([(int(x), int(y)) for y, x in np.argwhere(hits == 0)])
    if axis is None:
        axis = EnergyAxis(0.0, 1.0, L)
    return Datacube(acc / hits[..., None], axis, normalized)


def with_intensities(cube: Datacube, intensities: np.ndarray, **changes) -> Datacube:
    return replace(cube, intensities=intensities, **changes)
