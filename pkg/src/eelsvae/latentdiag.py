"""Latent-space diagnostics: cosine similarity between paired shard encodings."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cvae
from .config import substream
from .datacube import Datacube
from .errors import ConfigError, DimensionError, UndefinedSimilarityError
from .pgm import write_heatmap
from .synth import AnomalySpec, inject_peak_shift, random_clusters


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"need two equal-length vectors, got {a.shape} and {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise UndefinedSimilarityError("cosine similarity is undefined for a zero vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


@dataclass
class PairSet:
    """Bulk shards and their injected counterparts, model-ready (cropped, normalized)."""
    bulk: np.ndarray  # (n, size, size, L)
    injected: np.ndarray  # (n, size, size, L)
    origins: list[tuple[int, int]]
    masks: np.ndarray  # (n, size, size) bool

    @property
    def n(self) -> int:
        return len(self.origins)


def make_pairs(cube: Datacube, config: cvae.ModelConfig, shift_eV: float = 2.5,
               segment=(700.0, 730.0), n: int = 64, fraction: float = 0.03, radius: int = 3,
               seed: int = 0, fill_policy: str = "background") -> PairSet:
    """Tile ``cube`` into non-overlapping shards and inject clusters into a copy of each.

    ``cube`` should be held out from training. Tiles are taken row by row;
    each gets its own clusters (covering at least ``fraction`` of the tile).
    Injection happens on the raw cube, before cropping and normalization,
    exactly as in the detection pipeline.
    """
    s = config.shard
    nx, ny = cube.width // s, cube.height // s
    if nx * ny < n:
        raise ConfigError(f"a {cube.width}x{cube.height} cube holds {nx * ny} disjoint "
                          f"{s}x{s} tiles, fewer than the {n} pairs requested")
    rng = substream(seed, "pairs")
    bulk, injected, origins, masks = [], [], [], []
    for i in range(n):
        x0, y0 = (i % nx) * s, (i // nx) * s
        tile = Datacube(cube.intensities[y0:y0 + s, x0:x0 + s].copy(), cube.axis, cube.normalized)
        clusters = random_clusters(s, s, fraction, radius, rng)
        spec = AnomalySpec(shift_eV, tuple(segment), clusters, fill_policy, seed=seed + i)
        inj, mask = inject_peak_shift(tile, spec)
        bulk.append(cvae.model_input(tile, config).intensities)
        injected.append(cvae.model_input(inj, config).intensities)
        origins.append((x0, y0))
        masks.append(mask)
    return PairSet(np.stack(bulk), np.stack(injected), origins, np.stack(masks))


def encode_means(shards: np.ndarray, params: cvae.ModelParams, batch_size: int = 8) -> np.ndarray:
    out = [cvae.encode(shards[i:i + batch_size], params).mu for i in range(0, len(shards), batch_size)]
    return np.concatenate(out)


def similarity_matrix(pairs: PairSet, params: cvae.ModelParams) -> np.ndarray:
    """M[i, j] = cosine(mu of bulk shard i, mu of injected shard j)."""
    a = encode_means(pairs.bulk, params)
    b = encode_means(pairs.injected, params)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise UndefinedSimilarityError("an encoding is the zero vector")
    return np.clip((a @ b.T) / np.outer(na, nb), -1.0, 1.0)


def diagonal_margin(M: np.ndarray) -> tuple[float, float]:
    """(mean of the diagonal, mean of the off-diagonal entries)."""
    M = np.asarray(M)
    n = M.shape[0]
    diag = float(np.trace(M) / n)
    off = float((M.sum() - np.trace(M)) / (n * n - n)) if n > 1 else float("nan")
    return diag, off


def write_matrix_csv(M: np.ndarray, path) -> None:
    lines = [",".join(repr(float(v)) for v in row) for row in np.asarray(M)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = Path(path).read_text().split()
    return np.array([[float(v) for v in r.split(",")] for r in rows])


def write_matrix_pgm(M: np.ndarray, path) -> None:
    write_heatmap(path, M)
