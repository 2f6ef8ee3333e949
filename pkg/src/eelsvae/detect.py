"""Per-pixel PCC scoring, Otsu classification with a unimodality guard, metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datacube import Datacube
from .errors import DegenerateHistogramError, DimensionError, UndefinedCorrelationError

DEFAULT_BINS = 256
DEFAULT_GAMMA = 0.8
NO_THRESHOLD = -math.inf  # sentinel: nothing scores below it


def pcc(x, y) -> float:
    """Pearson correlation of two spectra, clamped to [-1, 1]."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"pcc needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise DimensionError("pcc needs at least two channels")
    if np.array_equal(x, y) and x.min() != x.max():
        return 1.0
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant spectrum")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


@dataclass
class PccMap:
    values: np.ndarray  # (H, W)
    window: tuple[int, int]  # channel range used


def pcc_map(original: Datacube, recon: Datacube, window: tuple[int, int]) -> PccMap:
    """Windowed PCC between matching spectra of two cubes.

    Constant spectra have no defined PCC; they score 1 when both windows are
    identical and 0 otherwise.
    """
    a, b = original.intensities, recon.intensities
    if a.shape != b.shape:
        raise DimensionError(f"cube shapes differ: {a.shape} vs {b.shape}")
    lo, hi = window
    if not 0 <= lo < hi <= a.shape[2] or hi - lo < 2:
        raise DimensionError(f"window [{lo}, {hi}) is not a valid range of >= 2 channels")
    x, y = a[:, :, lo:hi], b[:, :, lo:hi]
    dx = x - x.mean(axis=2, keepdims=True)
    dy = y - y.mean(axis=2, keepdims=True)
    sx = np.sqrt((dx * dx).sum(axis=2))
    sy = np.sqrt((dy * dy).sum(axis=2))
    num = (dx * dy).sum(axis=2)
    ok = (sx > 0) & (sy > 0)
    r = np.empty(sx.shape)
    r[ok] = num[ok] / (sx[ok] * sy[ok])
    same = np.all(x == y, axis=2)
    r[~ok] = 0.0
    r[same] = 1.0  # exact, also for non-constant spectra
    return PccMap(np.clip(r, -1.0, 1.0), (lo, hi))


# ---------------------------------------------------------------- Otsu

def _between_class(values: np.ndarray, bins: int):
    """Histogram edges and between-class variance at each interior edge.

    The threshold at edge i splits values < edge[i] from values >= edge[i];
    class means come from the values themselves, not bin centers.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 2 or v.min() == v.max():
        raise DegenerateHistogramError("need at least two distinct values to threshold")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    edges = np.linspace(v.min(), v.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    sums = np.bincount(idx, weights=v, minlength=bins)
    n0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    n, total = v.size, sums.sum()
    n1, s1 = n - n0, total - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        score = (n0 / n) * (n1 / n) * (s0 / n0 - s1 / n1) ** 2
    score[(n0 == 0) | (n1 == 0)] = 0.0
    return edges, score, v


def pick_threshold(edges: np.ndarray, score: np.ndarray, rtol: float = 1e-12) -> tuple[float, float]:
    """Best interior edge.

    Edges within ``rtol`` of the maximum count as tied. An empty gap between
    two clusters produces a run of tied edges; the lowest such run wins and
    its middle edge (the lower of two middles) is returned, so the threshold
    sits inside the gap rather than hugging one cluster.
    """
    best = score.max()
    tied = score >= best * (1.0 - rtol)
    first = int(np.flatnonzero(tied)[0])
    last = first
    while last + 1 < tied.size and tied[last + 1]:
        last += 1
    i = (first + last) // 2
    return float(edges[i + 1]), float(score[i])


def otsu_threshold(values, bins: int = DEFAULT_BINS) -> float:
    """Bin edge maximizing w0 * w1 * (mu0 - mu1)^2 over a ``bins``-bin histogram."""
    edges, score, _ = _between_class(values, bins)
    return pick_threshold(edges, score)[0]


def variance_ratio(values, bins: int = DEFAULT_BINS) -> float:
    """Between-class variance at the Otsu threshold over total variance."""
    edges, score, v = _between_class(values, bins)
    return pick_threshold(edges, score)[1] / v.var()


def unimodality_check(values, bins: int = DEFAULT_BINS, gamma: float = DEFAULT_GAMMA) -> bool:
    """True when the distribution shows no second mode (detection is suppressed).

    Bimodal iff the Otsu split explains at least ``gamma`` of the total
    variance. A single Gaussian explains 2/pi (~0.64) at its best split, so
    gamma has to sit above that.
    """
    try:
        return variance_ratio(values, bins) < gamma
    except DegenerateHistogramError:
        return True


def classify(pmap: PccMap | np.ndarray, bins: int = DEFAULT_BINS,
             gamma: float = DEFAULT_GAMMA) -> tuple[float, np.ndarray]:
    """Otsu split of the PCC values; pixels below the threshold are anomalous."""
    vals = pmap.values if isinstance(pmap, PccMap) else np.asarray(pmap, dtype=np.float64)
    if unimodality_check(vals, bins, gamma):
        return NO_THRESHOLD, np.zeros(vals.shape, dtype=bool)
    t = otsu_threshold(vals, bins)
    return t, vals < t


# ---------------------------------------------------------------- metrics

@dataclass
class DetectionReport:
    threshold: float
    predicted_mask: np.ndarray
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    bimodal: bool

    def row(self) -> dict:
        d = asdict(self)
        d.pop("predicted_mask")
        return d


def evaluate(predicted: np.ndarray, truth: np.ndarray, threshold: float = math.nan,
             bimodal: bool = True) -> DetectionReport:
    """Pixel-level confusion counts and precision / recall / F1.

    Undefined ratios are NaN: precision with no predicted and no true
    positives, recall with no true positives, F1 when tp + fp + fn == 0.
    """
    predicted = np.asarray(predicted, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if predicted.shape != truth.shape:
        raise DimensionError(f"mask shapes differ: {predicted.shape} vs {truth.shape}")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    tn = int(np.sum(~predicted & ~truth))
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = math.nan if tp + fn == 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else math.nan
    f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn > 0 else math.nan
    return DetectionReport(threshold, predicted, tp, fp, fn, tn, precision, recall, f1, bimodal)


def detect(pmap: PccMap, truth: np.ndarray, bins: int = DEFAULT_BINS,
           gamma: float = DEFAULT_GAMMA) -> DetectionReport:
    t, pred = classify(pmap, bins, gamma)
    return evaluate(pred, truth, t, bimodal=t != NO_THRESHOLD)


def pr_curve(pmap: PccMap | np.ndarray, truth: np.ndarray, steps: int = 200):
    """(threshold, precision, recall) for thresholds swept across the PCC range.

    A pixel is flagged when its PCC is strictly below the threshold; the sweep
    runs from the minimum (nothing flagged) to just above the maximum
    (everything flagged). With nothing flagged precision is taken as 1.
    """
    if steps < 2:
        raise ValueError("steps must be >= 2")
    vals = pmap.values if isinstance(pmap, PccMap) else np.asarray(pmap, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if vals.shape != truth.shape:
        raise DimensionError(f"map shape {vals.shape} != truth shape {truth.shape}")
    v, t = vals.ravel(), truth.ravel()
    lo, hi = float(v.min()), float(np.nextafter(v.max(), np.inf))
    positives = int(t.sum())
    out = []
    for thr in np.linspace(lo, hi, steps):
        flagged = v < thr
        tp = int(np.sum(flagged & t))
        nflag = int(flagged.sum())
        precision = tp / nflag if nflag else 1.0
        recall = tp / positives if positives else math.nan
        out.append((float(thr), precision, recall))
    return out


def pr_auc(curve) -> float:
    """Trapezoidal area under precision as a function of recall."""
    arr = np.array([(r, p) for _, p, r in curve], dtype=np.float64)
    arr = arr[np.lexsort((-arr[:, 1], arr[:, 0]))]
    return float(np.trapezoid(arr[:, 1], arr[:, 0]))


# ---------------------------------------------------------------- outputs

def histogram_table(pmap: PccMap | np.ndarray, truth: np.ndarray | None, bins: int = DEFAULT_BINS):
    """Rows of (bin_left, bin_right, count_bulk, count_anomalous)."""
    vals = pmap.values if isinstance(pmap, PccMap) else np.asarray(pmap)
    truth = np.zeros(vals.shape, dtype=bool) if truth is None else np.asarray(truth, dtype=bool)
    lo, hi = float(vals.min()), float(vals.max())
    if lo == hi:
        lo, hi = lo - 0.5e-6, hi + 0.5e-6
    edges = np.linspace(lo, hi, bins + 1)
    bulk, _ = np.histogram(vals[~truth], edges)
    anom, _ = np.histogram(vals[truth], edges)
    return [(float(edges[i]), float(edges[i + 1]), int(bulk[i]), int(anom[i])) for i in range(bins)]


def write_histogram_csv(rows, path) -> None:
    lines = ["bin_left,bin_right,count_bulk,count_anomalous"]
    lines += [f"{a!r},{b!r},{c},{d}" for a, b, c, d in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def write_pcc_csv(pmap: PccMap, path) -> None:
    lines = ["x,y,pcc"]
    H, W = pmap.values.shape
    for y in range(H):
        for x in range(W):
            lines.append(f"{x},{y},{float(pmap.values[y, x])!r}")
    Path(path).write_text("\n".join(lines) + "\n")


REPORT_FIELDS = ("threshold", "bimodal", "tp", "fp", "fn", "tn", "precision", "recall", "f1")


def write_report_csv(reports: list[tuple[dict, DetectionReport]], path) -> None:
    """One row per report; the dict carries leading label columns."""
    if not reports:
        Path(path).write_text(",".join(REPORT_FIELDS) + "\n")
        return
    labels = list(reports[0][0])
    lines = [",".join(labels + list(REPORT_FIELDS))]
    for lab, rep in reports:
        row = rep.row()
        cells = [str(lab[k]) for k in labels] + [_fmt(row[k]) for k in REPORT_FIELDS]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def write_pr_csv(curves: dict[str, list], path) -> None:
    lines = ["method,threshold,precision,recall"]
    for method, curve in curves.items():
        lines += [f"{method},{_fmt(t)},{_fmt(p)},{_fmt(r)}" for t, p, r in curve]
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))
