"""PCA baseline on flattened spectra, backed by a one-sided Jacobi SVD."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """n-1 rounds of n/2 disjoint column pairs covering every pair once (n even)."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 60):
    """Singular values and right singular vectors of ``a`` (m x n).

    One-sided (Hestenes) Jacobi: plane rotations orthogonalize the columns of
    ``a @ V``; a sweep applies every column pair once, in parallel rounds of
    disjoint pairs. Stops when every pair's cosine |a_p.a_q| / (|a_p||a_q|)
    is below ``tol``. Returns (s, Vt) sorted by decreasing s.
    """
    a = np.array(a, dtype=np.float64)
    m, n = a.shape
    if m > n:
        # same singular values / right vectors, n x n work instead of m x n
        a = np.linalg.qr(a, mode="r")
    cols = a.shape[1]
    nn = cols + (cols % 2)
    U = np.zeros((a.shape[0], nn))
    U[:, :cols] = a
    V = np.eye(nn)
    rounds = _round_robin(nn)
    for _ in range(max_sweeps):
        worst = 0.0
        for p, q in rounds:
            ap, aq = U[:, p], U[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            norm = np.sqrt(alpha * beta)
            live = norm > 0
            off = np.zeros_like(gamma)
            off[live] = np.abs(gamma[live]) / norm[live]
            worst = max(worst, float(off.max(initial=0.0)))
            rot = live & (off > tol)
            if not rot.any():
                continue
            p, q = p[rot], q[rot]
            alpha, beta, gamma = alpha[rot], beta[rot], gamma[rot]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            for M in (U, V):
                mp, mq = M[:, p], M[:, q]
                M[:, p] = c * mp - s * mq
                M[:, q] = s * mp + c * mq
        if worst <= tol:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", U, U))[:cols]
    V = V[:cols, :cols]
    order = np.argsort(-sv, kind="stable")
    return sv[order], V[:, order].T


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    if rows.size == 0:
        return rows
    idx = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), idx])
    signs[signs == 0] = 1.0
    return rows * signs[:, None]


@dataclass
class PcaModel:
    mean_spectrum: np.ndarray  # (E,)
    components: np.ndarray  # (k, E), orthonormal rows
    explained_variance: np.ndarray  # (k,)

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def truncate(self, k: int) -> "PcaModel":
        if not 0 <= k <= self.k:
            raise ConfigError(f"cannot truncate a {self.k}-component model to {k}")
        return PcaModel(self.mean_spectrum, self.components[:k], self.explained_variance[:k])


def fit(spectra: np.ndarray, k: int) -> PcaModel:
    """Top-``k`` principal components of the rows of ``spectra`` (N x E).

    Signs are fixed so each component's largest-magnitude entry is positive.
    """
    X = np.asarray(spectra, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionError(f"expected an N x E matrix, got shape {X.shape}")
    N, E = X.shape
    if not 0 <= k <= min(N, E):
        raise ConfigError(f"k={k} must lie in [0, min(N, E)] = [0, {min(N, E)}]")
    mean = X.mean(axis=0)
    s, Vt = jacobi_svd(X - mean)
    comps = _fix_signs(Vt[:k])
    var = s[:k] ** 2 / max(N - 1, 1)
    return PcaModel(mean, comps, var)


def fit_many(spectra: np.ndarray, ks) -> dict[int, PcaModel]:
    """Fit once at max(ks); leading components are shared across k."""
    ks = list(ks)
    full = fit(spectra, max(ks))
    return {k: full.truncate(k) for k in ks}


def reconstruct(spectra: np.ndarray, model: PcaModel) -> np.ndarray:
    """Mean plus orthogonal projection onto the component span."""
    X = np.asarray(spectra, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.mean_spectrum.size:
        raise DimensionError(
            f"spectra have shape {X.shape}, model expects {model.mean_spectrum.size} channels")
    centered = X - model.mean_spectrum
    scores = centered @ model.components.T
    return model.mean_spectrum + scores @ model.components


def export_csv(model: PcaModel, path) -> None:
    """Rows: mean spectrum, k components, explained variance (padded with blanks)."""
    E = model.mean_spectrum.size
    lines = [",".join(repr(float(v)) for v in model.mean_spectrum)]
    lines += [",".join(repr(float(v)) for v in row) for row in model.components]
    ev = [repr(float(v)) for v in model.explained_variance]
    lines.append(",".join(ev + [""] * (E - len(ev))))
    Path(path).write_text("\n".join(lines) + "\n")
