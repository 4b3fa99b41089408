"""Fréchet distance on Gaussian feature statistics, masked features, L2,1 and cosine."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uvforge import io

BG_COLOR = (0.5, 0.5, 0.5)


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ValueError(f"cov must be {d}x{d}, got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-8, rtol=0.0):
            raise ValueError("covariance is not symmetric")


def gaussian_stats(features) -> GaussianStats:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] < 2:
        raise ValueError("gaussian_stats needs at least 2 feature rows")
    mu = f.mean(axis=0)
    c = f - mu
    cov = c.T @ c / (f.shape[0] - 1)
    return GaussianStats(mu, 0.5 * (cov + cov.T))


def _psd_sqrt(a):
    a = 0.5 * (a + a.T)
    try:
        lam, vec = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigendecomposition failed: {exc}") from exc
    lam = np.maximum(lam, 0.0)
    return (vec * np.sqrt(lam)) @ vec.T


def fid(r: GaussianStats, g: GaussianStats) -> float:
    """||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r^1/2 S_g S_r^1/2)^1/2)."""
    if r.mean.shape != g.mean.shape:
        raise ValueError("feature dimensions differ")
    diff = r.mean - g.mean
    root_r = _psd_sqrt(r.cov)
    cross = _psd_sqrt(root_r @ g.cov @ root_r)
    val = float(diff @ diff + np.trace(r.cov) + np.trace(g.cov) - 2.0 * np.trace(cross))
    return max(val, 0.0)


# ------------------------------------------------------------- extractors

class DownsampleExtractor:
    """Grayscale k×k box-filtered thumbnail, flattened (d = k²)."""

    name = "downsample"

    def __init__(self, k: int = 8):
        self.k = k
        self.dim = k * k

    def __call__(self, image) -> np.ndarray:
        img = np.asarray(image, dtype=np.float64)
        gray = img @ np.array([0.299, 0.587, 0.114]) if img.ndim == 3 else img
        h, w = gray.shape
        rows = np.minimum((np.arange(h) * self.k) // h, self.k - 1)
        cols = np.minimum((np.arange(w) * self.k) // w, self.k - 1)
        cell = rows[:, None] * self.k + cols[None, :]
        sums = np.bincount(cell.ravel(), weights=gray.ravel(), minlength=self.dim)
        counts = np.bincount(cell.ravel(), minlength=self.dim)
        return sums / np.maximum(counts, 1)


class RandomProjectionExtractor:
    """Fixed-seed Gaussian projection of all pixel values to ``dim`` features."""

    name = "projection"

    def __init__(self, dim: int = 128, seed: int = 0):
        self.dim, self.seed = dim, seed
        self._mats = {}

    def _matrix(self, n):
        if n not in self._mats:
            rng = np.random.default_rng([self.seed, n])
            self._mats[n] = rng.standard_normal((n, self.dim)) / np.sqrt(n)
        return self._mats[n]

    def __call__(self, image) -> np.ndarray:
        x = np.asarray(image, dtype=np.float64).reshape(-1)
        return x @ self._matrix(x.size)


def make_extractor(name: str, seed: int = 0):
    if name == "downsample":
        return DownsampleExtractor()
    if name == "projection":
        return RandomProjectionExtractor(seed=seed)
    raise ValueError(f"unknown extractor '{name}'")


def mask_image(image, silhouette, bg_color=BG_COLOR) -> np.ndarray:
    s = np.asarray(silhouette, dtype=np.float64)[..., None]
    return s * np.asarray(image, dtype=np.float64) + (1.0 - s) * np.asarray(bg_color, dtype=np.float64)


def masked_features(extractor, image, silhouette, bg_color=BG_COLOR) -> np.ndarray:
    return extractor(mask_image(image, silhouette, bg_color))


def feature_matrix(extractor, images) -> np.ndarray:
    return np.stack([extractor(im) for im in images])


# ---------------------------------------------------------- reconstruction

def l21_error(target, rendered, mask) -> float:
    """Mean over the mask of the per-pixel RGB Euclidean distance."""
    m = np.asarray(mask) > 0.5
    if not m.any():
        raise ValueError("empty foreground")
    diff = np.asarray(target, dtype=np.float64)[m] - np.asarray(rendered, dtype=np.float64)[m]
    return float(np.mean(np.sqrt(np.sum(diff * diff, axis=-1))))


def cosine_similarity(f1, f2) -> float:
    a = np.asarray(f1, dtype=np.float64).reshape(-1)
    b = np.asarray(f2, dtype=np.float64).reshape(-1)
    aa, bb = float(a @ a), float(b @ b)
    if aa == 0.0 or bb == 0.0:
        raise ValueError("cosine similarity of a zero vector")
    # sqrt(s*s) == s in IEEE arithmetic, so f2 = ±f1 gives exactly ±1
    return float(np.clip((a @ b) / np.sqrt(aa * bb), -1.0, 1.0))


def report(metric: str, value: float, n_samples: int, extractor: str, seed: int) -> dict:
    return {"metric": metric, "value": float(value), "n_samples": int(n_samples),
            "extractor": extractor, "seed": int(seed)}


def write_report(path, entries) -> None:
    io.write_json(path, list(entries))
