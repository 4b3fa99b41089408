"""Latent interpolation and linear-SVM attribute editing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uvforge import io


@dataclass
class Hyperplane:
    normal: np.ndarray
    bias: float

    def __post_init__(self):
        self.normal = np.asarray(self.normal, dtype=np.float64).reshape(-1)
        self.bias = float(self.bias)
        if not np.linalg.norm(self.normal) > 0:
            raise ValueError("hyperplane normal must be nonzero")

    def score(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.normal + self.bias

    def to_json(self) -> dict:
        return {"normal": self.normal.tolist(), "bias": self.bias}

    @classmethod
    def from_json(cls, obj) -> "Hyperplane":
        for key in ("normal", "bias"):
            if key not in obj:
                raise ValueError(f"hyperplane missing field '{key}'")
        return cls(obj["normal"], obj["bias"])

    def save(self, path) -> None:
        io.write_json(path, self.to_json())

    @classmethod
    def load(cls, path) -> "Hyperplane":
        return cls.from_json(io.read_json(path))


@dataclass
class LabeledLatents:
    latents: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.latents = np.atleast_2d(np.asarray(self.latents, dtype=np.float64))
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if y.size != self.latents.shape[0]:
            raise ValueError("one label per latent required")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.labels = y

    @classmethod
    def from_binary(cls, latents, labels01) -> "LabeledLatents":
        return cls(latents, 2.0 * np.asarray(labels01, dtype=np.float64) - 1.0)


def _check_t(t, name="t"):
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"{name}={t} outside [0, 1]")


def lerp(a, b, t: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    _check_t(t)
    return (1.0 - t) * a + t * b


def bilerp(tl, tr, bl, br, u: float, v: float) -> np.ndarray:
    _check_t(u, "u")
    _check_t(v, "v")
    return lerp(lerp(tl, tr, u), lerp(bl, br, u), v)


def complete_parallelogram(tl, tr, bl) -> np.ndarray:
    """Fourth corner opposite ``tl``."""
    return np.asarray(tr, dtype=np.float64) + np.asarray(bl, dtype=np.float64) - np.asarray(tl, dtype=np.float64)


def grid(corners, nu: int, nv: int = 1) -> np.ndarray:
    """Interpolation grid (nv × nu × d) from 2, 3 or 4 corners (tl, tr[, bl[, br]])."""
    corners = [np.asarray(c, dtype=np.float64) for c in corners]
    if len(corners) not in (2, 3, 4):
        raise ValueError("need 2, 3 or 4 corners")
    if any(c.shape != corners[0].shape for c in corners):
        raise ValueError("corner dimensions differ")
    us = np.linspace(0.0, 1.0, nu) if nu > 1 else np.zeros(1)
    if len(corners) == 2:
        return np.stack([[lerp(corners[0], corners[1], u) for u in us]])
    tl, tr, bl = corners[:3]
    br = corners[3] if len(corners) == 4 else complete_parallelogram(tl, tr, bl)
    vs = np.linspace(0.0, 1.0, nv) if nv > 1 else np.zeros(1)
    return np.stack([[bilerp(tl, tr, bl, br, u, v) for u in us] for v in vs])


def fit_svm(data: LabeledLatents, lam: float = 1e-2, steps: int = 10000, seed: int = 0) -> Hyperplane:
    """Linear SVM: min lam/2 ||w||² + mean hinge, full-batch subgradient steps 1/(lam t).

    Full-batch, so the run is deterministic and ``seed`` is recorded only. Returns the
    average of the second half of the iterates.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    y = data.labels
    if np.all(y == y[0]):
        raise ValueError("fit_svm needs both classes")
    x = data.latents
    n, d = x.shape
    w = np.zeros(d)
    b = 0.0
    w_avg, b_avg, n_avg = np.zeros(d), 0.0, 0
    half = steps // 2
    for t in range(1, steps + 1):
        margin = y * (x @ w + b)
        act = margin < 1.0
        gw = lam * w - (y[act, None] * x[act]).sum(axis=0) / n
        gb = -y[act].sum() / n
        eta = 1.0 / (lam * t)
        w = w - eta * gw
        b = b - eta * gb
        if t > half:
            w_avg += w
            b_avg += b
            n_avg += 1
    return Hyperplane(w_avg / n_avg, b_avg / n_avg)


def edit(w, h: Hyperplane, alpha: float) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != h.normal.size:
        raise ValueError(f"latent has length {w.shape[-1]}, hyperplane has {h.normal.size}")
    return w + alpha * (h.normal / np.linalg.norm(h.normal))
