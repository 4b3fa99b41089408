"""UV maps and the bilinear sampler that assigns texture colors to vertices.

Coordinate convention: ``c = (u, v)`` addresses texel centers, with column
``u * (W - 1)`` and row ``v * (H - 1)``. Lookups clamp to the edge.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from uvforge import io


@dataclass(eq=False)
class UVMap:
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"UV map must be H x W x 3, got {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("UV map contains non-finite values")
        if px.min(initial=0.0) < 0.0 or px.max(initial=0.0) > 1.0:
            raise ValueError("UV map values must lie in [0,1]")
        self.pixels = px

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __array__(self, dtype=None, copy=None):
        return self.pixels if dtype is None else self.pixels.astype(dtype)

    @classmethod
    def constant(cls, height, width, color) -> "UVMap":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy())

    @classmethod
    def load(cls, path) -> "UVMap":
        return cls(io.read_png(path))

    def save(self, path) -> None:
        io.write_png(path, self.pixels)


def _pixels(m) -> np.ndarray:
    return m.pixels if isinstance(m, UVMap) else np.asarray(m, dtype=np.float64)


def bilinear_weights(coords, width: int, height: int):
    """Texel indices (n×4, flattened row-major) and weights (n×4) for ``coords``.

    Also returns d(weights)/du and d(weights)/dv, zero where the coordinate
    was clamped.
    """
    c = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(c)):
        bad = int(np.flatnonzero(~np.isfinite(c).all(axis=1))[0])
        raise ValueError(f"non-finite uv coordinate at row {bad}")
    inside_u = (c[:, 0] >= 0.0) & (c[:, 0] <= 1.0)
    inside_v = (c[:, 1] >= 0.0) & (c[:, 1] <= 1.0)
    cc = np.clip(c, 0.0, 1.0)
    x = cc[:, 0] * (width - 1)
    y = cc[:, 1] * (height - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(width - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = x - x0
    fy = y - y0
    idx = np.stack([y0 * width + x0, y0 * width + x1, y1 * width + x0, y1 * width + x1], axis=1)
    w = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=1)
    su = (width - 1) * inside_u
    sv = (height - 1) * inside_v
    dw_du = np.stack([-(1 - fy), (1 - fy), -fy, fy], axis=1) * su[:, None]
    dw_dv = np.stack([-(1 - fx), -fx, (1 - fx), fx], axis=1) * sv[:, None]
    return idx, w, dw_du, dw_dv


def sample(uvmap, c) -> np.ndarray:
    """Bilinearly sample one color at uv coordinate ``c``."""
    return sample_all(uvmap, np.asarray(c, dtype=np.float64).reshape(1, 2))[0]


def sample_all(uvmap, coords) -> np.ndarray:
    px = _pixels(uvmap)
    h, w = px.shape[:2]
    idx, wt, _, _ = bilinear_weights(coords, w, h)
    flat = px.reshape(h * w, 3)
    return np.einsum("nk,nkc->nc", wt, flat[idx])


def sample_all_vjp(uvmap, coords):
    """Returns colors and a pullback mapping d(colors) to (d(map), d(coords))."""
    px = _pixels(uvmap)
    h, w = px.shape[:2]
    idx, wt, dwu, dwv = bilinear_weights(coords, w, h)
    texels = px.reshape(h * w, 3)[idx]
    colors = np.einsum("nk,nkc->nc", wt, texels)

    def pullback(ct):
        ct = np.asarray(ct, dtype=np.float64)
        contrib = wt[:, :, None] * ct[:, None, :]
        d_map = np.zeros((h * w, 3))
        for ch in range(3):
            d_map[:, ch] = np.bincount(idx.ravel(), weights=contrib[:, :, ch].ravel(), minlength=h * w)
        du = np.einsum("nk,nkc,nc->n", dwu, texels, ct)
        dv = np.einsum("nk,nkc,nc->n", dwv, texels, ct)
        return d_map.reshape(h, w, 3), np.stack([du, dv], axis=1)

    return colors, pullback


class Sampler:
    """Precomputed bilinear lookup for a fixed set of uv coordinates.

    Works on batches of maps (B×H×W×3); used in the training loop where the
    coordinates never change.
    """

    def __init__(self, coords, width: int, height: int):
        self.width, self.height = width, height
        self.idx, self.w, _, _ = bilinear_weights(coords, width, height)

    def __call__(self, maps) -> np.ndarray:
        maps = np.asarray(maps, dtype=np.float64)
        flat = maps.reshape(maps.shape[:-3] + (self.height * self.width, 3))
        return np.einsum("nk,...nkc->...nc", self.w, flat[..., self.idx, :])

    def pullback(self, ct) -> np.ndarray:
        ct = np.asarray(ct, dtype=np.float64)
        lead = ct.shape[:-2]
        ct2 = ct.reshape((-1,) + ct.shape[-2:])
        out = np.zeros((ct2.shape[0], self.height * self.width, 3))
        contrib = self.w[None, :, :, None] * ct2[:, :, None, :]
        flat_idx = self.idx.ravel()
        for b in range(ct2.shape[0]):
            for ch in range(3):
                out[b, :, ch] = np.bincount(flat_idx, weights=contrib[b, :, :, ch].ravel(),
                                            minlength=self.height * self.width)
        return out.reshape(lead + (self.height, self.width, 3))


def unwrap(colors, coords, width: int, height: int) -> UVMap:
    """Splat per-vertex colors into a UV map.

    Each color lands on its four neighbouring texels with bilinear weights;
    texels that receive no weight copy the nearest written texel.
    """
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    idx, wt, _, _ = bilinear_weights(coords, width, height)
    size = width * height
    acc = np.zeros((size, 3))
    for ch in range(3):
        acc[:, ch] = np.bincount(idx.ravel(), weights=(wt * colors[:, ch:ch + 1]).ravel(), minlength=size)
    wsum = np.bincount(idx.ravel(), weights=wt.ravel(), minlength=size)
    written = wsum > 1e-12
    out = np.zeros((size, 3))
    out[written] = acc[written] / wsum[written, None]
    out = out.reshape(height, width, 3)
    if not written.all() and written.any():
        # nearest written texel; ties resolve deterministically inside scipy's EDT
        _, (rows, cols) = ndimage.distance_transform_edt(~written.reshape(height, width), return_indices=True)
        out = out[rows, cols]
    return UVMap(np.clip(out, 0.0, 1.0))
