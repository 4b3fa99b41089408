"""Synthetic face-proxy model and a labeled synthetic image set.

The model is the camera-facing half of a subdivided icosphere with smooth
random displacement bases; the dataset renders it under random coefficients,
pose and light over procedural backgrounds.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from uvforge import io, morphable, render, uvtex
from uvforge.gan import TrainSample

ATTRIBUTE_RULES = {
    "sign_p_i0": lambda p: int(p.p_i[0] > 0),
    "sign_p_e0": lambda p: int(p.p_e[0] > 0),
    "sign_p_t0": lambda p: int(p.p_t[0] > 0),
}


@dataclass
class SynthConfig:
    seed: int = 0
    n_subdiv: int = 3
    k_i: int = 8
    k_e: int = 6
    k_t: int = 8
    n_samples: int = 64
    image_w: int = 64
    image_h: int = 64
    uv_w: int = 32
    uv_h: int = 32
    coefficient_scale: float = 1.5
    attribute_rule: str = "sign_p_t0"

    def __post_init__(self):
        for name in ("n_subdiv", "k_i", "k_e", "k_t", "n_samples", "image_w", "image_h", "uv_w", "uv_h"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.n_subdiv > 6:
            raise ValueError("n_subdiv must be <= 6")
        if not self.coefficient_scale > 0:
            raise ValueError("coefficient_scale must be positive")
        if self.attribute_rule not in ATTRIBUTE_RULES:
            raise ValueError(f"unknown attribute_rule '{self.attribute_rule}'")

    @classmethod
    def from_dict(cls, obj: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ValueError(f"unknown config key '{key}'")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- mesh

def icosphere(subdivisions: int):
    """Unit icosphere with outward (counter-clockwise) winding."""
    t = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return np.array(verts), np.array(faces, dtype=np.int64)


def front_hemisphere(subdivisions: int):
    """Faces whose centroid faces the viewer (z < 0), reindexed."""
    v, f = icosphere(subdivisions)
    keep = v[f].mean(axis=1)[:, 2] < 0.0
    f = f[keep]
    used = np.unique(f)
    remap = np.full(v.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return v[used], remap[f]


def cylindrical_uv(v) -> np.ndarray:
    u = np.arctan2(v[:, 0], -v[:, 2]) / np.pi + 0.5
    w = (1.0 - v[:, 1]) / 2.0
    return np.clip(np.stack([u, w], axis=1), 0.0, 1.0)


def _smooth_field(rng, pts, n_waves=4, max_freq=2.5):
    """Sum of a few random low-frequency plane waves, one per output channel."""
    out = np.zeros((pts.shape[0], 3))
    for ch in range(3):
        for _ in range(n_waves):
            f = rng.normal(size=3)
            f *= rng.uniform(0.5, max_freq) / np.linalg.norm(f)
            out[:, ch] += rng.normal() * np.sin(pts @ f + rng.uniform(0, 2 * np.pi))
    return out


def _basis(rng, pts, k, weight=None):
    cols = []
    for _ in range(k):
        fld = _smooth_field(rng, pts)
        if weight is not None:
            fld *= weight[:, None]
        col = fld.reshape(-1)
        cols.append(col / np.linalg.norm(col))
    return np.stack(cols, axis=1)


def farthest_points(pts, candidates, k, start):
    chosen = [start]
    d = np.linalg.norm(pts[candidates] - pts[start], axis=1)
    for _ in range(k - 1):
        nxt = int(candidates[int(np.argmax(d))])
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(pts[candidates] - pts[nxt], axis=1))
    return np.array(chosen, dtype=np.int64)


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def make_model(cfg: SynthConfig | None = None) -> morphable.MorphableModel:
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    verts, tris = front_hemisphere(cfg.n_subdiv)
    n = verts.shape[0]
    uv = cylindrical_uv(verts)
    id_basis = _basis(rng, verts, cfg.k_i)
    lower = 1.0 / (1.0 + np.exp(4.0 * verts[:, 1]))  # expressions live mostly below the nose
    expr_basis = _basis(rng, verts, cfg.k_e, weight=lower)
    skin = np.array([0.78, 0.58, 0.48])
    mean_tex = skin[None, :] + 0.08 * verts[:, 1:2] + 0.04 * verts[:, 0:1] * np.array([1.0, 0.5, 0.2])
    tex_basis = _basis(rng, verts, cfg.k_t)
    front = np.flatnonzero(verts[:, 2] < -0.3)
    if front.size < morphable.N_LANDMARKS:
        front = np.argsort(verts[:, 2])[:max(morphable.N_LANDMARKS, front.size)]
    start = int(np.argmin(verts[:, 2]))
    landmarks = farthest_points(verts, front, morphable.N_LANDMARKS, start)
    return morphable.MorphableModel(
        mean_shape_id=_f32(verts.reshape(-1)),
        mean_shape_expr=np.zeros(3 * n),
        mean_texture=_f32(np.clip(mean_tex, 0.0, 1.0).reshape(-1)),
        id_basis=_f32(id_basis),
        expr_basis=_f32(expr_basis),
        tex_basis=_f32(tex_basis),
        triangles=tris,
        uv_coords=_f32(uv),
        landmark_indices=landmarks,
    )


# ---------------------------------------------------------------- dataset

def quantize8(x):
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def procedural_background(rng, width, height):
    """Two-color linear gradient plus low-frequency sinusoidal noise."""
    xs, ys = render.pixel_centers(width, height)
    gx, gy = np.meshgrid(xs, ys)
    angle = rng.uniform(0, 2 * np.pi)
    ramp = 0.5 + 0.5 * (np.cos(angle) * gx + np.sin(angle) * gy) / np.sqrt(2.0)
    c0, c1 = rng.uniform(0.0, 1.0, 3), rng.uniform(0.0, 1.0, 3)
    img = c0 * (1.0 - ramp[..., None]) + c1 * ramp[..., None]
    for _ in range(3):
        f = rng.uniform(1.0, 6.0, 2) * rng.choice([-1.0, 1.0], 2)
        phase = rng.uniform(0, 2 * np.pi)
        img += 0.06 * rng.normal(size=3) * np.sin(f[0] * gx + f[1] * gy + phase)[..., None]
    return np.clip(img, 0.0, 1.0)


def random_params(rng, model, sigma):
    p_i = sigma * rng.standard_normal(model.k_i)
    p_e = sigma * rng.standard_normal(model.k_e)
    p_t = sigma * rng.standard_normal(model.k_t)
    rot = rng.uniform(-1.0, 1.0, 3) * np.array([0.25, 0.45, 0.1])
    norm = np.linalg.norm(rot)
    if norm > 0.5:
        rot *= 0.5 / norm
    trans = rng.uniform(-0.1, 0.1, 2)
    log_scale = np.log(rng.uniform(0.7, 0.9))
    direction = np.array([0.0, 0.0, -1.0]) + rng.uniform(-0.6, 0.6, 3)
    gains = [rng.uniform(0.3, 0.7), rng.uniform(0.2, 0.5), rng.uniform(0.2, 0.3)]
    return morphable.ParamSet(p_i, p_e, np.concatenate([rot, trans, [log_scale]]),
                              np.concatenate([direction, gains]), p_t)


def landmarks_2d(model, params, zbuf, width, height, tol=0.05):
    """Projected landmark positions and a visibility flag from the depth buffer."""
    shape = morphable.sample_shape(model, params.p_i, params.p_e)
    screen, depth = render.project(shape[model.landmark_indices], render.Camera.from_params(params.p_c))
    col = np.floor((screen[:, 0] + 1.0) * 0.5 * width).astype(np.int64)
    row = np.floor((1.0 - screen[:, 1]) * 0.5 * height).astype(np.int64)
    inside = (col >= 0) & (col < width) & (row >= 0) & (row < height)
    vis = np.zeros(len(screen), dtype=bool)
    z = zbuf[np.clip(row, 0, height - 1), np.clip(col, 0, width - 1)]
    vis[inside] = depth[inside] <= z[inside] + tol
    return screen, vis


def make_sample(model, cfg: SynthConfig, index: int) -> TrainSample:
    rng = np.random.default_rng([cfg.seed, index])
    params = random_params(rng, model, cfg.coefficient_scale)
    colors = morphable.sample_texture(model, params.p_t)
    uvmap = uvtex.UVMap(quantize8(uvtex.unwrap(colors, model.uv_coords, cfg.uv_w, cfg.uv_h).pixels))
    rcfg = render.RenderConfig(compute_silhouette=False)
    out = render.form_image(model, uvmap, params, cfg.image_w, cfg.image_h, rcfg)
    bg = procedural_background(rng, cfg.image_w, cfg.image_h)
    cov = out.coverage
    image = cov[..., None] * out.image + (1.0 - cov[..., None]) * bg
    lm, vis = landmarks_2d(model, params, out.depth, cfg.image_w, cfg.image_h)
    return TrainSample(image=image, params=params, silhouette=cov, uv=uvmap, landmarks=lm,
                       visibility=vis, label=ATTRIBUTE_RULES[cfg.attribute_rule](params))


def make_dataset(model, cfg: SynthConfig | None = None) -> list:
    cfg = cfg or SynthConfig()
    return [make_sample(model, cfg, i) for i in range(cfg.n_samples)]


# ------------------------------------------------------------------- disk

def write_dataset(directory, samples, cfg: SynthConfig) -> None:
    d = Path(directory)
    for sub in ("images", "silhouettes", "params", "uv", "landmarks"):
        (d / sub).mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        name = f"{i:04d}"
        io.write_png(d / "images" / f"{name}.png", s.image)
        io.write_png(d / "silhouettes" / f"{name}.png", s.silhouette)
        io.write_json(d / "params" / f"{name}.json", s.params.to_json())
        s.uv.save(d / "uv" / f"{name}.png")
        io.write_json(d / "landmarks" / f"{name}.json",
                      {"points": s.landmarks.tolist(), "visibility": s.visibility.tolist()})
    io.write_json(d / "labels.json", {"rule": cfg.attribute_rule, "labels": [int(s.label) for s in samples]})
    io.write_json(d / "manifest.json", {
        "format": "uvforge-dataset",
        "version": 1,
        "n_samples": len(samples),
        "image_w": cfg.image_w,
        "image_h": cfg.image_h,
        "uv_w": cfg.uv_w,
        "uv_h": cfg.uv_h,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    })


def read_dataset(directory, model=None) -> tuple:
    """Load a dataset directory; returns (samples, manifest)."""
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"dataset manifest not found: {mpath}")
    man = io.read_json(mpath)
    for key in ("n_samples", "image_w", "image_h"):
        if key not in man:
            raise io.FormatError(f"{mpath}: missing field '{key}'")
    labels_path = d / "labels.json"
    labels = io.read_json(labels_path)["labels"] if labels_path.exists() else [0] * man["n_samples"]
    samples = []
    for i in range(man["n_samples"]):
        name = f"{i:04d}"
        image = io.read_png(d / "images" / f"{name}.png")
        if image.shape[:2] != (man["image_h"], man["image_w"]):
            raise io.FormatError(f"images/{name}.png: size {image.shape[1]}x{image.shape[0]} "
                                 f"does not match manifest {man['image_w']}x{man['image_h']}")
        sil = io.read_png(d / "silhouettes" / f"{name}.png", gray=True)
        params = morphable.ParamSet.from_json(io.read_json(d / "params" / f"{name}.json"), model)
        uv_path = d / "uv" / f"{name}.png"
        uvmap = uvtex.UVMap.load(uv_path) if uv_path.exists() else None
        lm_path = d / "landmarks" / f"{name}.json"
        if lm_path.exists():
            lmj = io.read_json(lm_path)
            lm, vis = np.asarray(lmj["points"], dtype=np.float64), np.asarray(lmj["visibility"], dtype=bool)
        else:
            lm, vis = None, None
        samples.append(TrainSample(image=image, params=params, silhouette=sil, uv=uvmap, landmarks=lm,
                                   visibility=vis, label=int(labels[i])))
    return samples, man
