"""Differentiable image formation: projection, rasterization, Phong shading, soft silhouette.

Colors come from a hard z-buffer pass, so gradients with respect to texture
and light are exact while geometry receives interior-only gradients through
barycentrics and normals. The soft silhouette carries the boundary gradients.

Screen space is the square viewport [-1,1]^2 (+y up). Cameras are weak
perspective and look along +z: smaller view-space z is nearer, and the
direction towards the viewer is (0, 0, -1).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from uvforge import morphable, uvtex
from uvforge._backend import kernels

VIEW_DIR = np.array([0.0, 0.0, -1.0])
SMALL_ANGLE = 1e-2


@dataclass
class Camera:
    rotation: np.ndarray
    translation: np.ndarray
    log_scale: float

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        self.log_scale = float(self.log_scale)

    @classmethod
    def from_params(cls, p_c) -> "Camera":
        p_c = np.asarray(p_c, dtype=np.float64)
        return cls(p_c[:3], p_c[3:5], p_c[5])

    def to_params(self) -> np.ndarray:
        return np.concatenate([self.rotation, self.translation, [self.log_scale]])

    @property
    def scale(self) -> float:
        return float(np.exp(self.log_scale))


@dataclass
class Light:
    direction: np.ndarray
    ambient: float
    diffuse: float
    specular: float

    @classmethod
    def from_params(cls, p_l) -> "Light":
        p_l = np.asarray(p_l, dtype=np.float64)
        return cls(p_l[:3].copy(), float(p_l[3]), float(p_l[4]), float(p_l[5]))

    def to_params(self) -> np.ndarray:
        return np.concatenate([self.direction, [self.ambient, self.diffuse, self.specular]])

    def gains(self):
        """Gains clamped at zero, plus the mask of gains that pass gradients."""
        raw = np.array([self.ambient, self.diffuse, self.specular])
        return np.maximum(raw, 0.0), (raw >= 0.0).astype(np.float64)


@dataclass
class RenderConfig:
    sigma: float = 1e-4
    background: tuple = (0.5, 0.5, 0.5)
    shininess: float = 16.0
    compute_silhouette: bool = True

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


@dataclass
class RenderOutput:
    image: np.ndarray
    silhouette: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray
    depth: np.ndarray

    @property
    def coverage(self) -> np.ndarray:
        return (self.tri_id >= 0).astype(np.float64)


# ------------------------------------------------------------------ rotation

def _skew(r):
    x, y, z = r
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _rodrigues_coeffs(theta):
    """A = sin/θ, B = (1-cos)/θ², and their derivatives divided by θ."""
    t2 = theta * theta
    if theta < SMALL_ANGLE:
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0 - t2 ** 3 / 5040.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0 - t2 ** 3 / 40320.0
        da = -1.0 / 3.0 + t2 / 30.0 - t2 * t2 / 840.0
        db = -1.0 / 12.0 + t2 / 180.0 - t2 * t2 / 6720.0
    else:
        s, c = np.sin(theta), np.cos(theta)
        a = s / theta
        b = (1.0 - c) / t2
        da = (theta * c - s) / (t2 * theta)
        db = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)
    return a, b, da, db


def rodrigues(r) -> np.ndarray:
    return rodrigues_vjp(r)[0]


def rodrigues_vjp(r):
    r = np.asarray(r, dtype=np.float64).reshape(3)
    theta = float(np.sqrt(r @ r))
    a, b, da, db = _rodrigues_coeffs(theta)
    k = _skew(r)
    k2 = k @ k
    rot = np.eye(3) + a * k + b * k2

    def pullback(d_rot):
        d_rot = np.asarray(d_rot, dtype=np.float64)
        out = np.empty(3)
        for i in range(3):
            e = _skew(np.eye(3)[i])
            # d/dr_i of A, B is (A'/θ)·r_i
            dr = da * r[i] * k + a * e + db * r[i] * k2 + b * (e @ k + k @ e)
            out[i] = np.sum(d_rot * dr)
        return out

    return rot, pullback


# ---------------------------------------------------------------- projection

def _view_vjp(vertices, rotation):
    rot, rot_back = rodrigues_vjp(rotation)
    v = np.asarray(vertices, dtype=np.float64)
    view = v @ rot.T

    def pullback(d_view):
        d_vertices = d_view @ rot
        d_rotation = rot_back(d_view.T @ v)
        return d_vertices, d_rotation

    return view, pullback


def _screen_vjp(view, cam: Camera):
    s = cam.scale
    screen = s * view[:, :2] + cam.translation
    depth = view[:, 2].copy()

    def pullback(d_screen, d_depth):
        d_view = np.zeros_like(view)
        if d_screen is not None:
            d_view[:, :2] = s * d_screen
        if d_depth is not None:
            d_view[:, 2] = d_depth
        d_t = np.zeros(2) if d_screen is None else d_screen.sum(axis=0)
        d_ls = 0.0 if d_screen is None else s * float(np.sum(d_screen * view[:, :2]))
        return d_view, d_t, d_ls

    return screen, depth, pullback


def project(vertices, cam: Camera):
    return project_vjp(vertices, cam)[0]


def project_vjp(vertices, cam: Camera):
    """Weak-perspective projection; pullback(d_screen, d_depth) -> (d_vertices, d_p_c)."""
    view, view_back = _view_vjp(vertices, cam.rotation)
    screen, depth, screen_back = _screen_vjp(view, cam)

    def pullback(d_screen=None, d_depth=None):
        d_view, d_t, d_ls = screen_back(d_screen, d_depth)
        d_vertices, d_rot = view_back(d_view)
        return d_vertices, np.concatenate([d_rot, d_t, [d_ls]])

    return (screen, depth), pullback


# -------------------------------------------------------------- rasterizing

def rasterize(screen, depth, triangles, width: int, height: int):
    """Hard z-buffer: returns (tri_id, bary, depth) buffers; lowest index wins ties."""
    if width < 1 or height < 1:
        raise ValueError("width and height must be >= 1")
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    return kernels.rasterize(screen, depth, triangles, int(width), int(height))


def pixel_centers(width: int, height: int):
    xs = (2.0 * np.arange(width) + 1.0) / width - 1.0
    ys = 1.0 - (2.0 * np.arange(height) + 1.0) / height
    return xs, ys


def barycentric_pullback(screen, triangles, tri_id, d_bary):
    """Cotangent on per-pixel barycentrics -> cotangent on screen positions."""
    screen = np.asarray(screen, dtype=np.float64)
    d_screen = np.zeros_like(screen)
    cov = tri_id >= 0
    if not cov.any():
        return d_screen
    h, w = tri_id.shape
    xs, ys = pixel_centers(w, h)
    rows, cols = np.nonzero(cov)
    px = xs[cols]
    py = ys[rows]
    tri = triangles[tri_id[rows, cols]]
    dl = d_bary[rows, cols]
    a, b, c = screen[tri[:, 0]], screen[tri[:, 1]], screen[tri[:, 2]]
    p = np.stack([px, py], axis=1)
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    ap, bp, cp = a - p, b - p, c - p

    def cross(u, v):
        return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]

    w0 = cross(bp, cp)
    w1 = cross(cp, ap)
    w2 = cross(ap, bp)
    dw0, dw1, dw2 = dl[:, 0] / area, dl[:, 1] / area, dl[:, 2] / area
    d_area = -(dl[:, 0] * w0 + dl[:, 1] * w1 + dl[:, 2] * w2) / (area * area)

    def du(v):  # d cross(u, v) / du
        return np.stack([v[:, 1], -v[:, 0]], axis=1)

    def dv(u):  # d cross(u, v) / dv
        return np.stack([-u[:, 1], u[:, 0]], axis=1)

    ga = dw1[:, None] * dv(cp) + dw2[:, None] * du(bp)
    gb = dw0[:, None] * du(cp) + dw2[:, None] * dv(ap)
    gc = dw0[:, None] * dv(bp) + dw1[:, None] * du(ap)
    ba, ca = b - a, c - a
    gb += d_area[:, None] * du(ca)
    gc += d_area[:, None] * dv(ba)
    ga -= d_area[:, None] * (du(ca) + dv(ba))
    n = screen.shape[0]
    for k, g in enumerate((ga, gb, gc)):
        for ax in range(2):
            d_screen[:, ax] += np.bincount(tri[:, k], weights=g[:, ax], minlength=n)
    return d_screen


def soft_silhouette(screen, triangles, width: int, height: int, sigma: float) -> np.ndarray:
    return soft_silhouette_vjp(screen, triangles, width, height, sigma)[0]


def soft_silhouette_vjp(screen, triangles, width: int, height: int, sigma: float):
    """Silhouette 1 - prod_j(1 - logistic(sign_j d_j^2 / sigma)) and its pullback to screen."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    screen = np.ascontiguousarray(screen, dtype=np.float64)
    sil, qnz, nzero = kernels.soft_silhouette(screen, triangles, int(width), int(height), float(sigma))

    def pullback(d_sil):
        return kernels.soft_silhouette_backward(np.asarray(d_sil, dtype=np.float64), screen, triangles,
                                                int(width), int(height), float(sigma), qnz, nzero)

    return sil, pullback


# ------------------------------------------------------------------ normals

def vertex_normals(vertices, triangles) -> np.ndarray:
    return vertex_normals_vjp(vertices, triangles)[0]


def vertex_normals_vjp(vertices, triangles):
    """Area-weighted vertex normals; unused vertices get (0, 0, 1)."""
    v = np.asarray(vertices, dtype=np.float64)
    tri = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    n = v.shape[0]
    e1 = v[tri[:, 1]] - v[tri[:, 0]]
    e2 = v[tri[:, 2]] - v[tri[:, 0]]
    face = np.cross(e1, e2)
    acc = np.zeros((n, 3))
    for k in range(3):
        for ax in range(3):
            acc[:, ax] += np.bincount(tri[:, k], weights=face[:, ax], minlength=n)
    norm = np.sqrt(np.sum(acc * acc, axis=1))
    valid = norm > 0
    normals = np.tile([0.0, 0.0, 1.0], (n, 1))
    normals[valid] = acc[valid] / norm[valid, None]

    def pullback(d_normals):
        d_normals = np.asarray(d_normals, dtype=np.float64)
        d_acc = np.zeros((n, 3))
        nv = normals[valid]
        proj = np.sum(d_normals[valid] * nv, axis=1, keepdims=True)
        d_acc[valid] = (d_normals[valid] - nv * proj) / norm[valid, None]
        d_face = d_acc[tri[:, 0]] + d_acc[tri[:, 1]] + d_acc[tri[:, 2]]
        d_e1 = np.cross(e2, d_face)
        d_e2 = np.cross(d_face, e1)
        d_v = np.zeros((n, 3))
        for ax in range(3):
            d_v[:, ax] += np.bincount(tri[:, 1], weights=d_e1[:, ax], minlength=n)
            d_v[:, ax] += np.bincount(tri[:, 2], weights=d_e2[:, ax], minlength=n)
            d_v[:, ax] -= np.bincount(tri[:, 0], weights=d_e1[:, ax] + d_e2[:, ax], minlength=n)
        return d_v

    return normals, pullback


# ------------------------------------------------------------------ shading

def _normalize_vjp(x):
    norm = float(np.sqrt(x @ x))
    if norm == 0.0:
        return np.zeros_like(x), lambda ct: np.zeros_like(x)
    u = x / norm
    return u, lambda ct: (ct - u * (u @ ct)) / norm


def shade(tri_id, bary, colors, normals, light: Light, view_dir, triangles, cfg: RenderConfig | None = None):
    return shade_vjp(tri_id, bary, colors, normals, light, view_dir, triangles, cfg)[0]


def shade_vjp(tri_id, bary, colors, normals, light: Light, view_dir, triangles, cfg: RenderConfig | None = None):
    """Per-pixel Phong shading of the rasterized buffers.

    pullback(d_image) -> (d_colors, d_normals, d_p_l, d_bary). Colors are
    clamped to [0,1] before interpolation and the shaded result is clamped too.
    """
    cfg = cfg or RenderConfig()
    h, w = tri_id.shape
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.float64)
    normals = np.asarray(normals, dtype=np.float64)
    n = colors.shape[0]
    col_mask = ((colors >= 0.0) & (colors <= 1.0)).astype(np.float64)
    col = np.clip(colors, 0.0, 1.0)
    (amb, dif, spc), gain_mask = light.gains()
    l_hat, l_back = _normalize_vjp(np.asarray(light.direction, dtype=np.float64))
    v_hat = np.asarray(view_dir, dtype=np.float64)
    alpha = cfg.shininess

    image = np.empty((h, w, 3))
    image[...] = np.asarray(cfg.background, dtype=np.float64)
    cov = tri_id >= 0
    rows, cols = np.nonzero(cov)
    tri = triangles[tri_id[rows, cols]]
    lam = bary[rows, cols]
    c = np.einsum("pk,pkc->pc", lam, col[tri])
    nsum = np.einsum("pk,pkc->pc", lam, normals[tri])
    nlen = np.sqrt(np.sum(nsum * nsum, axis=1))
    safe = nlen > 0
    n_hat = np.zeros_like(nsum)
    n_hat[safe] = nsum[safe] / nlen[safe, None]
    ndl = n_hat @ l_hat
    diff = np.maximum(ndl, 0.0)
    ndv = n_hat @ v_hat
    rdv = 2.0 * ndl * ndv - l_hat @ v_hat
    rpos = np.maximum(rdv, 0.0)
    spec = rpos ** alpha
    k = amb + dif * diff
    pre = c * k[:, None] + (spc * spec)[:, None]
    image[rows, cols] = np.clip(pre, 0.0, 1.0)

    def pullback(d_image):
        d_image = np.asarray(d_image, dtype=np.float64)
        g = d_image[rows, cols] * ((pre >= 0.0) & (pre <= 1.0))
        d_c = g * k[:, None]
        d_amb = float(np.sum(g * c))
        d_dif = float(np.sum(g * c * diff[:, None]))
        gsum = g.sum(axis=1)
        d_spc = float(np.sum(gsum * spec))
        d_ndl = np.sum(g * c, axis=1) * dif * (ndl > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dspec = np.where(rdv > 0, alpha * rpos ** (alpha - 1.0), 0.0)
        d_rdv = gsum * spc * dspec
        d_ndl = d_ndl + d_rdv * 2.0 * ndv
        d_nhat = d_ndl[:, None] * l_hat[None, :] + (d_rdv * 2.0 * ndl)[:, None] * v_hat[None, :]
        d_lhat = d_ndl @ n_hat - d_rdv.sum() * v_hat
        d_nsum = np.zeros_like(nsum)
        proj = np.sum(d_nhat[safe] * n_hat[safe], axis=1, keepdims=True)
        d_nsum[safe] = (d_nhat[safe] - n_hat[safe] * proj) / nlen[safe, None]

        d_col = np.zeros((n, 3))
        d_nrm = np.zeros((n, 3))
        for j in range(3):
            wc = lam[:, j:j + 1] * d_c
            wn = lam[:, j:j + 1] * d_nsum
            for ax in range(3):
                d_col[:, ax] += np.bincount(tri[:, j], weights=wc[:, ax], minlength=n)
                d_nrm[:, ax] += np.bincount(tri[:, j], weights=wn[:, ax], minlength=n)
        d_lam = np.einsum("pc,pkc->pk", d_c, col[tri]) + np.einsum("pc,pkc->pk", d_nsum, normals[tri])
        d_bary = np.zeros((h, w, 3))
        d_bary[rows, cols] = d_lam
        d_pl = np.concatenate([l_back(d_lhat), np.array([d_amb, d_dif, d_spc]) * gain_mask])
        return d_col * col_mask, d_nrm, d_pl, d_bary

    return image, pullback


# -------------------------------------------------------------- composition

def render_mesh_vjp(vertices, colors, triangles, camera: Camera, light: Light,
                    width: int, height: int, cfg: RenderConfig | None = None):
    """Render a colored mesh; pullback(d_image, d_silhouette) returns a dict of cotangents.

    Keys: ``vertices``, ``colors``, ``p_c`` (6) and ``p_l`` (6).
    """
    cfg = cfg or RenderConfig()
    triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    view, view_back = _view_vjp(vertices, camera.rotation)
    screen, depth, screen_back = _screen_vjp(view, camera)
    tri_id, bary, zbuf = rasterize(screen, depth, triangles, width, height)
    normals, normals_back = vertex_normals_vjp(view, triangles)
    image, shade_back = shade_vjp(tri_id, bary, colors, normals, light, VIEW_DIR, triangles, cfg)
    if cfg.compute_silhouette:
        sil, sil_back = soft_silhouette_vjp(screen, triangles, width, height, cfg.sigma)
    else:
        sil, sil_back = (tri_id >= 0).astype(np.float64), None
    out = RenderOutput(image=image, silhouette=sil, tri_id=tri_id, bary=bary, depth=zbuf)

    def pullback(d_image=None, d_silhouette=None):
        d_screen = np.zeros_like(screen)
        d_view = np.zeros_like(view)
        n = view.shape[0]
        d_colors = np.zeros((n, 3))
        d_pl = np.zeros(6)
        if d_image is not None:
            d_colors, d_normals, d_pl, d_bary = shade_back(d_image)
            d_view += normals_back(d_normals)
            d_screen += barycentric_pullback(screen, triangles, tri_id, d_bary)
        if d_silhouette is not None:
            if sil_back is None:
                raise ValueError("silhouette gradients need compute_silhouette=True")
            d_screen += sil_back(d_silhouette)
        dv, d_t, d_ls = screen_back(d_screen, None)
        d_view += dv
        d_vertices, d_rot = view_back(d_view)
        return {
            "vertices": d_vertices,
            "colors": d_colors,
            "p_c": np.concatenate([d_rot, d_t, [d_ls]]),
            "p_l": d_pl,
        }

    return out, pullback


def render_mesh(vertices, colors, triangles, camera, light, width, height, cfg=None) -> RenderOutput:
    return render_mesh_vjp(vertices, colors, triangles, camera, light, width, height, cfg)[0]


def form_image_vjp(model: morphable.MorphableModel, texture, params: morphable.ParamSet,
                   width: int, height: int, cfg: RenderConfig | None = None):
    """Image formation from a UV map (or, with ``texture=None``, the linear texture ``p_t``).

    pullback(d_image, d_silhouette) -> dict with ``p_i``, ``p_e``, ``p_c``,
    ``p_l`` and either ``map`` or ``p_t``.
    """
    params.validate(model)
    shape, shape_back = morphable.sample_shape_vjp(model, params.p_i, params.p_e)
    if texture is None:
        if params.p_t is None:
            raise ValueError("linear texture rendering needs p_t")
        colors, tex_back = morphable.sample_texture_vjp(model, params.p_t)
        tex_key = "p_t"
    else:
        colors, uv_back = uvtex.sample_all_vjp(texture, model.uv_coords)
        tex_back = lambda ct: uv_back(ct)[0]  # noqa: E731 - uv coordinates are fixed
        tex_key = "map"
    out, back = render_mesh_vjp(shape, colors, model.triangles, Camera.from_params(params.p_c),
                                Light.from_params(params.p_l), width, height, cfg)

    def pullback(d_image=None, d_silhouette=None):
        g = back(d_image, d_silhouette)
        d_pi, d_pe = shape_back(g["vertices"])
        return {"p_i": d_pi, "p_e": d_pe, "p_c": g["p_c"], "p_l": g["p_l"], tex_key: tex_back(g["colors"])}

    return out, pullback


def form_image(model, texture, params, width, height, cfg=None) -> RenderOutput:
    return form_image_vjp(model, texture, params, width, height, cfg)[0]


class FixedGeometry:
    """Rendering with geometry, camera and light held fixed.

    With those fixed the image is an affine function of the vertex colors
    (up to clamping), so the raster, normals and lighting terms are computed
    once. Used by the training loop and texture fitting.
    """

    def __init__(self, model: morphable.MorphableModel, params: morphable.ParamSet,
                 width: int, height: int, cfg: RenderConfig | None = None):
        self.cfg = cfg or RenderConfig()
        self.width, self.height = width, height
        shape = morphable.sample_shape(model, params.p_i, params.p_e)
        cam = Camera.from_params(params.p_c)
        light = Light.from_params(params.p_l)
        rot = rodrigues(cam.rotation)
        view = shape @ rot.T
        screen = cam.scale * view[:, :2] + cam.translation
        self.tri_id, self.bary, self.depth = rasterize(screen, view[:, 2], model.triangles, width, height)
        if self.cfg.compute_silhouette:
            self.silhouette = soft_silhouette(screen, model.triangles, width, height, self.cfg.sigma)
        else:
            self.silhouette = (self.tri_id >= 0).astype(np.float64)
        self.coverage = (self.tri_id >= 0).astype(np.float64)
        self.n_vertices = model.n_vertices
        normals = vertex_normals(view, model.triangles)
        # lighting terms of a white albedo: shade() is affine in colors given these
        self.rows, self.cols = np.nonzero(self.tri_id >= 0)
        self.tri = model.triangles[self.tri_id[self.rows, self.cols]]
        self.lam = self.bary[self.rows, self.cols]
        nsum = np.einsum("pk,pkc->pc", self.lam, normals[self.tri])
        nlen = np.sqrt(np.sum(nsum * nsum, axis=1))
        n_hat = np.where(nlen[:, None] > 0, nsum / np.where(nlen > 0, nlen, 1.0)[:, None], 0.0)
        (amb, dif, spc), _ = light.gains()
        l_hat = _normalize_vjp(np.asarray(light.direction, dtype=np.float64))[0]
        ndl = n_hat @ l_hat
        rdv = 2.0 * ndl * (n_hat @ VIEW_DIR) - l_hat @ VIEW_DIR
        self.k = amb + dif * np.maximum(ndl, 0.0)
        self.spec = spc * np.maximum(rdv, 0.0) ** self.cfg.shininess
        self.background = np.asarray(self.cfg.background, dtype=np.float64)

    def shade_vjp(self, colors):
        colors = np.asarray(colors, dtype=np.float64)
        col_mask = (colors >= 0.0) & (colors <= 1.0)
        col = np.clip(colors, 0.0, 1.0)
        c = np.einsum("pk,pkc->pc", self.lam, col[self.tri])
        pre = c * self.k[:, None] + self.spec[:, None]
        image = np.empty((self.height, self.width, 3))
        image[...] = self.background
        image[self.rows, self.cols] = np.clip(pre, 0.0, 1.0)
        pass_mask = (pre >= 0.0) & (pre <= 1.0)

        def pullback(d_image):
            g = np.asarray(d_image, dtype=np.float64)[self.rows, self.cols] * pass_mask * self.k[:, None]
            d_col = np.zeros((self.n_vertices, 3))
            for j in range(3):
                wc = self.lam[:, j:j + 1] * g
                for ax in range(3):
                    d_col[:, ax] += np.bincount(self.tri[:, j], weights=wc[:, ax], minlength=self.n_vertices)
            return d_col * col_mask

        return image, pullback

    def shade(self, colors) -> np.ndarray:
        return self.shade_vjp(colors)[0]
