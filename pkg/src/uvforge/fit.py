"""Analysis-by-synthesis fitting: pixel and landmark energies, Adam, fitting loops."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from uvforge import io, metrics, morphable, render, uvtex


@dataclass
class FitConfig:
    lr: float = 0.01
    steps: int = 200
    lambda_pix: float = 1.0
    lambda_lm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    prior: float = 0.0
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if int(self.steps) < 1:
            raise ValueError("steps must be >= 1")
        if min(self.lambda_pix, self.lambda_lm, self.prior) < 0:
            raise ValueError("loss weights must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


@dataclass
class Landmarks:
    points: np.ndarray
    visibility: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=bool).reshape(-1)
        if self.points.shape[0] != morphable.N_LANDMARKS or self.visibility.shape[0] != morphable.N_LANDMARKS:
            raise morphable.DimensionError(f"expected {morphable.N_LANDMARKS} landmarks")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite landmark coordinates")

    @classmethod
    def load(cls, path) -> "Landmarks":
        obj = io.read_json(path)
        if isinstance(obj, list):
            return cls(obj, np.ones(len(obj), dtype=bool))
        return cls(obj["points"], obj.get("visibility", [True] * len(obj["points"])))

    def save(self, path) -> None:
        io.write_json(path, {"points": self.points.tolist(), "visibility": self.visibility.tolist()})


# ----------------------------------------------------------------- energies

def _image(x):
    return x.image if isinstance(x, render.RenderOutput) else np.asarray(x, dtype=np.float64)


def e_pix_vjp(target, rendered, mask):
    """Mean over the foreground of the RGB L2 distance; pullback gives d(rendered image)."""
    img = _image(rendered)
    fg = np.asarray(mask) > 0.5
    count = int(fg.sum())
    if count == 0:
        raise ValueError("empty foreground")
    res = img - np.asarray(target, dtype=np.float64)
    norm = np.sqrt(np.sum(res * res, axis=-1))
    value = float(norm[fg].sum() / count)

    def pullback(ct=1.0):
        safe = np.where(norm > 0, norm, 1.0)
        g = np.where((fg & (norm > 0))[..., None], res / safe[..., None], 0.0)
        return float(ct) * g / count

    return value, pullback


def e_pix(target, rendered, mask) -> float:
    return e_pix_vjp(target, rendered, mask)[0]


def e_lm_vjp(target: Landmarks, shape, cam: render.Camera, model: morphable.MorphableModel):
    """Mean over visible landmarks of the screen-space distance; pullback -> (d_shape, d_p_c)."""
    vis = target.visibility
    nvis = int(vis.sum())
    if nvis == 0:
        raise ValueError("no visible landmarks")
    lm3, lm_back = morphable.landmark_vertices_vjp(model, shape)
    (screen, _), proj_back = render.project_vjp(lm3, cam)
    res = screen - target.points
    dist = np.sqrt(np.sum(res * res, axis=1))
    value = float(dist[vis].sum() / nvis)

    def pullback(ct=1.0):
        safe = np.where(dist > 0, dist, 1.0)
        d_screen = np.where((vis & (dist > 0))[:, None], res / safe[:, None], 0.0) * (float(ct) / nvis)
        d_lm3, d_pc = proj_back(d_screen, None)
        return lm_back(d_lm3), d_pc

    return value, pullback


def e_lm(target, shape, cam, model) -> float:
    return e_lm_vjp(target, shape, cam, model)[0]


def e_l1_vjp(target, rendered, mask):
    """Mean over the foreground of the per-pixel RGB L1 distance."""
    img = _image(rendered)
    fg = np.asarray(mask) > 0.5
    count = int(fg.sum())
    if count == 0:
        raise ValueError("empty foreground")
    res = img - np.asarray(target, dtype=np.float64)
    value = float(np.abs(res)[fg].sum() / count)
    return value, lambda ct=1.0: float(ct) * np.sign(res) * fg[..., None] / count


# -------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros_like(cls, x) -> "AdamState":
        return cls(np.zeros_like(x, dtype=np.float64), np.zeros_like(x, dtype=np.float64), 0)


def adam_step(params, grads, state: AdamState, cfg):
    """One bias-corrected Adam update. ``cfg`` needs lr, beta1, beta2, eps."""
    params = np.asarray(params, dtype=np.float64)
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {params.shape}")
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    b1, b2 = cfg.beta1, cfg.beta2
    t = state.t + 1
    m = b1 * state.m + (1.0 - b1) * g
    v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    new = params - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return new, AdamState(m, v, t)


@dataclass
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.99
    eps: float = 1e-8


class Adam:
    """Adam over a dict of named arrays (network parameters)."""

    def __init__(self, lr=2e-4, beta1=0.0, beta2=0.99, eps=1e-8):
        self.cfg = AdamConfig(lr, beta1, beta2, eps)
        self.state = {}

    def step(self, params: dict, grads: dict) -> dict:
        out = {}
        for k, p in params.items():
            st = self.state.get(k) or AdamState.zeros_like(p)
            out[k], self.state[k] = adam_step(p, grads[k], st, self.cfg)
        return out


# -------------------------------------------------------------- shape fitting

_GROUPS = ("p_i", "p_e", "p_c", "p_l", "p_t")


def _pack(ps: morphable.ParamSet) -> np.ndarray:
    return np.concatenate([getattr(ps, k) for k in _GROUPS])


def _unpack(x, like: morphable.ParamSet) -> morphable.ParamSet:
    parts, i = {}, 0
    for k in _GROUPS:
        n = getattr(like, k).size
        parts[k] = x[i:i + n].copy()
        i += n
    return morphable.ParamSet(**parts)


@dataclass
class FitResult:
    params: morphable.ParamSet
    loss: float
    trace: list = field(default_factory=list)
    output: render.RenderOutput | None = None

    @property
    def initial_loss(self) -> float:
        return self.trace[0]["total"]


def shape_objective(target, landmarks: Landmarks, model, ps: morphable.ParamSet, cfg: FitConfig):
    """Combined loss at ``ps`` and its gradient packed like ``_pack``."""
    rcfg = render.RenderConfig(compute_silhouette=False)
    out, back = render.form_image_vjp(model, None, ps, cfg.width, cfg.height, rcfg)
    # the mask is recomputed here and held constant for the gradient
    mask = out.coverage
    ep, ep_back = e_pix_vjp(target, out.image, mask)
    shape = morphable.sample_shape(model, ps.p_i, ps.p_e)
    el, el_back = e_lm_vjp(landmarks, shape, render.Camera.from_params(ps.p_c), model)
    g = back(ep_back(cfg.lambda_pix), None)
    d_shape, d_pc_lm = el_back(cfg.lambda_lm)
    d_pi, d_pe = morphable.sample_shape_vjp(model, ps.p_i, ps.p_e)[1](d_shape)
    grads = {"p_i": g["p_i"] + d_pi, "p_e": g["p_e"] + d_pe, "p_c": g["p_c"] + d_pc_lm,
             "p_l": g["p_l"], "p_t": g["p_t"]}
    total = cfg.lambda_pix * ep + cfg.lambda_lm * el
    if cfg.prior > 0:
        for k in ("p_i", "p_e", "p_t"):
            v = getattr(ps, k)
            total += cfg.prior * float(v @ v)
            grads[k] = grads[k] + 2.0 * cfg.prior * v
    grad = np.concatenate([grads[k] for k in _GROUPS])
    return {"e_pix": ep, "e_lm": el, "total": total}, grad, out


def fit_shape(target, landmarks: Landmarks, model, init: morphable.ParamSet, cfg: FitConfig) -> FitResult:
    """Adam on (p_i, p_e, p_c, p_l, p_t) against pixel + landmark energies; returns the best iterate."""
    if init.p_t is None:
        raise ValueError("fit_shape needs an initial p_t (linear texture)")
    init.validate(model)
    x = _pack(init)
    state = AdamState.zeros_like(x)
    best = None
    trace = []
    for step in range(cfg.steps):
        ps = _unpack(x, init)
        losses, grad, out = shape_objective(target, landmarks, model, ps, cfg)
        trace.append({"step": step, **losses})
        if best is None or losses["total"] < best.loss:
            best = FitResult(ps, losses["total"], trace, out)
        x, state = adam_step(x, grad, state, cfg)
    return best


# ---------------------------------------------------- texture and light fitting

@dataclass
class TextureFit:
    p_l: np.ndarray
    p_t: np.ndarray | None
    z: np.ndarray | None
    loss: float
    l21: float
    output: render.RenderOutput
    trace: list = field(default_factory=list)


def fit_texture_light(target, params: morphable.ParamSet, model, cfg: FitConfig, generator=None, z0=None,
                      fit_light: bool = True) -> TextureFit:
    """Fit texture (linear ``p_t`` or a generator latent) and light with geometry and camera fixed.

    Minimizes the foreground mean of the per-pixel L1 distance.
    """
    rcfg = render.RenderConfig(compute_silhouette=False)
    use_gen = generator is not None
    if use_gen:
        if z0 is None:
            raise ValueError("generator fitting needs an initial latent z0")
        tex = np.asarray(z0, dtype=np.float64).copy()
    else:
        tex = (params.p_t if params.p_t is not None else np.zeros(model.k_t)).copy()
    nt = tex.size
    x = np.concatenate([tex, params.p_l])
    state = AdamState.zeros_like(x)
    best, trace = None, []
    for step in range(cfg.steps):
        ps = params.copy()
        ps.p_l = x[nt:].copy()
        if use_gen:
            maps = generator.forward(x[None, :nt])
            out, back = render.form_image_vjp(model, uvtex.UVMap(maps[0]), ps, cfg.width, cfg.height, rcfg)
        else:
            ps.p_t = x[:nt].copy()
            out, back = render.form_image_vjp(model, None, ps, cfg.width, cfg.height, rcfg)
        loss, l_back = e_l1_vjp(target, out.image, out.coverage)
        trace.append({"step": step, "l1": loss})
        if best is None or loss < best.loss:
            best = TextureFit(ps.p_l.copy(), None if use_gen else ps.p_t.copy(),
                              x[:nt].copy() if use_gen else None, loss,
                              metrics.l21_error(target, out.image, out.coverage), out, trace)
        g = back(l_back(1.0), None)
        if use_gen:
            d_tex, _ = generator.backward(g["map"][None])
            d_tex = d_tex[0]
        else:
            d_tex = g["p_t"]
        grad = np.concatenate([d_tex, g["p_l"] if fit_light else np.zeros(6)])
        x, state = adam_step(x, grad, state, cfg)
    return best
