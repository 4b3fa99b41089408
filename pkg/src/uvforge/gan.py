"""Render-in-the-loop adversarial training of a UV-map generator.

A generator maps latents to UV maps; each map is sampled onto a sample's
fitted mesh, shaded with the sample's camera and light, and shown to an
image-space discriminator. Background handling follows one of two
strategies: blank out the real background, or paste the real background
behind the render.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from uvforge import io, metrics, nn, render, uvtex
from uvforge.fit import Adam


class MaskStrategy(enum.Enum):
    MASK_REAL = "mask_real"
    COMPOSITE_BG = "composite_bg"

    @classmethod
    def parse(cls, value) -> "MaskStrategy":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"unknown mask_strategy '{value}' (expected mask_real or composite_bg)") from None


MaskRealForeground = MaskStrategy.MASK_REAL
CompositeRealBackground = MaskStrategy.COMPOSITE_BG


@dataclass
class TrainSample:
    image: np.ndarray
    params: object
    silhouette: np.ndarray
    uv: uvtex.UVMap | None = None
    landmarks: np.ndarray | None = None
    visibility: np.ndarray | None = None
    label: int = 0

    def __post_init__(self):
        sil = np.asarray(self.silhouette, dtype=np.float64)
        if sil.min(initial=0.0) < 0.0 or sil.max(initial=0.0) > 1.0:
            raise ValueError("silhouette must lie in [0,1]")
        self.silhouette = sil


@dataclass
class GANConfig:
    latent_dim: int = 32
    uv_w: int = 32
    uv_h: int = 32
    image_w: int = 64
    image_h: int = 64
    base_channels: int = 64
    batch_size: int = 8
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.99
    gamma_r1: float = 10.0
    steps: int = 2000
    seed: int = 0
    mask_strategy: str = "mask_real"
    holdout: int = 64
    eval_every: int = 250
    extractor: str = "downsample"
    bg_color: float = 0.5

    def __post_init__(self):
        MaskStrategy.parse(self.mask_strategy)
        if self.uv_w != self.uv_h or self.uv_w < 8 or self.uv_w & (self.uv_w - 1):
            raise ValueError("uv resolution must be a square power of two >= 8")
        if self.image_w % 16 or self.image_h % 16:
            raise ValueError("image size must be a multiple of 16")
        if self.batch_size < 1 or self.steps < 0 or self.latent_dim < 1:
            raise ValueError("batch_size and latent_dim must be >= 1, steps >= 0")
        if self.gamma_r1 < 0:
            raise ValueError("gamma_r1 must be non-negative")

    @classmethod
    def from_dict(cls, obj: dict) -> "GANConfig":
        known = {f.name for f in fields(cls)}
        for key in obj:
            if key not in known:
                raise ValueError(f"unknown config key '{key}'")
        return cls(**obj)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------- networks

class Generator:
    """latent -> dense 4×4×c -> (up 2×, 3×3 conv, leaky ReLU)* -> 1×1 conv -> logistic."""

    def __init__(self, latent_dim=32, resolution=32, base_channels=64, seed=0):
        rng = np.random.default_rng([seed, 1])
        self.latent_dim, self.resolution, self.base_channels = latent_dim, resolution, base_channels
        n_up = int(np.log2(resolution // 4))
        chans = [base_channels] + [max(16, base_channels >> s) for s in range(n_up)]
        layers = [nn.Dense("g.fc", latent_dim, 16 * chans[0], rng), nn.Reshape((4, 4, chans[0])), nn.LeakyReLU()]
        for s in range(n_up):
            layers += [nn.Upsample2x(), nn.Conv2d(f"g.conv{s}", chans[s], chans[s + 1], rng), nn.LeakyReLU()]
        layers += [nn.Conv2d("g.out", chans[-1], 3, rng, k=1), nn.Sigmoid()]
        self.net = nn.Sequential(layers)

    @property
    def params(self) -> dict:
        return self.net.params

    def set_params(self, p: dict) -> None:
        self.net.set_params(p)

    def forward(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent has length {z.shape[1]}, generator expects {self.latent_dim}")
        return self.net.forward(z)

    def backward(self, d_maps):
        """Returns (d_z, parameter gradients) for the most recent forward."""
        return self.net.backward(d_maps)

    def arch(self) -> dict:
        return {"latent_dim": self.latent_dim, "resolution": self.resolution, "base_channels": self.base_channels}


def generate(G: Generator, z) -> uvtex.UVMap:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    return uvtex.UVMap(G.forward(z[None])[0])


class Discriminator:
    """image -> strided 3×3 convs with leaky ReLU -> dense logit."""

    CHANNELS = (16, 32, 64, 64)

    def __init__(self, width=64, height=64, seed=0, slope=nn.LEAK, zero_last=False):
        rng = np.random.default_rng([seed, 2])
        self.width, self.height, self.slope = width, height, slope
        layers, c = [], 3
        for i, co in enumerate(self.CHANNELS):
            layers += [nn.Conv2d(f"d.conv{i}", c, co, rng, stride=2), nn.LeakyReLU(slope)]
            c = co
        flat = (height // 16) * (width // 16) * c
        layers += [nn.Reshape((flat,)), nn.Dense("d.fc", flat, 1, rng, zero=zero_last)]
        self.net = nn.Sequential(layers)

    @property
    def params(self) -> dict:
        return self.net.params

    def set_params(self, p: dict) -> None:
        self.net.set_params(p)

    def forward(self, x) -> np.ndarray:
        logits = self.net.forward(np.asarray(x, dtype=np.float64))[:, 0]
        if not np.all(np.isfinite(logits)):
            raise FloatingPointError("non-finite discriminator logits")
        return logits

    def backward(self, d_logits):
        return self.net.backward(np.asarray(d_logits, dtype=np.float64)[:, None])

    def r1_grads(self, batch_size: int):
        """Input gradient g = dD/dx at the last forward, and d/dθ of sum_b ||g_b||²/2.

        The network is piecewise linear, so the second-order term reduces to
        parameter gradients of the tangent network pushed along g.
        """
        deltas = {}
        gy = np.ones((batch_size, 1))
        for k, layer in reversed(list(enumerate(self.net.layers))):
            if hasattr(layer, "weight_grad"):
                deltas[k] = gy
            gy, _ = layer.backward(gy)
        g = gy
        grads = {}
        xdot = g
        for k, layer in enumerate(self.net.layers):
            if k in deltas:
                grads.update(layer.weight_grad(xdot, deltas[k]))
            if hasattr(layer, "tangent"):
                xdot = layer.tangent(xdot)
        return g, grads

    def arch(self) -> dict:
        return {"width": self.width, "height": self.height, "slope": self.slope}


# ---------------------------------------------------------------- losses

def softplus(x):
    return np.logaddexp(0.0, x)


def logistic(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def apply_mask(strategy, real, rendered, background=None, real_silhouette=None, bg_color=metrics.BG_COLOR):
    """Returns (real_for_D, fake_for_D) for one image pair.

    ``rendered`` is a RenderOutput whose soft silhouette blends the fake.
    ``background`` is required for CompositeRealBackground.
    """
    strategy = MaskStrategy.parse(strategy)
    sil_f = np.asarray(rendered.silhouette, dtype=np.float64)[..., None]
    if strategy is MaskStrategy.MASK_REAL:
        sil_r = sil_f[..., 0] if real_silhouette is None else real_silhouette
        real_d = metrics.mask_image(real, sil_r, bg_color)
        fake_d = sil_f * rendered.image + (1.0 - sil_f) * np.asarray(bg_color, dtype=np.float64)
    else:
        if background is None:
            raise ValueError("CompositeRealBackground needs a background image")
        real_d = np.asarray(real, dtype=np.float64)
        fake_d = sil_f * rendered.image + (1.0 - sil_f) * np.asarray(background, dtype=np.float64)
    return real_d, fake_d


def d_loss_and_grads(D: Discriminator, real, fake, gamma_r1: float):
    """Non-saturating D loss with R1 on reals, averaged over the batch."""
    if gamma_r1 < 0:
        raise ValueError("gamma_r1 must be non-negative")
    b = real.shape[0]
    lr_ = D.forward(real)
    record = {"d_real": float(lr_.mean())}
    loss = float(np.mean(softplus(-lr_)))
    grads = {}
    if gamma_r1 > 0:
        g, r1g = D.r1_grads(b)
        r1 = 0.5 * gamma_r1 * float(np.mean(np.sum(g.reshape(b, -1) ** 2, axis=1)))
        loss += r1
        record["r1"] = r1
        grads = {k: v * (gamma_r1 / b) for k, v in r1g.items()}
    else:
        record["r1"] = 0.0
    _, gr = D.backward(-logistic(-lr_) / b)
    lf = D.forward(fake)
    record["d_fake"] = float(lf.mean())
    loss += float(np.mean(softplus(lf)))
    _, gf = D.backward(logistic(lf) / b)
    for k in gr:
        grads[k] = grads.get(k, 0.0) + gr[k] + gf[k]
    record["d_loss"] = loss
    return loss, grads, record


def d_loss(D, real, fake, gamma_r1) -> float:
    return d_loss_and_grads(D, real, fake, gamma_r1)[0]


def g_loss_vjp(D: Discriminator, fake):
    """softplus(-D(fake)) averaged; pullback returns d(fake)."""
    lf = D.forward(fake)
    b = lf.shape[0]
    value = float(np.mean(softplus(-lf)))

    def pullback(ct=1.0):
        dx, _ = D.backward(-float(ct) * logistic(-lf) / b)
        return dx

    return value, pullback


def g_loss(D, fake) -> float:
    return g_loss_vjp(D, fake)[0]


# ------------------------------------------------------------ training step

class PreparedSample:
    """A training sample with its fixed-geometry render plan and masked real image."""

    def __init__(self, model, sample: TrainSample, cfg: GANConfig, render_cfg=None):
        self.sample = sample
        self.geom = render.FixedGeometry(model, sample.params, cfg.image_w, cfg.image_h, render_cfg)
        self.bg = np.full(3, cfg.bg_color)
        self.real_masked = metrics.mask_image(sample.image, sample.silhouette, self.bg)


def prepare(model, samples, cfg: GANConfig):
    return [PreparedSample(model, s, cfg) for s in samples]


def render_fakes_vjp(model, maps, batch, cfg: GANConfig, sampler: uvtex.Sampler):
    """Render generator maps onto each sample and apply the mask strategy.

    Returns (real_for_D, fake_for_D, pullback d_fake -> d_maps).
    """
    strategy = MaskStrategy.parse(cfg.mask_strategy)
    colors = sampler(maps)
    reals, fakes, backs, sils = [], [], [], []
    for b, ps in enumerate(batch):
        img, back = ps.geom.shade_vjp(colors[b])
        sil = ps.geom.silhouette[..., None]
        if strategy is MaskStrategy.MASK_REAL:
            reals.append(ps.real_masked)
            fakes.append(sil * img + (1.0 - sil) * ps.bg)
        else:
            reals.append(ps.sample.image)
            fakes.append(sil * img + (1.0 - sil) * ps.sample.image)
        backs.append(back)
        sils.append(sil)

    def pullback(d_fake):
        d_colors = np.stack([backs[b](sils[b] * d_fake[b]) for b in range(len(batch))])
        return sampler.pullback(d_colors)

    return np.stack(reals), np.stack(fakes), pullback


def g_chain_loss(G, D, model, batch, z, cfg, sampler):
    """Generator loss through render and mask; returns (loss, G grads, d_z)."""
    maps = G.forward(z)
    _, fake, back = render_fakes_vjp(model, maps, batch, cfg, sampler)
    loss, l_back = g_loss_vjp(D, fake)
    d_maps = back(l_back(1.0))
    d_z, grads = G.backward(d_maps)
    return loss, grads, d_z


class Trainer:
    """Holds networks, optimizers and the prepared training/eval splits."""

    def __init__(self, model, samples, cfg: GANConfig):
        if len(samples) <= cfg.holdout:
            raise ValueError(f"dataset has {len(samples)} samples, need more than holdout={cfg.holdout}")
        self.model, self.cfg = model, cfg
        self.G = Generator(cfg.latent_dim, cfg.uv_w, cfg.base_channels, seed=cfg.seed)
        self.D = Discriminator(cfg.image_w, cfg.image_h, seed=cfg.seed)
        self.opt_g = Adam(cfg.lr, cfg.beta1, cfg.beta2)
        self.opt_d = Adam(cfg.lr, cfg.beta1, cfg.beta2)
        self.sampler = uvtex.Sampler(model.uv_coords, cfg.uv_w, cfg.uv_h)
        n_train = len(samples) - cfg.holdout
        self.train = prepare(model, samples[:n_train], cfg)
        self.held = prepare(model, samples[n_train:], cfg) if cfg.holdout else self.train
        self.step = 0
        erng = np.random.default_rng([cfg.seed, 3])
        self.eval_z = erng.standard_normal((len(self.held), cfg.latent_dim))
        self.extractor = metrics.make_extractor(cfg.extractor, seed=cfg.seed)
        self._real_stats = None

    def train_step(self) -> dict:
        rng = np.random.default_rng([self.cfg.seed, 100, self.step])
        idx = rng.choice(len(self.train), size=min(self.cfg.batch_size, len(self.train)), replace=False)
        z = rng.standard_normal((len(idx), self.cfg.latent_dim))
        record = train_step(self.G, self.D, [self.train[i] for i in idx], z, self.cfg, self.model,
                            self.sampler, self.opt_g, self.opt_d)
        self.step += 1
        record["step"] = self.step
        return record

    def masked_fid(self) -> float:
        """FID proxy between masked held-out reals and masked renders of fixed eval latents."""
        if self._real_stats is None:
            feats = metrics.feature_matrix(self.extractor, [p.real_masked for p in self.held])
            self._real_stats = metrics.gaussian_stats(feats)
        fake = render_eval(self.G, self.model, self.held, self.eval_z, self.sampler, self.cfg)
        return metrics.fid(self._real_stats, metrics.gaussian_stats(metrics.feature_matrix(self.extractor, fake)))


def render_eval(G, model, prepared, z, sampler, cfg, chunk=32):
    """Masked fake images for each prepared sample with its paired latent."""
    out = []
    for s in range(0, len(prepared), chunk):
        part = prepared[s:s + chunk]
        colors = sampler(G.forward(z[s:s + chunk]))
        for b, ps in enumerate(part):
            out.append(metrics.mask_image(ps.geom.shade(colors[b]), ps.geom.silhouette, ps.bg))
    return out


def train_step(G, D, batch, z, cfg: GANConfig, model, sampler, opt_g: Adam, opt_d: Adam) -> dict:
    """One D update (with R1) then one G update through the renderer."""
    if not batch:
        raise ValueError("empty batch")
    maps = G.forward(z)
    real, fake, _ = render_fakes_vjp(model, maps, batch, cfg, sampler)
    dl, d_grads, record = d_loss_and_grads(D, real, fake, cfg.gamma_r1)
    D.set_params(opt_d.step(D.params, d_grads))
    gl, g_grads, _ = g_chain_loss(G, D, model, batch, z, cfg, sampler)
    G.set_params(opt_g.step(G.params, g_grads))
    record["g_loss"] = gl
    return record


# -------------------------------------------------------------- checkpoints

def save_checkpoint(directory, G: Generator, D: Discriminator, cfg: GANConfig, step: int) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tensors = {}
    for net in (G, D):
        for k, v in net.params.items():
            io.write_tensor(d / f"{k}.uvtf", v)
            tensors[k] = f"{k}.uvtf"
    io.write_json(d / "manifest.json", {"format": "uvforge-checkpoint", "version": 1, "step": int(step),
                                         "seed": cfg.seed, "generator": G.arch(), "discriminator": D.arch(),
                                         "config": cfg.to_dict(), "tensors": tensors})


def load_checkpoint(directory):
    """Returns (G, D, cfg, step)."""
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"checkpoint manifest not found: {mpath}")
    man = io.read_json(mpath)
    for key in ("generator", "discriminator", "config", "tensors", "step"):
        if key not in man:
            raise io.FormatError(f"{mpath}: missing field '{key}'")
    cfg = GANConfig.from_dict(man["config"])
    ga, da = man["generator"], man["discriminator"]
    G = Generator(ga["latent_dim"], ga["resolution"], ga["base_channels"])
    D = Discriminator(da["width"], da["height"], slope=da["slope"])
    for net in (G, D):
        net.set_params({k: io.read_tensor(d / man["tensors"][k]) for k in net.params})
    return G, D, cfg, int(man["step"])
