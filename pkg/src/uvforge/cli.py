"""Command-line entry points: synth, fit, render, train, eval, interp, edit.

All inputs are JSON (configs, parameters), PNG (images, UV maps) or UVTF
(tensors). Outputs are written so that two runs with the same inputs and
seed produce identical bytes.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from uvforge import BACKEND, __version__, fit, gan, io, latent, metrics, morphable, render, synth, uvtex


class CLIError(Exception):
    """A user-facing failure; printed without a traceback."""


def _need(path, what="input") -> Path:
    p = Path(path)
    if not p.exists():
        raise CLIError(f"{what} not found: {p}")
    return p


def _outdir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_model(model_dir):
    _need(Path(model_dir) / "manifest.json", "model manifest")
    return morphable.load_model(model_dir)


def _load_params(path, model) -> morphable.ParamSet:
    obj = io.read_json(_need(path, "parameter file"))
    try:
        return morphable.ParamSet.from_json(obj, model)
    except morphable.DimensionError as exc:
        raise CLIError(f"{path}: {exc}") from None


def _plot(path, x, series: dict, xlabel: str) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise CLIError("--plot needs matplotlib (pip install uvforge[plot])") from None
    fig, ax = plt.subplots(figsize=(5, 3.2), dpi=100)
    for name, ys in series.items():
        xs = [a for a, b in zip(x, ys) if b is not None]
        ax.plot(xs, [b for b in ys if b is not None], label=name)
    ax.set_xlabel(xlabel)
    ax.legend()
    fig.tight_layout()
    # no timestamp in the metadata keeps the file reproducible
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


# ---------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    raw = io.read_json(_need(args.config, "config")) if args.config else {}
    try:
        cfg = synth.SynthConfig.from_dict(raw)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    if cfg.n_samples < 1:
        raise CLIError("n_samples must be >= 1")
    out = _outdir(args.out)
    model = synth.make_model(cfg)
    morphable.save_model(model, out / "model")
    samples = synth.make_dataset(model, cfg)
    synth.write_dataset(out / "dataset", samples, cfg)
    man = io.read_json(out / "dataset" / "manifest.json")
    man["versions"] = {"uvforge": __version__, "numpy": np.__version__}
    io.write_json(out / "dataset" / "manifest.json", man)
    print(f"wrote model to {out / 'model'} and {len(samples)} samples to {out / 'dataset'}")
    return 0


# ------------------------------------------------------------------ fit

def cmd_fit(args) -> int:
    image = io.read_png(_need(args.image, "image"))
    lm_path = _need(args.landmarks, "landmark file")
    model = _load_model(args.model_dir)
    try:
        landmarks = fit.Landmarks.load(lm_path)
    except (morphable.DimensionError, KeyError, ValueError) as exc:
        raise CLIError(f"{lm_path}: {exc}") from None
    init = _load_params(args.init, model) if args.init else morphable.ParamSet.zeros(model)
    if init.p_t is None:
        init.p_t = np.zeros(model.k_t)
    h, w = image.shape[:2]
    cfg = fit.FitConfig(lr=args.lr, steps=args.steps, lambda_pix=args.lambda_pix, lambda_lm=args.lambda_lm,
                        prior=args.prior, width=w, height=h)
    result = fit.fit_shape(image, landmarks, model, init, cfg)
    out = _outdir(args.out)
    io.write_json(out / "params.json", result.params.to_json())
    io.write_png(out / "render.png", result.output.image)
    rows = [(r["step"], r["e_pix"], r["e_lm"], r["total"]) for r in result.trace]
    io.write_csv(out / "trace.csv", ("step", "e_pix", "e_lm", "total"), rows)
    if args.plot:
        _plot(out / "trace.png", [r[0] for r in rows],
              {"e_pix": [r[1] for r in rows], "e_lm": [r[2] for r in rows], "total": [r[3] for r in rows]}, "step")
    print(f"initial loss {result.initial_loss:.6g}, best {result.loss:.6g}")
    return 0


# --------------------------------------------------------------- render

def cmd_render(args) -> int:
    model = _load_model(args.model_dir)
    params = _load_params(args.params, model)
    texture = None
    if args.uv:
        texture = uvtex.UVMap.load(_need(args.uv, "UV map"))
    elif params.p_t is None:
        raise CLIError(f"{args.params}: no p_t and no --uv given")
    out = render.form_image(model, texture, params, args.width, args.height)
    d = _outdir(args.out)
    io.write_png(d / "render.png", out.image)
    io.write_png(d / "silhouette.png", out.silhouette)
    return 0


# ---------------------------------------------------------------- train

def _dataset(path, model):
    _need(Path(path) / "manifest.json", "dataset manifest")
    try:
        return synth.read_dataset(path, model)
    except morphable.DimensionError as exc:
        raise CLIError(f"{path}: {exc}") from None


def cmd_train(args) -> int:
    model = _load_model(args.model_dir)
    raw = io.read_json(_need(args.config, "config")) if args.config else {}
    try:
        cfg = gan.GANConfig.from_dict(raw)
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    samples, man = _dataset(args.dataset, model)
    if (man["image_w"], man["image_h"]) != (cfg.image_w, cfg.image_h):
        raise CLIError(f"config image size {cfg.image_w}x{cfg.image_h} does not match dataset "
                       f"{man['image_w']}x{man['image_h']}")
    if len(samples) <= cfg.holdout:
        raise CLIError(f"dataset has {len(samples)} samples; holdout={cfg.holdout} leaves none for training")
    out = _outdir(args.out)
    trainer = gan.Trainer(model, samples, cfg)
    header = ("step", "d_loss", "g_loss", "r1", "d_real", "d_fake", "masked_fid")
    rows = [(0, None, None, None, None, None, trainer.masked_fid())]
    for _ in range(cfg.steps):
        rec = trainer.train_step()
        mfid = None
        if trainer.step % cfg.eval_every == 0 or trainer.step == cfg.steps:
            mfid = trainer.masked_fid()
            gan.save_checkpoint(out / "checkpoints" / f"step_{trainer.step:06d}", trainer.G, trainer.D, cfg,
                                trainer.step)
        rows.append((rec["step"], rec["d_loss"], rec["g_loss"], rec["r1"], rec["d_real"], rec["d_fake"], mfid))
    if cfg.steps == 0:
        gan.save_checkpoint(out / "checkpoints" / "step_000000", trainer.G, trainer.D, cfg, 0)
    final = out / "checkpoints" / f"step_{trainer.step:06d}"
    io.write_json(out / "latest.json", {"checkpoint": final.name, "step": trainer.step})
    io.write_csv(out / "metrics.csv", header, rows)
    if args.plot:
        _plot(out / "metrics.png", [r[0] for r in rows],
              {"d_loss": [r[1] for r in rows], "g_loss": [r[2] for r in rows]}, "step")
        evals = [r for r in rows if r[6] is not None]
        _plot(out / "masked_fid.png", [r[0] for r in evals], {"masked FID": [r[6] for r in evals]}, "step")
    print(f"trained {cfg.steps} steps; masked FID {rows[0][6]:.6g} -> {[r for r in rows if r[6] is not None][-1][6]:.6g}")
    return 0


def _load_ckpt(path):
    p = _need(path, "checkpoint")
    if (p / "latest.json").exists():
        p = p / "checkpoints" / io.read_json(p / "latest.json")["checkpoint"]
    _need(p / "manifest.json", "checkpoint manifest")
    return gan.load_checkpoint(p)


# ----------------------------------------------------------------- eval

def eval_images(model, samples, maps, width, height):
    """Unmasked and masked fake images for each sample and its UV map.

    The fake is shown over the sample's own background so the unmasked
    comparison differs from the real image only where the texture does.
    Both sets are masked with the dataset silhouette, which is the
    coverage of the same geometry.
    """
    cfg = render.RenderConfig(compute_silhouette=False)
    fakes, fakes_m, reals_m = [], [], []
    for s, uvmap in zip(samples, maps):
        out = render.form_image(model, uvmap, s.params, width, height, cfg)
        sil = s.silhouette[..., None]
        fakes.append(sil * out.image + (1.0 - sil) * s.image)
        fakes_m.append(metrics.mask_image(out.image, s.silhouette))
        reals_m.append(metrics.mask_image(s.image, s.silhouette))
    return fakes, fakes_m, reals_m


def cmd_eval(args) -> int:
    model = _load_model(args.model_dir)
    samples, man = _dataset(args.dataset, model)
    n = len(samples) if args.n is None else args.n
    if n < 2:
        raise CLIError("eval needs N >= 2 samples")
    if n > len(samples):
        raise CLIError(f"N={n} exceeds the dataset size {len(samples)}")
    samples = samples[len(samples) - n:]
    if args.uv_dir:
        d = _need(args.uv_dir, "UV directory")
        first = man["n_samples"] - n
        maps = [uvtex.UVMap.load(_need(d / f"{first + i:04d}.png", "UV map")) for i in range(n)]
        source = "uv_dir"
    else:
        if not args.checkpoint:
            raise CLIError("eval needs --checkpoint or --uv-dir")
        G, _, cfg, _ = _load_ckpt(args.checkpoint)
        z = np.random.default_rng([args.seed, 3]).standard_normal((n, G.latent_dim))
        maps = [gan.generate(G, zi) for zi in z]
        source = "checkpoint"
    ext = metrics.make_extractor(args.extractor, seed=args.seed)
    fakes, fakes_m, reals_m = eval_images(model, samples, maps, man["image_w"], man["image_h"])
    real_stats = metrics.gaussian_stats(metrics.feature_matrix(ext, [s.image for s in samples]))
    entries = [metrics.report("fid", metrics.fid(real_stats, metrics.gaussian_stats(
        metrics.feature_matrix(ext, fakes))), n, args.extractor, args.seed)]
    if args.masked:
        rs = metrics.gaussian_stats(metrics.feature_matrix(ext, reals_m))
        fs = metrics.gaussian_stats(metrics.feature_matrix(ext, fakes_m))
        entries.append(metrics.report("masked_fid", metrics.fid(rs, fs), n, args.extractor, args.seed))
    for e in entries:
        e["source"] = source
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_report(out, entries)
    for e in entries:
        print(f"{e['metric']}: {e['value']:.6g}")
    return 0


# --------------------------------------------------------------- interp

def _corner(path, model):
    obj = io.read_json(_need(path, "corner file"))
    if "params" not in obj:
        raise CLIError(f"{path}: missing field 'params'")
    try:
        ps = morphable.ParamSet.from_json(obj["params"], model)
    except morphable.DimensionError as exc:
        raise CLIError(f"{path}: {exc}") from None
    z = np.asarray(obj["latent"], dtype=np.float64) if "latent" in obj else None
    return ps, z


def _flat(ps: morphable.ParamSet) -> np.ndarray:
    return np.concatenate([ps.p_i, ps.p_e, ps.p_c, ps.p_l] + ([ps.p_t] if ps.p_t is not None else []))


def _unflat(x, model, with_t) -> morphable.ParamSet:
    k = np.cumsum([model.k_i, model.k_e, 6, 6])
    return morphable.ParamSet(x[:k[0]], x[k[0]:k[1]], x[k[1]:k[2]], x[k[2]:k[3]], x[k[3]:] if with_t else None)


def _tile(images) -> np.ndarray:
    """nv × nu grid of equally sized images -> one image."""
    return np.concatenate([np.concatenate(list(row), axis=1) for row in images], axis=0)


def cmd_interp(args) -> int:
    model = _load_model(args.model_dir)
    corners = [_corner(p, model) for p in args.corners]
    if len(corners) not in (2, 3, 4):
        raise CLIError("interp needs 2, 3 or 4 corners")
    use_latent = all(z is not None for _, z in corners)
    if use_latent:
        if not args.checkpoint:
            raise CLIError("latent corners need --checkpoint")
        G = _load_ckpt(args.checkpoint)[0]
        tex_corners = [z for _, z in corners]
    else:
        if any(ps.p_t is None for ps, _ in corners):
            raise CLIError("corners need either a latent (with --checkpoint) or p_t")
        G, tex_corners = None, None
    with_t = not use_latent
    try:
        pgrid = latent.grid([_flat(ps) for ps, _ in corners], args.nu, args.nv)
        zgrid = latent.grid(tex_corners, args.nu, args.nv) if use_latent else None
    except ValueError as exc:
        raise CLIError(str(exc)) from None
    imgs, uvs = [], []
    for r in range(pgrid.shape[0]):
        irow, urow = [], []
        for c in range(pgrid.shape[1]):
            ps = _unflat(pgrid[r, c], model, with_t)
            if use_latent:
                uvmap = gan.generate(G, zgrid[r, c])
            else:
                uvmap = uvtex.unwrap(morphable.sample_texture(model, ps.p_t), model.uv_coords, args.uv_size,
                                     args.uv_size)
            irow.append(render.form_image(model, uvmap, ps, args.width, args.height).image)
            urow.append(uvmap.pixels)
        imgs.append(irow)
        uvs.append(urow)
    out = _outdir(args.out)
    io.write_png(out / "grid.png", _tile(imgs))
    io.write_png(out / "uv_grid.png", _tile(uvs))
    return 0


# ----------------------------------------------------------------- edit

def _hyperplane(args):
    if args.hyperplane:
        try:
            return latent.Hyperplane.load(_need(args.hyperplane, "hyperplane"))
        except ValueError as exc:
            raise CLIError(f"{args.hyperplane}: {exc}") from None
    if not args.labels:
        raise CLIError("edit needs --hyperplane or --labels")
    obj = io.read_json(_need(args.labels, "labels"))
    if "labels" not in obj:
        raise CLIError(f"{args.labels}: missing field 'labels'")
    if "latents" in obj:
        z = obj["latents"]
    elif args.latents:
        z = io.read_json(_need(args.latents, "latents"))
    else:
        raise CLIError(f"{args.labels}: no 'latents' field and no --latents given")
    try:
        data = latent.LabeledLatents.from_binary(z, obj["labels"])
        return latent.fit_svm(data, lam=args.svm_lambda, steps=args.svm_steps)
    except ValueError as exc:
        raise CLIError(f"{args.labels}: {exc}") from None


def cmd_edit(args) -> int:
    h = _hyperplane(args)
    obj = io.read_json(_need(args.latent, "latent"))
    z = np.asarray(obj["latent"] if isinstance(obj, dict) else obj, dtype=np.float64)
    alphas = [float(a) for a in args.alpha.split(",")]
    out = _outdir(args.out)
    h.save(out / "hyperplane.json")
    render_it = args.checkpoint is not None
    if render_it:
        G = _load_ckpt(args.checkpoint)[0]
        model = _load_model(args.model_dir)
        params = _load_params(args.params, model)
    rows = []
    for k, a in enumerate(alphas):
        try:
            ze = latent.edit(z, h, a)
        except ValueError as exc:
            raise CLIError(str(exc)) from None
        rows.append((k, a, float(h.score(ze))))
        if render_it:
            img = render.form_image(model, gan.generate(G, ze), params, args.width, args.height).image
            io.write_png(out / f"edit_{k:03d}.png", img)
    io.write_csv(out / "scores.csv", ("index", "alpha", "score"), rows)
    if args.plot:
        _plot(out / "scores.png", alphas, {"score": [r[2] for r in rows]}, "alpha")
    return 0


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uvforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"uvforge {__version__} ({BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic model and dataset")
    s.add_argument("config", nargs="?", help="SynthConfig JSON (defaults when omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("fit", help="fit shape, camera, light and linear texture to an image")
    s.add_argument("image")
    s.add_argument("landmarks")
    s.add_argument("model_dir")
    s.add_argument("--init")
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--lambda-pix", type=float, default=1.0)
    s.add_argument("--lambda-lm", type=float, default=1.0)
    s.add_argument("--prior", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("render", help="render parameters with a UV map or the linear texture")
    s.add_argument("params")
    s.add_argument("model_dir")
    s.add_argument("--uv")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("train", help="adversarial UV-map generator training")
    s.add_argument("dataset")
    s.add_argument("model_dir")
    s.add_argument("config", nargs="?")
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="FID and masked FID of a generator or of given UV maps")
    s.add_argument("dataset")
    s.add_argument("model_dir")
    s.add_argument("--checkpoint")
    s.add_argument("--uv-dir", help="use these UV maps (NNNN.png) instead of a generator")
    s.add_argument("--masked", action="store_true")
    s.add_argument("--extractor", default="downsample", choices=("downsample", "projection"))
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("interp", help="interpolation grid between 2-4 corners")
    s.add_argument("corners", nargs="+", help="JSON files with 'params' and optionally 'latent'")
    s.add_argument("--model-dir", required=True)
    s.add_argument("--checkpoint")
    s.add_argument("--nu", type=int, default=5)
    s.add_argument("--nv", type=int, default=1)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--uv-size", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_interp)

    s = sub.add_parser("edit", help="move a latent along an attribute hyperplane normal")
    s.add_argument("latent", help="JSON list or {'latent': [...]}")
    s.add_argument("--hyperplane")
    s.add_argument("--labels", help="JSON with 'labels' (0/1) and optionally 'latents'")
    s.add_argument("--latents")
    s.add_argument("--alpha", default="-2,-1,0,1,2")
    s.add_argument("--svm-lambda", type=float, default=1e-2)
    s.add_argument("--svm-steps", type=int, default=10000)
    s.add_argument("--checkpoint")
    s.add_argument("--model-dir")
    s.add_argument("--params")
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--out", required=True)
    s.add_argument("--plot", action="store_true")
    s.set_defaults(func=cmd_edit)
    return p


def _run(args) -> int:
    threads = os.environ.get("UVFORGE_THREADS")
    if not threads:
        return args.func(args)
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=int(threads)):
        return args.func(args)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "edit" and args.checkpoint and not (args.model_dir and args.params):
        print("error: rendering edits needs --model-dir and --params", file=sys.stderr)
        return 2
    try:
        return _run(args)
    except (CLIError, FileNotFoundError, io.FormatError, morphable.DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
