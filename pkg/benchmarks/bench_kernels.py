"""Time the compiled kernels against the numpy fallback on the default face mesh.

    python3 benchmarks/bench_kernels.py [--size 64] [--repeat 5]

Prints one line per kernel with the best-of-N wall time of each backend, the
speedup and the largest absolute difference between their outputs.
"""
import argparse
import time

import numpy as np

from uvforge import _backend, morphable, render, synth


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def scene(size, seed):
    model = synth.make_model()
    ps = synth.random_params(np.random.default_rng(seed), model, 1.5)
    shape = morphable.sample_shape(model, ps.p_i, ps.p_e)
    screen, depth = render.project(shape, render.Camera.from_params(ps.p_c))
    return screen, depth, model.triangles


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sigma", type=float, default=1e-4)
    args = ap.parse_args(argv)
    if _backend.compiled_kernels is None:
        raise SystemExit("compiled kernels are not built; run pip install -e . --no-build-isolation")
    screen, depth, tri = scene(args.size, 0)
    w = h = args.size
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    cases = {
        "rasterize": lambda k: k.rasterize(screen, depth, tri, w, h)[:2],
        "soft_silhouette": lambda k: k.soft_silhouette(screen, tri, w, h, args.sigma)[0],
    }
    _, q, nz = cy.soft_silhouette(screen, tri, w, h, args.sigma)
    g = np.random.default_rng(1).standard_normal((h, w))
    cases["silhouette_backward"] = lambda k: k.soft_silhouette_backward(g, screen, tri, w, h, args.sigma, q, nz)

    print(f"mesh: {len(screen)} vertices, {len(tri)} triangles, image {w}x{h}")
    print(f"{'kernel':<22}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>10}{'max |diff|':>13}")
    for name, fn in cases.items():
        tp, op = best_of(lambda: fn(py), args.repeat)
        tc, oc = best_of(lambda: fn(cy), args.repeat)
        op = op if isinstance(op, tuple) else (op,)
        oc = oc if isinstance(oc, tuple) else (oc,)
        diff = max(float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))
                   for a, b in zip(op, oc))
        print(f"{name:<22}{1e3 * tp:>12.2f}{1e3 * tc:>13.2f}{tp / tc:>9.1f}x{diff:>13.2e}")


if __name__ == "__main__":
    main()
