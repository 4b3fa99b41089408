import numpy as np
import pytest

from uvforge import _backend, render
from conftest import grid_mesh

needs_ext = pytest.mark.skipif(_backend.compiled_kernels is None, reason="compiled kernels not built")


def scenes(rng, n):
    for _ in range(n):
        k = int(rng.integers(1, 15))
        yield rng.uniform(-1.2, 1.2, (3 * k, 2)), rng.uniform(-1, 1, 3 * k), np.arange(3 * k).reshape(-1, 3)


@needs_ext
def test_rasterize_parity(rng):
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    for s, d, t in scenes(rng, 30):
        a, b = py.rasterize(s, d, t, 17, 13), cy.rasterize(s, d, t, 17, 13)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])


@needs_ext
def test_silhouette_parity(rng):
    py, cy = _backend.python_kernels, _backend.compiled_kernels
    v, t = grid_mesh(k=4)
    s = v[:, :2] * 0.9
    for sigma in (1e-4, 1e-2):
        a, qa, na = py.soft_silhouette(s, t, 20, 20, sigma)
        b, qb, nb = cy.soft_silhouette(s, t, 20, 20, sigma)
        assert np.allclose(a, b, atol=1e-13, rtol=0)
        assert np.array_equal(na, nb)
        g = rng.standard_normal((20, 20))
        ga = py.soft_silhouette_backward(g, s, t, 20, 20, sigma, qa, na)
        gb = cy.soft_silhouette_backward(g, s, t, 20, 20, sigma, qb, nb)
        assert np.allclose(ga, gb, atol=1e-10, rtol=1e-10)


def test_backend_flag():
    assert _backend.BACKEND in ("cython", "python")
    assert _backend.kernels is (_backend.compiled_kernels if _backend.BACKEND == "cython" else _backend.python_kernels)


def test_python_fallback_selected_by_env(tmp_path):
    import subprocess
    import sys
    out = subprocess.run([sys.executable, "-c", "import uvforge; print(uvforge.BACKEND)"],
                         env={"UVFORGE_BACKEND": "python", "PATH": "/usr/bin:/bin"}, capture_output=True, text=True)
    assert out.stdout.strip() == "python"


def test_read_only_inputs():
    s = np.array([[-0.5, -0.5], [0.5, -0.5], [0.0, 0.5]])
    s.setflags(write=False)
    d = np.zeros(3)
    d.setflags(write=False)
    tri = np.array([[0, 1, 2]])
    tri.setflags(write=False)
    tri_id, _, _ = render.rasterize(s, d, tri, 4, 4)
    assert (tri_id == 0).any()
    assert render.soft_silhouette(s, tri, 4, 4, 1e-3).max() > 0.9
