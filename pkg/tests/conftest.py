import numpy as np
import pytest


def grid_mesh(k=5, extent=0.8, bump=0.1, seed=0):
    """A bumpy k×k grid facing the camera, counter-clockwise in screen space."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(-extent, extent, k)
    gx, gy = np.meshgrid(xs, xs)
    gz = bump * np.sin(2.0 * gx) * np.cos(1.5 * gy) + 0.01 * rng.standard_normal(gx.shape)
    verts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    tris = []
    for i in range(k - 1):
        for j in range(k - 1):
            a, b, c, d = i * k + j, i * k + j + 1, (i + 1) * k + j, (i + 1) * k + j + 1
            tris.append([a, b, d])
            tris.append([a, d, c])
    return verts, np.array(tris, dtype=np.int64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    from uvforge import synth
    return synth.make_model(synth.SynthConfig(n_subdiv=2, k_i=6, k_e=4, k_t=6))


# acceptance verdict lines, echoed in the terminal summary so they survive output capture
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
