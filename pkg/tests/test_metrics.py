import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvforge import metrics


def spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


def test_gaussian_stats_closed_forms(rng):
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    s = metrics.gaussian_stats(np.stack([a, b]))
    assert np.allclose(s.mean, (a + b) / 2)
    assert np.allclose(s.cov, np.outer(a - b, a - b) / 2)
    s = metrics.gaussian_stats(np.tile(a, (5, 1)))
    assert np.array_equal(s.cov, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        metrics.gaussian_stats(a[None])


def test_gaussian_stats_direct_sum(rng):
    f = rng.standard_normal((100, 5))
    s = metrics.gaussian_stats(f)
    mu = [sum(f[i, k] for i in range(100)) / 100 for k in range(5)]
    cov = np.array([[sum((f[i, p] - mu[p]) * (f[i, q] - mu[q]) for i in range(100)) / 99 for q in range(5)]
                    for p in range(5)])
    assert np.max(np.abs(s.mean - mu)) <= 1e-10
    assert np.max(np.abs(s.cov - cov)) <= 1e-10


def test_fid_unit_cases(rng):
    c = spd(rng, 4)
    g = metrics.GaussianStats(rng.standard_normal(4), c)
    assert abs(metrics.fid(g, g)) < 1e-8
    assert metrics.fid(metrics.GaussianStats([0.0], [[1.0]]), metrics.GaussianStats([1.0], [[1.0]])) == 1.0
    assert metrics.fid(metrics.GaussianStats([0, 0.0], np.eye(2)), metrics.GaussianStats([2, 0.0], np.eye(2))) == 4.0


def test_fid_commuting_closed_form(rng):
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    lr, lg = rng.uniform(0.1, 3, 5), rng.uniform(0.1, 3, 5)
    r = metrics.GaussianStats(rng.standard_normal(5), q @ np.diag(lr) @ q.T)
    g = metrics.GaussianStats(rng.standard_normal(5), q @ np.diag(lg) @ q.T)
    closed = np.sum((r.mean - g.mean) ** 2) + np.sum((np.sqrt(lr) - np.sqrt(lg)) ** 2)
    assert abs(metrics.fid(r, g) - closed) < 1e-8


def test_fid_scipy_oracle(rng):
    """Product-form square root from scipy as an independent route."""
    from scipy import linalg
    r = metrics.GaussianStats(rng.standard_normal(6), spd(rng, 6))
    g = metrics.GaussianStats(rng.standard_normal(6), spd(rng, 6))
    root = linalg.sqrtm(r.cov @ g.cov).real
    ref = np.sum((r.mean - g.mean) ** 2) + np.trace(r.cov + g.cov - 2 * root)
    assert metrics.fid(r, g) == pytest.approx(ref, rel=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fid_symmetry_and_self(seed):
    rng = np.random.default_rng(seed)
    r = metrics.GaussianStats(rng.standard_normal(4), spd(rng, 4))
    g = metrics.GaussianStats(rng.standard_normal(4), spd(rng, 4))
    assert abs(metrics.fid(r, g) - metrics.fid(g, r)) < 1e-8
    assert metrics.fid(r, r) < 1e-8


def test_stats_validation():
    with pytest.raises(ValueError):
        metrics.GaussianStats([0, 0], [[1, 0.5], [0, 1]])
    with pytest.raises(ValueError):
        metrics.fid(metrics.GaussianStats([0], [[1]]), metrics.GaussianStats([0, 0], np.eye(2)))


def test_l21_cases(rng):
    a = rng.uniform(0, 1, (10, 10, 3))
    mask = np.ones((10, 10))
    assert metrics.l21_error(a, a, mask) == 0.0
    t = np.zeros((10, 10, 3))
    r = np.zeros((10, 10, 3))
    r[3, 4] = [0.3, 0.0, 0.4]
    assert metrics.l21_error(t, r, mask) == 0.005
    b = rng.uniform(0, 1, a.shape)
    m = rng.uniform(0, 1, (10, 10)) > 0.5
    vals = [np.sqrt(sum((a[i, j, c] - b[i, j, c]) ** 2 for c in range(3))) for i in range(10) for j in range(10)
            if m[i, j]]
    assert abs(metrics.l21_error(a, b, m) - sum(vals) / len(vals)) <= 1e-10
    b2 = b.copy()
    b2[~m] = 7.0
    assert metrics.l21_error(a, b2, m) == metrics.l21_error(a, b, m)
    with pytest.raises(ValueError):
        metrics.l21_error(a, b, np.zeros((10, 10)))


def test_cosine_exact_cases(rng):
    f = rng.standard_normal(17)
    assert metrics.cosine_similarity(f, f) == 1.0
    assert metrics.cosine_similarity(f, -f) == -1.0
    assert metrics.cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0
    assert metrics.cosine_similarity(f, 3.5 * f) == pytest.approx(1.0, abs=1e-15)
    g = rng.standard_normal(17)
    assert metrics.cosine_similarity(f, 2 * g) == pytest.approx(metrics.cosine_similarity(f, g), abs=1e-15)
    with pytest.raises(ValueError):
        metrics.cosine_similarity(f, np.zeros(17))


def test_masked_features(rng):
    ext = metrics.DownsampleExtractor()
    img = rng.uniform(0, 1, (16, 16, 3))
    assert np.array_equal(metrics.masked_features(ext, img, np.ones((16, 16))), ext(img))
    z0 = metrics.masked_features(ext, img, np.zeros((16, 16)))
    assert np.array_equal(z0, metrics.masked_features(ext, rng.uniform(0, 1, img.shape), np.zeros((16, 16))))
    sil = rng.uniform(0, 1, (16, 16))
    blend = sil[..., None] * img + (1 - sil[..., None]) * 0.5
    assert np.array_equal(metrics.masked_features(ext, img, sil), ext(blend))


def test_extractors(rng):
    img = rng.uniform(0, 1, (16, 16, 3))
    d = metrics.DownsampleExtractor()(img)
    gray = img @ [0.299, 0.587, 0.114]
    assert np.allclose(d, gray.reshape(8, 2, 8, 2).mean(axis=(1, 3)).ravel())
    p = metrics.RandomProjectionExtractor(seed=3)
    assert p(img).shape == (128,)
    assert np.array_equal(p(img), metrics.RandomProjectionExtractor(seed=3)(img))
    with pytest.raises(ValueError):
        metrics.make_extractor("inception")


def test_report_schema(tmp_path):
    e = metrics.report("fid", 1.5, 10, "downsample", 0)
    assert set(e) == {"metric", "value", "n_samples", "extractor", "seed"}
    metrics.write_report(tmp_path / "m.json", [e])
    import json
    assert json.loads((tmp_path / "m.json").read_text()) == [e]
