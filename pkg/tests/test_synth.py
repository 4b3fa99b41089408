import numpy as np
import pytest

from uvforge import metrics, morphable, render, synth


@pytest.fixture(scope="module")
def model():
    return synth.make_model()


def test_model_deterministic_and_valid(model):
    m2 = synth.make_model()
    for k in ("mean_shape_id", "mean_texture", "id_basis", "expr_basis", "tex_basis", "uv_coords"):
        assert np.array_equal(getattr(model, k), getattr(m2, k))
    v = model.mean_shape
    t = model.triangles
    area = 0.5 * np.linalg.norm(np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1)
    assert area.min() > 1e-10
    for b in (model.id_basis, model.expr_basis, model.tex_basis):
        assert np.allclose(np.linalg.norm(b, axis=0), 1.0, atol=1e-6)  # float32 storage
    assert len(np.unique(model.landmark_indices)) == 68
    assert np.all((model.uv_coords >= 0) & (model.uv_coords <= 1))


def test_basis_unit_norm_before_storage():
    rng = np.random.default_rng(0)
    v, _ = synth.front_hemisphere(2)
    b = synth._basis(rng, v, 5)
    assert np.allclose(np.linalg.norm(b, axis=0), 1.0, atol=1e-8)


def test_config_validation():
    with pytest.raises(ValueError, match="nope"):
        synth.SynthConfig.from_dict({"nope": 1})
    with pytest.raises(ValueError):
        synth.SynthConfig(coefficient_scale=0.0)
    with pytest.raises(ValueError):
        synth.SynthConfig(attribute_rule="unknown")


def test_dataset_deterministic(model):
    cfg = synth.SynthConfig(n_samples=3)
    a, b = synth.make_dataset(model, cfg), synth.make_dataset(model, cfg)
    for s, t in zip(a, b):
        assert np.array_equal(s.image, t.image) and np.array_equal(s.silhouette, t.silhouette)


def test_self_consistency_and_silhouette(model):
    cfg = synth.SynthConfig(n_samples=4)
    for s in synth.make_dataset(model, cfg):
        out = render.form_image(model, s.uv, s.params, 64, 64, render.RenderConfig(compute_silhouette=False))
        assert np.array_equal(s.silhouette, out.coverage)
        assert metrics.l21_error(s.image, out.image, s.silhouette) < 1e-6


def test_zero_sigma_renders_mean_face(model):
    cfg = synth.SynthConfig(n_samples=2, coefficient_scale=1e-300)
    for s in synth.make_dataset(model, cfg):
        assert np.all(np.abs(s.params.p_i) < 1e-290)


def test_pose_and_light_bounds(model):
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = synth.random_params(rng, model, 1.0)
        assert np.linalg.norm(p.p_c[:3]) <= 0.5 + 1e-12
        assert np.all((p.p_l[3:] >= 0.2) & (p.p_l[3:] <= 1.0))


def test_label_balance_monte_carlo(model):
    cfg = synth.SynthConfig(n_samples=500)
    labels = [synth.ATTRIBUTE_RULES[cfg.attribute_rule](synth.random_params(np.random.default_rng([0, i]), model, 1.5))
              for i in range(500)]
    assert 0.35 <= np.mean(labels) <= 0.65


def test_write_read_roundtrip(model, tmp_path):
    cfg = synth.SynthConfig(n_samples=3)
    samples = synth.make_dataset(model, cfg)
    synth.write_dataset(tmp_path, samples, cfg)
    for sub in ("images/0000.png", "silhouettes/0002.png", "params/0001.json", "labels.json", "manifest.json"):
        assert (tmp_path / sub).exists()
    back, man = synth.read_dataset(tmp_path, model)
    assert man["n_samples"] == 3
    for s, t in zip(samples, back):
        assert np.array_equal(s.silhouette, t.silhouette)
        assert np.max(np.abs(s.image - t.image)) <= 0.5 / 255 + 1e-12
        assert np.array_equal(s.params.p_i, t.params.p_i)
        assert s.label == t.label
    with pytest.raises(FileNotFoundError):
        synth.read_dataset(tmp_path / "nothing")


def test_landmarks_visible_mostly(model):
    s = synth.make_sample(model, synth.SynthConfig(), 0)
    assert s.visibility.sum() >= 34
    shape = morphable.sample_shape(model, s.params.p_i, s.params.p_e)
    proj, _ = render.project(shape[model.landmark_indices], render.Camera.from_params(s.params.p_c))
    assert np.array_equal(proj, s.landmarks)
