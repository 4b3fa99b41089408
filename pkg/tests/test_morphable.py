import numpy as np
import pytest

from uvforge import grad, morphable


def dense_oracle(model, p_i, p_e):
    """Explicit row-by-row sums, no matrix products."""
    n3 = model.mean_shape_id.size
    out = np.empty(n3)
    for r in range(n3):
        s = model.mean_shape_id[r] + model.mean_shape_expr[r]
        for k in range(model.k_i):
            s += model.id_basis[r, k] * p_i[k]
        for k in range(model.k_e):
            s += model.expr_basis[r, k] * p_e[k]
        out[r] = s
    return out.reshape(-1, 3)


def test_shape_at_origin(small_model):
    m = small_model
    s = morphable.sample_shape(m, np.zeros(m.k_i), np.zeros(m.k_e))
    assert np.array_equal(s, (m.mean_shape_id + m.mean_shape_expr).reshape(-1, 3))


def test_shape_basis_column(small_model):
    m = small_model
    p = np.zeros(m.k_i)
    p[2] = 0.7
    s = morphable.sample_shape(m, p, np.zeros(m.k_e))
    assert np.allclose(s.reshape(-1), m.mean_shape.reshape(-1) + 0.7 * m.id_basis[:, 2], atol=1e-15)


def test_shape_dense_oracle(small_model, rng):
    m = small_model
    p_i, p_e = rng.standard_normal(m.k_i), rng.standard_normal(m.k_e)
    assert np.allclose(morphable.sample_shape(m, p_i, p_e), dense_oracle(m, p_i, p_e), atol=1e-12, rtol=0)


def test_texture(small_model, rng):
    m = small_model
    assert np.array_equal(morphable.sample_texture(m, np.zeros(m.k_t)).reshape(-1), m.mean_texture)
    e = np.zeros(m.k_t)
    e[0] = 1.0
    assert np.allclose(morphable.sample_texture(m, e).reshape(-1), m.mean_texture + m.tex_basis[:, 0])
    p = rng.standard_normal(m.k_t)
    oracle = np.array([m.mean_texture[r] + sum(m.tex_basis[r, k] * p[k] for k in range(m.k_t))
                       for r in range(m.mean_texture.size)])
    assert np.allclose(morphable.sample_texture(m, p).reshape(-1), oracle, atol=1e-12, rtol=0)


def test_affine_linearity(small_model, rng):
    m = small_model
    z = np.zeros(m.k_e)
    base = morphable.sample_shape(m, np.zeros(m.k_i), z)
    p, q = rng.standard_normal(m.k_i), rng.standard_normal(m.k_i)
    a, b = 0.3, -1.7
    lhs = morphable.sample_shape(m, a * p + b * q, z) - base
    rhs = a * (morphable.sample_shape(m, p, z) - base) + b * (morphable.sample_shape(m, q, z) - base)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_pullbacks_are_basis_transposes(small_model, rng):
    m = small_model
    ct = rng.standard_normal((m.n_vertices, 3))
    _, back = morphable.sample_shape_vjp(m, np.zeros(m.k_i), np.zeros(m.k_e))
    gi, ge = back(ct)
    assert np.allclose(gi, m.id_basis.T @ ct.reshape(-1), atol=1e-10)
    assert np.allclose(ge, m.expr_basis.T @ ct.reshape(-1), atol=1e-10)
    _, tback = morphable.sample_texture_vjp(m, np.zeros(m.k_t))
    assert np.allclose(tback(ct), m.tex_basis.T @ ct.reshape(-1), atol=1e-10)


def test_dimension_errors(small_model):
    m = small_model
    with pytest.raises(morphable.DimensionError):
        morphable.sample_shape(m, np.zeros(m.k_i + 1), np.zeros(m.k_e))
    with pytest.raises(morphable.DimensionError):
        morphable.sample_texture(m, np.zeros(2))
    with pytest.raises(morphable.DimensionError):
        morphable.ParamSet(np.zeros(1), np.zeros(1), np.zeros(5), np.zeros(6))


def test_landmarks_gather_and_order(small_model, rng):
    m = small_model
    shape = np.arange(m.n_vertices * 3, dtype=float).reshape(-1, 3)
    lm = morphable.landmark_vertices(m, shape)
    assert np.array_equal(lm, shape[m.landmark_indices])
    m2 = morphable.MorphableModel(**{**m.__dict__, "landmark_indices": np.arange(68)[::-1].copy()})
    assert np.array_equal(morphable.landmark_vertices(m2, shape), shape[:68][::-1])


def test_landmark_gradient_wrt_p_i(small_model, rng):
    m = small_model
    w = rng.standard_normal((68, 3))
    p_e = rng.standard_normal(m.k_e)

    def f(p_i):
        s, sb = morphable.sample_shape_vjp(m, p_i, p_e)
        lm, lb = morphable.landmark_vertices_vjp(m, s)
        return float(np.sum(w * lm ** 2)), lambda ct: sb(lb(2 * ct * w * lm))[0]

    assert grad.gradcheck(f, rng.standard_normal(m.k_i), eps=1e-6).max_rel_error < 1e-6


def test_save_load_roundtrip(small_model, tmp_path):
    morphable.save_model(small_model, tmp_path / "m")
    m2 = morphable.load_model(tmp_path / "m")
    for name in ("mean_shape_id", "mean_texture", "id_basis", "expr_basis", "tex_basis", "uv_coords"):
        assert np.array_equal(getattr(m2, name), getattr(small_model, name)), name
    assert np.array_equal(m2.triangles, small_model.triangles)
    assert np.array_equal(m2.landmark_indices, small_model.landmark_indices)


def test_paramset_json(small_model, rng):
    ps = morphable.ParamSet.zeros(small_model)
    ps.p_i = rng.standard_normal(small_model.k_i)
    back = morphable.ParamSet.from_json(ps.to_json(), small_model)
    assert np.array_equal(back.p_i, ps.p_i)
    with pytest.raises(morphable.DimensionError, match="p_x"):
        morphable.ParamSet.from_json({**ps.to_json(), "p_x": [1]})
    bad = ps.to_json()
    bad["p_e"] = [0.0]
    with pytest.raises(morphable.DimensionError, match="p_e"):
        morphable.ParamSet.from_json(bad, small_model)
