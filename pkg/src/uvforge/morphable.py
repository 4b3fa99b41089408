"""Linear morphable face model with an identity/expression split."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from uvforge import io

N_LANDMARKS = 68
CAMERA_DIM = 6
LIGHT_DIM = 6


class DimensionError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean_shape_id: np.ndarray
    mean_shape_expr: np.ndarray
    mean_texture: np.ndarray
    id_basis: np.ndarray
    expr_basis: np.ndarray
    tex_basis: np.ndarray
    triangles: np.ndarray
    uv_coords: np.ndarray
    landmark_indices: np.ndarray

    def __post_init__(self):
        for name in _TENSORS + ("uv_coords",):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.float64))
        for name in ("triangles", "landmark_indices"):
            object.__setattr__(self, name, np.array(getattr(self, name), dtype=np.int64))
        n3 = self.mean_shape_id.shape[0]
        if n3 % 3:
            raise DimensionError("mean shape length must be a multiple of 3")
        n = n3 // 3
        for name in ("mean_shape_expr", "mean_texture"):
            if getattr(self, name).shape != (n3,):
                raise DimensionError(f"{name} must have length {n3}")
        for name in ("id_basis", "expr_basis", "tex_basis"):
            b = getattr(self, name)
            if b.ndim != 2 or b.shape[0] != n3 or b.shape[1] < 1:
                raise DimensionError(f"{name} must be {n3}xk with k >= 1, got {b.shape}")
        tri = self.triangles
        if tri.ndim != 2 or tri.shape[1] != 3:
            raise DimensionError("triangles must be m x 3")
        if tri.size and (tri.min() < 0 or tri.max() >= n):
            raise DimensionError("triangle index out of range")
        if self.uv_coords.shape != (n, 2):
            raise DimensionError(f"uv_coords must be {n} x 2")
        if np.any(self.uv_coords < 0) or np.any(self.uv_coords > 1):
            raise DimensionError("uv coordinates must lie in [0,1]^2")
        lm = self.landmark_indices
        if lm.shape != (N_LANDMARKS,):
            raise DimensionError(f"expected {N_LANDMARKS} landmark indices")
        if lm.min() < 0 or lm.max() >= n:
            raise DimensionError("landmark index out of range")
        if np.any(self.mean_texture < 0) or np.any(self.mean_texture > 1):
            raise DimensionError("mean texture must lie in [0,1]")
        for name in _TENSORS + ("uv_coords", "triangles", "landmark_indices"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return self.mean_shape_id.shape[0] // 3

    @property
    def k_i(self) -> int:
        return self.id_basis.shape[1]

    @property
    def k_e(self) -> int:
        return self.expr_basis.shape[1]

    @property
    def k_t(self) -> int:
        return self.tex_basis.shape[1]

    @property
    def mean_shape(self) -> np.ndarray:
        return (self.mean_shape_id + self.mean_shape_expr).reshape(-1, 3)


@dataclass
class ParamSet:
    """Per-image coefficients.

    ``p_c`` = (axis-angle rotation[3], translation[2], log scale);
    ``p_l`` = (light direction[3], ambient, diffuse, specular gains).
    """

    p_i: np.ndarray
    p_e: np.ndarray
    p_c: np.ndarray
    p_l: np.ndarray
    p_t: np.ndarray | None = None

    def __post_init__(self):
        self.p_i = np.asarray(self.p_i, dtype=np.float64).reshape(-1)
        self.p_e = np.asarray(self.p_e, dtype=np.float64).reshape(-1)
        self.p_c = np.asarray(self.p_c, dtype=np.float64).reshape(-1)
        self.p_l = np.asarray(self.p_l, dtype=np.float64).reshape(-1)
        if self.p_t is not None:
            self.p_t = np.asarray(self.p_t, dtype=np.float64).reshape(-1)
        if self.p_c.shape != (CAMERA_DIM,):
            raise DimensionError(f"p_c must have length {CAMERA_DIM}")
        if self.p_l.shape != (LIGHT_DIM,):
            raise DimensionError(f"p_l must have length {LIGHT_DIM}")

    @classmethod
    def zeros(cls, model: MorphableModel, with_texture: bool = True) -> "ParamSet":
        return cls(
            p_i=np.zeros(model.k_i),
            p_e=np.zeros(model.k_e),
            p_c=np.zeros(CAMERA_DIM),
            p_l=np.array([0.0, 0.0, -1.0, 1.0, 0.0, 0.0]),
            p_t=np.zeros(model.k_t) if with_texture else None,
        )

    def validate(self, model: MorphableModel) -> "ParamSet":
        if self.p_i.shape != (model.k_i,):
            raise DimensionError(f"p_i has length {self.p_i.size}, model expects {model.k_i}")
        if self.p_e.shape != (model.k_e,):
            raise DimensionError(f"p_e has length {self.p_e.size}, model expects {model.k_e}")
        if self.p_t is not None and self.p_t.shape != (model.k_t,):
            raise DimensionError(f"p_t has length {self.p_t.size}, model expects {model.k_t}")
        return self

    def copy(self) -> "ParamSet":
        return ParamSet(self.p_i.copy(), self.p_e.copy(), self.p_c.copy(), self.p_l.copy(),
                        None if self.p_t is None else self.p_t.copy())

    def to_json(self) -> dict:
        out = {k: getattr(self, k).tolist() for k in ("p_i", "p_e", "p_c", "p_l")}
        if self.p_t is not None:
            out["p_t"] = self.p_t.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict, model: MorphableModel | None = None) -> "ParamSet":
        unknown = set(obj) - {"p_i", "p_e", "p_c", "p_l", "p_t"}
        if unknown:
            raise DimensionError(f"unknown parameter field '{sorted(unknown)[0]}'")
        for key in ("p_i", "p_e", "p_c", "p_l"):
            if key not in obj:
                raise DimensionError(f"missing parameter field '{key}'")
        ps = cls(obj["p_i"], obj["p_e"], obj["p_c"], obj["p_l"], obj.get("p_t"))
        return ps.validate(model) if model is not None else ps


def _check_len(vec, k, name):
    vec = np.asarray(vec, dtype=np.float64).reshape(-1)
    if vec.shape != (k,):
        raise DimensionError(f"{name} has length {vec.size}, expected {k}")
    return vec


def sample_shape(model: MorphableModel, p_i, p_e) -> np.ndarray:
    p_i = _check_len(p_i, model.k_i, "p_i")
    p_e = _check_len(p_e, model.k_e, "p_e")
    flat = model.mean_shape_id + model.mean_shape_expr + model.id_basis @ p_i + model.expr_basis @ p_e
    return flat.reshape(-1, 3)


def sample_shape_vjp(model: MorphableModel, p_i, p_e):
    shape = sample_shape(model, p_i, p_e)

    def pullback(ct):
        ct = np.asarray(ct, dtype=np.float64).reshape(-1)
        return model.id_basis.T @ ct, model.expr_basis.T @ ct

    return shape, pullback


def sample_texture(model: MorphableModel, p_t) -> np.ndarray:
    # no clamping here; colors are clamped by the renderer
    p_t = _check_len(p_t, model.k_t, "p_t")
    return (model.mean_texture + model.tex_basis @ p_t).reshape(-1, 3)


def sample_texture_vjp(model: MorphableModel, p_t):
    tex = sample_texture(model, p_t)
    return tex, lambda ct: model.tex_basis.T @ np.asarray(ct, dtype=np.float64).reshape(-1)


def landmark_vertices(model: MorphableModel, shape) -> np.ndarray:
    shape = np.asarray(shape)
    if shape.shape[0] != model.n_vertices:
        raise DimensionError(f"shape has {shape.shape[0]} rows, model has {model.n_vertices}")
    return shape[model.landmark_indices]


def landmark_vertices_vjp(model: MorphableModel, shape):
    lm = landmark_vertices(model, shape)
    n, d = np.shape(shape)

    def pullback(ct):
        out = np.zeros((n, d))
        np.add.at(out, model.landmark_indices, ct)
        return out

    return lm, pullback


# ---------------------------------------------------------------- container

_TENSORS = ("mean_shape_id", "mean_shape_expr", "mean_texture", "id_basis", "expr_basis", "tex_basis")


def save_model(model: MorphableModel, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    io.write_obj(d / "mean.obj", model.mean_shape, model.uv_coords, model.triangles)
    for name in _TENSORS:
        arr = getattr(model, name)
        io.write_tensor(d / f"{name}.uvtf", arr)
    io.write_json(d / "manifest.json", {
        "format": "uvforge-model",
        "version": 1,
        "n": model.n_vertices,
        "k_i": model.k_i,
        "k_e": model.k_e,
        "k_t": model.k_t,
        "landmark_indices": model.landmark_indices.tolist(),
        "tensors": {name: f"{name}.uvtf" for name in _TENSORS},
        "mesh": "mean.obj",
    })


def load_model(directory) -> MorphableModel:
    d = Path(directory)
    manifest_path = d / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"model manifest not found: {manifest_path}")
    man = io.read_json(manifest_path)
    for key in ("n", "k_i", "k_e", "k_t", "landmark_indices"):
        if key not in man:
            raise io.FormatError(f"{manifest_path}: missing field '{key}'")
    _, uv, tri = io.read_obj(d / man.get("mesh", "mean.obj"))
    arrays = {}
    for name in _TENSORS:
        arr = io.read_tensor(d / man.get("tensors", {}).get(name, f"{name}.uvtf"))
        arrays[name] = arr
    n = man["n"]
    expect = {"mean_shape_id": (3 * n,), "mean_shape_expr": (3 * n,), "mean_texture": (3 * n,),
              "id_basis": (3 * n, man["k_i"]), "expr_basis": (3 * n, man["k_e"]),
              "tex_basis": (3 * n, man["k_t"])}
    for name, shp in expect.items():
        if arrays[name].shape != shp:
            raise io.FormatError(f"{name}: shape {arrays[name].shape} does not match manifest {shp}")
    return MorphableModel(
        triangles=tri,
        uv_coords=uv,
        landmark_indices=np.asarray(man["landmark_indices"], dtype=np.int64),
        **arrays,
    )
