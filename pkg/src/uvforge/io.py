"""File formats: UVTF tensor files, PNG images, OBJ meshes and JSON helpers."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

MAGIC = b"UVTF"
VERSION = 1


class FormatError(ValueError):
    """Raised when a file on disk does not match its declared schema."""


def write_tensor(path, array) -> None:
    """Write ``array`` as a UVTF file (little-endian float32, row-major)."""
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = MAGIC + struct.pack("<HH", VERSION, arr.ndim)
    header += struct.pack("<%dI" % arr.ndim, *arr.shape)
    Path(path).write_bytes(header + arr.tobytes(order="C"))


def read_tensor(path) -> np.ndarray:
    """Read a UVTF file into a float64 array."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    version, rank = struct.unpack_from("<HH", raw, 4)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    dims = struct.unpack_from("<%dI" % rank, raw, 8)
    offset = 8 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - offset != 4 * count:
        raise FormatError(
            f"{path}: payload has {len(raw) - offset} bytes, expected {4 * count}"
        )
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float64)


def to_uint8(img) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, img) -> None:
    """Write an H×W or H×W×3 float image in [0,1] as 8-bit PNG."""
    data = to_uint8(img)
    mode = "L" if data.ndim == 2 else "RGB"
    # fixed encoder settings so files are byte-reproducible
    Image.fromarray(data, mode=mode).save(path, format="PNG", optimize=False, compress_level=6)


def read_png(path, gray: bool = False) -> np.ndarray:
    """Read an 8-bit PNG as floats v/255 (H×W×3, or H×W when ``gray``)."""
    with Image.open(path) as im:
        im = im.convert("L" if gray else "RGB")
        data = np.asarray(im, dtype=np.float64)
    return data / 255.0


def write_obj(path, vertices, uv, triangles) -> None:
    """Write a mesh with one ``vt`` per vertex and ``f v/vt`` faces."""
    lines = ["# uvforge mesh"]
    lines += ["v %.17g %.17g %.17g" % tuple(v) for v in np.asarray(vertices)]
    lines += ["vt %.17g %.17g" % tuple(t) for t in np.asarray(uv)]
    for a, b, c in np.asarray(triangles, dtype=np.int64) + 1:
        lines.append(f"f {a}/{a} {b}/{b} {c}/{c}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path):
    """Parse vertices, per-vertex uv and triangles from an OBJ file.

    Faces may reference texture coordinates by their own index; uv values
    are re-ordered so that row i belongs to vertex i.
    """
    verts, texcoords, faces = [], [], []
    for line in Path(path).read_text().splitlines():
        tokens = line.split()
        if not tokens or tokens[0].startswith("#"):
            continue
        if tokens[0] == "v":
            verts.append([float(x) for x in tokens[1:4]])
        elif tokens[0] == "vt":
            texcoords.append([float(x) for x in tokens[1:3]])
        elif tokens[0] == "f":
            face = []
            for tok in tokens[1:]:
                parts = tok.split("/")
                vi = int(parts[0]) - 1
                ti = int(parts[1]) - 1 if len(parts) > 1 and parts[1] else vi
                face.append((vi, ti))
            if len(face) != 3:
                raise FormatError(f"{path}: only triangle faces are supported")
            faces.append(face)
    vertices = np.array(verts, dtype=np.float64).reshape(-1, 3)
    triangles = np.array([[f[0] for f in face] for face in faces], dtype=np.int64).reshape(-1, 3)
    uv = np.zeros((len(vertices), 2))
    if texcoords:
        tc = np.array(texcoords, dtype=np.float64)
        for face in faces:
            for vi, ti in face:
                uv[vi] = tc[ti]
    return vertices, uv, triangles


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)
