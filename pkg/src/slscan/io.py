"""Image, raw-map and point-cloud file formats.

PGM (P2/P5, 8 or 16 bit) is handled here directly; PNG goes through Pillow.
Raw maps are little-endian float32 with a JSON manifest. PLY clouds are
written ascii or binary little-endian with a deterministic header.
"""
from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from .triangulate import PointCloud


class FormatError(ValueError):
    """Malformed file or a file that disagrees with its manifest."""


# -- PGM ---------------------------------------------------------------------

def write_pgm(path, img, *, ascii: bool = False, maxval: int | None = None):
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images are 2D")
    if not np.issubdtype(img.dtype, np.integer):
        raise ValueError("PGM expects integer pixel values; quantize first")
    if maxval is None:
        maxval = 255 if img.dtype == np.uint8 else 65535
    if not 0 < maxval < 65536:
        raise ValueError("maxval must be in 1..65535")
    if img.size and (img.min() < 0 or img.max() > maxval):
        raise ValueError(f"pixel values outside 0..{maxval}")
    h, w = img.shape
    header = f"{'P2' if ascii else 'P5'}\n{w} {h}\n{maxval}\n".encode()
    with open(path, "wb") as fh:
        fh.write(header)
        if ascii:
            for row in img:
                fh.write((" ".join(str(int(x)) for x in row) + "\n").encode())
        else:
            dt = ">u2" if maxval > 255 else "u1"  # 16-bit PGM is big-endian
            fh.write(img.astype(dt).tobytes())


_TOKEN = re.compile(rb"(?:\s+|#[^\n]*\n?)*([^\s#]+)")


def _header_tokens(data: bytes, count: int):
    out, pos = [], 0
    for _ in range(count):
        m = _TOKEN.match(data, pos)
        if not m:
            raise FormatError("truncated PGM header")
        out.append(m.group(1))
        pos = m.end()
    return out, pos


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    (magic, w, h, maxval), pos = _header_tokens(data, 4)
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a PGM file (magic {magic!r})")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise FormatError(f"{path}: invalid PGM dimensions or maxval")
    dtype = np.uint8 if maxval < 256 else np.uint16
    if magic == b"P5":
        body = data[pos + 1:]
        itemsize = 1 if maxval < 256 else 2
        need = w * h * itemsize
        if len(body) < need:
            raise FormatError(f"{path}: expected {need} bytes of pixel data, found {len(body)}")
        arr = np.frombuffer(body[:need], dtype="u1" if itemsize == 1 else ">u2")
    else:
        vals = data[pos:].split()
        if len(vals) < w * h:
            raise FormatError(f"{path}: expected {w * h} samples, found {len(vals)}")
        arr = np.array([int(v) for v in vals[:w * h]])
    if arr.size and arr.max() > maxval:
        raise FormatError(f"{path}: sample exceeds maxval {maxval}")
    return arr.astype(dtype).reshape(h, w)


# -- PNG ---------------------------------------------------------------------

def write_png(path, img):
    from PIL import Image

    img = np.asarray(img)
    if img.dtype == np.uint8:
        Image.fromarray(img).save(path)
    elif img.dtype == np.uint16:
        Image.fromarray(img.astype("<u2")).save(path)  # mode I;16
    else:
        raise ValueError("PNG writer takes uint8 or uint16 images")


def read_png(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "L":
            return np.array(im, dtype=np.uint8)
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            return np.array(im).astype(np.uint16)
        raise FormatError(f"{path}: unsupported PNG mode {im.mode}")


def write_image(path, img):
    if str(path).lower().endswith(".png"):
        write_png(path, img)
    else:
        write_pgm(path, img)


def read_image(path) -> np.ndarray:
    if str(path).lower().endswith(".png"):
        return read_png(path)
    return read_pgm(path)


# -- raw float32 maps with a manifest ------------------------------------------

def write_raw(path, arr, manifest_path=None, **extra):
    """Write ``arr`` as little-endian float32 plus a JSON manifest."""
    arr = np.asarray(arr, dtype="<f4")
    Path(path).write_bytes(arr.tobytes())
    manifest_path = manifest_path or str(path) + ".json"
    meta = {"file": os.path.basename(str(path)), "dtype": "float32", "byte_order": "little",
            "shape": list(arr.shape), **extra}
    Path(manifest_path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return manifest_path


def read_raw(path, manifest_path=None) -> np.ndarray:
    manifest_path = manifest_path or str(path) + ".json"
    meta = json.loads(Path(manifest_path).read_text())
    if meta.get("dtype") != "float32":
        raise FormatError(f"manifest field 'dtype': expected float32, got {meta.get('dtype')!r}")
    if meta.get("byte_order", "little") != "little":
        raise FormatError(f"manifest field 'byte_order': expected little, got {meta.get('byte_order')!r}")
    shape = meta.get("shape")
    if not isinstance(shape, list) or not all(isinstance(s, int) and s >= 0 for s in shape):
        raise FormatError(f"manifest field 'shape' is malformed: {shape!r}")
    data = Path(path).read_bytes()
    need = 4 * int(np.prod(shape))
    if len(data) != need:
        raise FormatError(f"manifest field 'shape' {shape} implies {need} bytes, file has {len(data)}")
    return np.frombuffer(data, dtype="<f4").reshape(shape).astype(np.float32)


def check_manifest_dims(manifest: dict, images) -> None:
    """Reject frame stacks that disagree with a frame manifest."""
    images = list(images)
    if "count" in manifest and manifest["count"] != len(images):
        raise FormatError(f"manifest field 'count' is {manifest['count']}, found {len(images)} images")
    for i, img in enumerate(images):
        h, w = np.shape(img)
        if "width" in manifest and manifest["width"] != w:
            raise FormatError(f"manifest field 'width' is {manifest['width']}, image {i} is {w} wide")
        if "height" in manifest and manifest["height"] != h:
            raise FormatError(f"manifest field 'height' is {manifest['height']}, image {i} is {h} high")


# -- PLY ---------------------------------------------------------------------

def _ply_fields(cloud: PointCloud):
    fields = [("x", cloud.points[:, 0]), ("y", cloud.points[:, 1]), ("z", cloud.points[:, 2])]
    if cloud.intensity is not None:
        fields.append(("intensity", cloud.intensity))
    if cloud.pixels is not None:
        fields += [("u_c", cloud.pixels[:, 0]), ("v_c", cloud.pixels[:, 1])]
    return fields


def write_ply(path, cloud: PointCloud, *, binary: bool = True, comments=()):
    fields = _ply_fields(cloud)
    lines = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0"]
    for c in comments:
        c = str(c).replace("\n", " ")
        lines.append(f"comment {c}")
    lines.append(f"element vertex {len(cloud)}")
    lines += [f"property float {name}" for name, _ in fields]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    table = np.stack([np.asarray(v, dtype=np.float64) for _, v in fields], axis=1) if len(cloud) \
        else np.zeros((0, len(fields)))
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(table.astype("<f4").tobytes())
        else:
            for row in table.astype(np.float32):
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))


def read_ply(path):
    """Returns ``(cloud, comments)``."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii").splitlines()
    body = data[end + len(b"end_header\n"):]
    fmt, n, names, comments = None, None, [], []
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            comments.append(line[len("comment "):])
        elif parts[0] == "element":
            if parts[1] != "vertex" or n is not None:
                raise FormatError(f"{path}: only a single vertex element is supported")
            n = int(parts[2])
        elif parts[0] == "property":
            if parts[1] != "float":
                raise FormatError(f"{path}: unsupported property type {parts[1]}")
            names.append(parts[2])
    if n is None or fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: malformed PLY header")
    k = len(names)
    if fmt == "binary_little_endian":
        if len(body) != 4 * n * k:
            raise FormatError(f"{path}: vertex count {n} does not match {len(body)} data bytes")
        table = np.frombuffer(body, dtype="<f4").reshape(n, k)
    else:
        vals = body.split()
        if len(vals) != n * k:
            raise FormatError(f"{path}: vertex count {n} does not match {len(vals)} values")
        table = np.array([float(v) for v in vals], dtype=np.float32).reshape(n, k)
    col = {name: table[:, i].astype(float) for i, name in enumerate(names)}
    missing = {"x", "y", "z"} - set(col)
    if missing:
        raise FormatError(f"{path}: missing vertex properties {sorted(missing)}")
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    pix = np.stack([col["u_c"], col["v_c"]], axis=1) if "u_c" in col and "v_c" in col else None
    return PointCloud(pts, pix, col.get("intensity")), comments
