import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from slscan import io
from slscan.triangulate import PointCloud


@given(st.integers(0, 2**32 - 1), st.sampled_from([np.uint8, np.uint16]), st.booleans())
def test_pgm_roundtrip(tmp_path_factory, seed, dtype, ascii):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, np.iinfo(dtype).max + 1, (7, 11)).astype(dtype)
    path = tmp_path_factory.mktemp("pgm") / "x.pgm"
    io.write_pgm(path, img, ascii=ascii)
    back = io.read_pgm(path)
    assert back.dtype == dtype and np.array_equal(back, img)


def test_pgm_header_comments(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P2\n# made by hand\n3 1\n# max\n10\n1 2 10\n")
    assert io.read_pgm(path).tolist() == [[1, 2, 10]]


def test_pgm_malformed(tmp_path):
    bad = tmp_path / "bad.pgm"
    bad.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
    with pytest.raises(io.FormatError):
        io.read_pgm(bad)
    short = tmp_path / "short.pgm"
    short.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(io.FormatError, match="bytes"):
        io.read_pgm(short)


def test_pgm_rejects_float():
    with pytest.raises(ValueError):
        io.write_pgm("never.pgm", np.zeros((2, 2)))


@pytest.mark.parametrize("dtype", [np.uint8, np.uint16])
def test_png_roundtrip(tmp_path, dtype):
    img = np.random.default_rng(0).integers(0, np.iinfo(dtype).max + 1, (9, 13)).astype(dtype)
    io.write_png(tmp_path / "x.png", img)
    back = io.read_png(tmp_path / "x.png")
    assert back.dtype == dtype and np.array_equal(back, img)


def test_raw_roundtrip_and_manifest_checks(tmp_path):
    arr = np.random.default_rng(1).normal(size=(5, 6)).astype(np.float32)
    io.write_raw(tmp_path / "a.raw", arr, kind="test")
    assert np.array_equal(io.read_raw(tmp_path / "a.raw"), arr)
    meta = json.loads((tmp_path / "a.raw.json").read_text())
    meta["shape"] = [6, 6]
    (tmp_path / "a.raw.json").write_text(json.dumps(meta))
    with pytest.raises(io.FormatError, match="'shape'"):
        io.read_raw(tmp_path / "a.raw")


def test_frame_manifest_dimension_mismatch():
    imgs = [np.zeros((4, 5))] * 3
    io.check_manifest_dims({"width": 5, "height": 4, "count": 3}, imgs)
    with pytest.raises(io.FormatError, match="'width'"):
        io.check_manifest_dims({"width": 6, "height": 4}, imgs)
    with pytest.raises(io.FormatError, match="'height'"):
        io.check_manifest_dims({"height": 3}, imgs)
    with pytest.raises(io.FormatError, match="'count'"):
        io.check_manifest_dims({"count": 6}, imgs)


def cloud(rng, n=200, extras=True):
    pts = rng.normal(0, 0.1, (n, 3)) + [0, 0, 0.5]
    if not extras:
        return PointCloud(pts)
    return PointCloud(pts, pixels=rng.integers(0, 640, (n, 2)), intensity=rng.uniform(size=n))


def test_ply_ascii_and_binary_agree(tmp_path):
    c = cloud(np.random.default_rng(2))
    io.write_ply(tmp_path / "a.ply", c, binary=False, comments=["rig_fingerprint abc"])
    io.write_ply(tmp_path / "b.ply", c, binary=True, comments=["rig_fingerprint abc"])
    a, ca = io.read_ply(tmp_path / "a.ply")
    b, cb = io.read_ply(tmp_path / "b.ply")
    assert ca == cb == ["rig_fingerprint abc"]
    f32 = c.points.astype(np.float32).astype(float)
    assert np.array_equal(a.points, f32) and np.array_equal(b.points, f32)
    assert np.array_equal(a.pixels, b.pixels) and np.array_equal(a.intensity, b.intensity)


def test_ply_minimal_and_empty(tmp_path):
    rng = np.random.default_rng(3)
    io.write_ply(tmp_path / "m.ply", cloud(rng, extras=False))
    m, _ = io.read_ply(tmp_path / "m.ply")
    assert m.pixels is None and m.intensity is None
    io.write_ply(tmp_path / "e.ply", PointCloud(np.zeros((0, 3))))
    e, _ = io.read_ply(tmp_path / "e.ply")
    assert len(e) == 0


def test_ply_truncated(tmp_path):
    io.write_ply(tmp_path / "t.ply", cloud(np.random.default_rng(4)))
    data = (tmp_path / "t.ply").read_bytes()
    (tmp_path / "t.ply").write_bytes(data[:-5])
    with pytest.raises(io.FormatError):
        io.read_ply(tmp_path / "t.ply")
