"""Camera-projector triangulation.

For a camera pixel ``(u, v)`` and one projector coordinate ``p`` the point
is the null vector of the 3x4 system::

    [u m3 - m1]              (rows of M_c)
    [v m3 - m2]  X~ = 0
    [p n3 - n_axis]          (rows of M_p)

Each homogeneous coordinate of the null vector is a 3x3 minor, linear in
the last row and hence affine in ``p``. :class:`TriangulationTable` stores
those eight per-pixel coefficients so a point costs a handful of
multiply-adds instead of a linear solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .decode import ProjectorCoordMap

DEGENERACY_TOL = 1e-12


class DegenerateRayError(ArithmeticError):
    pass


class TableMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    pixels: np.ndarray | None = None
    intensity: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.pixels is not None:
            object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=float).reshape(-1, 2))
        if self.intensity is not None:
            object.__setattr__(self, "intensity", np.asarray(self.intensity, dtype=float).reshape(-1))

    def __len__(self):
        return len(self.points)

    def depth_map(self, shape) -> np.ndarray:
        """Rasterize z back onto the source pixels; NaN where no point exists."""
        out = np.full(shape, np.nan)
        if self.pixels is None:
            raise ValueError("point cloud carries no pixel provenance")
        uu = self.pixels[:, 0].astype(int)
        vv = self.pixels[:, 1].astype(int)
        out[vv, uu] = self.points[:, 2]
        return out


def _axis_row(axis: str) -> int:
    if axis not in ("u", "v"):
        raise ValueError(f"axis must be 'u' or 'v', got {axis!r}")
    return 0 if axis == "u" else 1


def _system_rows(Mc, u, v):
    u = np.asarray(u, dtype=float)[..., None]
    v = np.asarray(v, dtype=float)[..., None]
    return u * Mc[2] - Mc[0], v * Mc[2] - Mc[1]


def _minor_coefficients(r1, r2):
    """w[..., j, :] such that X~_j = w[..., j, :] . r3 for any third row r3."""
    cols = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]]
    w = np.zeros(r1.shape[:-1] + (4, 4))
    for j, c in enumerate(cols):
        cr = np.cross(r1[..., c], r2[..., c])
        w[..., j, c] = ((-1) ** j) * cr
    return w


def triangulate_pixel(rig: geo.StereoRig, u_c, v_c, p, axis: str = "u", *, check: bool = True):
    """Direct linear solve for undistorted camera pixel(s) and projector coordinate(s).

    Works element-wise on arrays. Raises :class:`DegenerateRayError` for a
    near-singular system when ``check`` is set; otherwise those entries are NaN.
    """
    Mc = geo.projection_matrix(rig, "camera")
    Mp = geo.projection_matrix(rig, "projector")
    r1, r2 = _system_rows(Mc, u_c, v_c)
    p = np.asarray(p, dtype=float)[..., None]
    r3 = p * Mp[2] - Mp[_axis_row(axis)]
    r1, r2, r3 = np.broadcast_arrays(r1, r2, r3)
    A = np.stack([r1[..., :3], r2[..., :3], r3[..., :3]], axis=-2)
    b = -np.stack([r1[..., 3], r2[..., 3], r3[..., 3]], axis=-1)
    det = np.linalg.det(A)
    scale = np.prod(np.linalg.norm(A, axis=-1), axis=-1)
    bad = ~(np.abs(det) > DEGENERACY_TOL * scale)
    if check and np.any(bad):
        raise DegenerateRayError("camera and projector rays are (nearly) parallel")
    A = np.where(bad[..., None, None], np.eye(3), A)
    X = np.linalg.solve(A, b[..., None])[..., 0]
    return np.where(bad[..., None], np.nan, X)


@dataclass(frozen=True, eq=False)
class TriangulationTable:
    """Per-pixel affine-in-p numerators and denominator, shape (H, W, 4, 2).

    ``coef[..., j, 0] + coef[..., j, 1] * p`` is homogeneous coordinate j of
    the solution; the point is the first three divided by the fourth.
    """

    coef: np.ndarray = field(repr=False)
    axis: str
    fingerprint: str
    undistorted: np.ndarray = field(repr=False)

    @property
    def shape(self):
        return self.coef.shape[:2]

    def check(self, rig: geo.StereoRig, axis: str | None = None):
        if rig.fingerprint() != self.fingerprint:
            raise TableMismatchError("triangulation table was built for a different rig")
        if axis is not None and axis != self.axis:
            raise TableMismatchError(f"table encodes axis {self.axis!r}, not {axis!r}")

    def evaluate(self, rows, cols, p):
        """Points for pixels (rows, cols) with projector coordinates ``p``.

        Returns ``(points, ok)``; degenerate entries are NaN with ``ok`` False.
        """
        h, w = self.shape
        flat = np.ravel_multi_index((np.asarray(rows), np.asarray(cols)), (h, w))
        c = np.take(self.coef.reshape(h * w, 4, 2), flat, axis=0)
        return evaluate_coefficients(c, p)


def evaluate_coefficients(c, p):
    p = np.asarray(p, dtype=float)
    h = c[..., 0] + c[..., 1] * p[..., None]
    a = np.abs(h)
    scale = np.maximum(np.maximum(a[..., 0], a[..., 1]), np.maximum(a[..., 2], a[..., 3]))
    w = h[..., 3]
    ok = a[..., 3] > DEGENERACY_TOL * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        pts = h[..., :3] / w[..., None]
    pts[~ok] = np.nan
    return pts, ok


def table_from_pixels(rig: geo.StereoRig, u, v, axis: str = "u") -> np.ndarray:
    """Affine coefficients (..., 4, 2) for arbitrary undistorted camera pixels."""
    Mc = geo.projection_matrix(rig, "camera")
    Mp = geo.projection_matrix(rig, "projector")
    r1, r2 = _system_rows(Mc, u, v)
    w = _minor_coefficients(r1, r2)
    slope_row = Mp[2]
    const_row = -Mp[_axis_row(axis)]
    return np.stack([w @ const_row, w @ slope_row], axis=-1)


def build_table(rig: geo.StereoRig, axis: str = "u") -> TriangulationTable:
    """Precompute coefficients for every camera pixel.

    Camera pixels are undistorted once here, so evaluating the table already
    accounts for camera lens distortion.
    """
    intr = rig.camera.intrinsics
    u, v = np.meshgrid(np.arange(intr.width, dtype=float), np.arange(intr.height, dtype=float))
    rays = geo.undistort_pixel(rig.camera, np.stack([u, v], axis=-1))
    uu = intr.fx * rays[..., 0] + intr.cx
    vv = intr.fy * rays[..., 1] + intr.cy
    coef = table_from_pixels(rig, uu, vv, axis)
    coef.setflags(write=False)
    und = np.stack([uu, vv], axis=-1)
    und.setflags(write=False)
    return TriangulationTable(coef=coef, axis=axis, fingerprint=rig.fingerprint(), undistorted=und)


def _projector_correction(rig: geo.StereoRig, pts, axis: str):
    """Distorted minus undistorted projector coordinate of ``pts`` along ``axis``."""
    dev, pose = rig.device("projector")
    q = pose.transform(pts)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = q[..., 0] / q[..., 2]
        y = q[..., 1] / q[..., 2]
    xd, yd = dev.distortion.apply(x, y)
    intr = dev.intrinsics
    if axis == "u":
        return intr.fx * (xd - x)
    return intr.fy * (yd - y)


def _undistort_projector(rig, c, p_meas, pts, axis, iterations):
    """Solve ``q + corr(X(q)) = p_meas`` for the undistorted coordinate ``q``.

    The first round is a plain fixed-point update; later rounds use the
    secant through the last two iterates, which costs the same single
    correction evaluation but converges much faster.
    """
    q_prev, g_prev = None, None
    q = p_meas
    for _ in range(iterations):
        g = q + np.nan_to_num(_projector_correction(rig, pts, axis))  # predicted measurement
        q_next = p_meas - (g - q)
        if q_prev is not None:
            slope = (g - g_prev) / np.where(q == q_prev, 1.0, q - q_prev)
            use = (q != q_prev) & (np.abs(slope - 1.0) < 0.5)
            q_next = np.where(use, q - (g - p_meas) / np.where(use, slope, 1.0), q_next)
        q_prev, g_prev, q = q, g, q_next
        pts, ok = evaluate_coefficients(c, q)
    return pts, ok


@dataclass
class TriangulationStats:
    requested: int = 0
    produced: int = 0
    degenerate: int = 0
    behind: int = 0

    @property
    def dropped(self) -> int:
        return self.requested - self.produced


def triangulate_map(coords: ProjectorCoordMap, rig: geo.StereoRig, table: TriangulationTable | None = None,
                    *, projector_distortion: str = "iterative", iterations: int = 2,
                    intensity=None, stats: TriangulationStats | None = None) -> PointCloud:
    """One point per valid pixel of ``coords``.

    ``projector_distortion`` is ``'none'`` (p is used as is) or
    ``'iterative'`` (p is corrected for projector lens distortion with a few
    fixed-point rounds using the current depth estimate).
    """
    if projector_distortion not in ("none", "iterative"):
        raise ValueError("projector_distortion must be 'none' or 'iterative'")
    if table is None:
        table = build_table(rig, coords.axis)
    else:
        table.check(rig, coords.axis)
    if table.shape != coords.shape:
        raise TableMismatchError(f"table covers {table.shape} pixels, map has {coords.shape}")

    rows, cols = np.nonzero(coords.mask)
    p_meas = coords.p[rows, cols]
    c = np.take(table.coef.reshape(-1, 4, 2), rows * coords.shape[1] + cols, axis=0)
    pts, ok = evaluate_coefficients(c, p_meas)
    if projector_distortion == "iterative" and not rig.projector.distortion.is_zero:
        pts, ok = _undistort_projector(rig, c, p_meas, pts, coords.axis, iterations)

    front = ok & (pts[:, 2] > 0)
    keep = front & np.all(np.isfinite(pts), axis=1)
    if stats is not None:
        stats.requested += len(rows)
        stats.produced += int(keep.sum())
        stats.degenerate += int((~ok).sum())
        stats.behind += int((ok & ~front).sum())
    pix = np.stack([cols, rows], axis=-1)[keep]
    inten = None if intensity is None else np.asarray(intensity)[rows, cols][keep]
    return PointCloud(points=pts[keep], pixels=pix, intensity=inten)
