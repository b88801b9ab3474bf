"""Pinhole camera/projector models with Bouguet lens distortion.

The world frame coincides with the camera frame. A projector pose is stored
as the rotation/translation that maps camera-frame points into the projector
frame, so ``M_p = K_p [R | t]``.

Distortion coefficients follow the OpenCV ordering ``[k1, k2, p1, p2, k3]``
whenever they are serialized as a flat list.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ROTATION_TOL = 1e-9


class GeometryError(ValueError):
    pass


class PointBehindDeviceError(GeometryError):
    pass


class UndistortError(GeometryError):
    """Raised when the distortion inversion fails to converge."""


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} sensor"
            )

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class Distortion:
    k1: float = 0.0
    k2: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    k3: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.as_list())):
            raise GeometryError("distortion coefficients must be finite")

    def as_list(self) -> list[float]:
        """Coefficients in ``[k1, k2, p1, p2, k3]`` order."""
        return [self.k1, self.k2, self.p1, self.p2, self.k3]

    @classmethod
    def from_list(cls, coeffs) -> "Distortion":
        coeffs = list(coeffs)
        if len(coeffs) != 5:
            raise GeometryError(f"expected 5 distortion coefficients [k1,k2,p1,p2,k3], got {len(coeffs)}")
        k1, k2, p1, p2, k3 = (float(c) for c in coeffs)
        return cls(k1=k1, k2=k2, p1=p1, p2=p2, k3=k3)

    @property
    def is_zero(self) -> bool:
        return not any(self.as_list())

    def apply(self, x, y):
        """Map undistorted normalized coordinates to distorted ones."""
        r2 = x * x + y * y
        radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
        xd = x * radial + 2.0 * self.p1 * x * y + self.p2 * (r2 + 2.0 * x * x)
        yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + 2.0 * self.p2 * x * y
        return xd, yd

    def jacobian(self, x, y):
        """Partial derivatives of :meth:`apply`, returned as (dxd/dx, dxd/dy, dyd/dx, dyd/dy)."""
        r2 = x * x + y * y
        radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
        # d(radial)/d(r2)
        dradial = self.k1 + r2 * (2.0 * self.k2 + 3.0 * r2 * self.k3)
        dxx = radial + 2.0 * x * x * dradial + 2.0 * self.p1 * y + 6.0 * self.p2 * x
        dxy = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y
        dyx = 2.0 * x * y * dradial + 2.0 * self.p1 * x + 2.0 * self.p2 * y
        dyy = radial + 2.0 * y * y * dradial + 6.0 * self.p1 * y + 2.0 * self.p2 * x
        return dxx, dxy, dyx, dyy


@dataclass(frozen=True, eq=False)
class Extrinsics:
    """Rigid transform ``x_device = R @ x_world + t`` (meters)."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), rtol=0, atol=ROTATION_TOL):
            raise GeometryError("rotation matrix is not orthonormal (R^T R != I)")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise GeometryError(f"rotation determinant must be +1, got {np.linalg.det(R):.12g}")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def __eq__(self, other):
        if not isinstance(other, Extrinsics):
            return NotImplemented
        return np.array_equal(self.R, other.R) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.R.tobytes(), self.t.tobytes()))

    def transform(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points @ self.R.T + self.t

    @property
    def center(self) -> np.ndarray:
        """Device optical center expressed in the world frame."""
        return -self.R.T @ self.t


IDENTITY = Extrinsics()


@dataclass(frozen=True)
class Device:
    """An intrinsics + distortion pair (a camera or a projector lens)."""

    intrinsics: Intrinsics
    distortion: Distortion = Distortion()

    def __post_init__(self):
        _check_injective(self)


def _normalized_footprint(intr: Intrinsics, margin: float = 1.25):
    xs = (np.array([0.0, intr.width - 1.0]) - intr.cx) / intr.fx
    ys = (np.array([0.0, intr.height - 1.0]) - intr.cy) / intr.fy
    return xs * margin, ys * margin


def _check_injective(device: Device, n: int = 41):
    # Positive Jacobian determinant on a grid over (a padded copy of) the
    # sensor footprint; fold-over shows up as a sign change.
    dist = device.distortion
    if dist.is_zero:
        return
    xs, ys = _normalized_footprint(device.intrinsics)
    gx, gy = np.meshgrid(np.linspace(xs[0], xs[1], n), np.linspace(ys[0], ys[1], n))
    a, b, c, d = dist.jacobian(gx, gy)
    det = a * d - b * c
    if not np.all(det > 0):
        raise GeometryError("distortion map is not injective over the sensor footprint")


@dataclass(frozen=True)
class StereoRig:
    """Camera at the world origin plus a projector posed by ``cam_T_proj``."""

    camera: Device
    projector: Device
    cam_T_proj: Extrinsics

    def __post_init__(self):
        if np.linalg.norm(self.cam_T_proj.t) <= 0:
            raise GeometryError("camera-projector baseline must be nonzero")

    def device(self, which: str) -> tuple[Device, Extrinsics]:
        if which == "camera":
            return self.camera, IDENTITY
        if which == "projector":
            return self.projector, self.cam_T_proj
        raise ValueError(f"unknown device {which!r}; expected 'camera' or 'projector'")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.cam_T_proj.t))

    def to_dict(self) -> dict:
        def dev(d: Device):
            i = d.intrinsics
            return {"fx": i.fx, "fy": i.fy, "cx": i.cx, "cy": i.cy,
                    "width": i.width, "height": i.height, "dist": d.distortion.as_list()}
        return {
            "camera": dev(self.camera),
            "projector": dev(self.projector),
            "extrinsics": {"R": self.cam_T_proj.R.ravel().tolist(), "t": self.cam_T_proj.t.tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StereoRig":
        def dev(d):
            try:
                intr = Intrinsics(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                                  int(d["width"]), int(d["height"]))
            except KeyError as exc:
                raise GeometryError(f"calibration entry missing field {exc.args[0]!r}") from None
            return Device(intr, Distortion.from_list(d.get("dist", [0.0] * 5)))
        try:
            ext = data["extrinsics"]
            R = np.asarray(ext["R"], dtype=float)
            t = np.asarray(ext["t"], dtype=float)
            cam, proj = data["camera"], data["projector"]
        except KeyError as exc:
            raise GeometryError(f"calibration missing field {exc.args[0]!r}") from None
        if R.size != 9 or t.size != 3:
            raise GeometryError("extrinsics need R with 9 row-major entries and t with 3 entries")
        return cls(dev(cam), dev(proj), Extrinsics(R.reshape(3, 3), t))

    def fingerprint(self) -> str:
        """Stable short hash of every calibration value."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_rig(path) -> StereoRig:
    with open(path) as fh:
        return StereoRig.from_dict(json.load(fh))


def save_rig(rig: StereoRig, path) -> None:
    Path(path).write_text(json.dumps(rig.to_dict(), indent=2))


def project(device: Device, points, extrinsics: Extrinsics = IDENTITY, *, check: bool = True) -> np.ndarray:
    """Project world points (..., 3) to distorted pixel coordinates (..., 2).

    Raises :class:`PointBehindDeviceError` if any point has ``z <= 0`` in the
    device frame, unless ``check`` is False, in which case such points map
    to NaN.
    """
    pts = extrinsics.transform(points)
    z = pts[..., 2]
    behind = ~(z > 0)
    if np.any(behind):
        if check:
            raise PointBehindDeviceError("point lies behind the device (z <= 0)")
        z = np.where(behind, np.nan, z)
    x = pts[..., 0] / z
    y = pts[..., 1] / z
    xd, yd = device.distortion.apply(x, y)
    intr = device.intrinsics
    return np.stack([intr.fx * xd + intr.cx, intr.fy * yd + intr.cy], axis=-1)


def distort_normalized(device: Device, xy) -> np.ndarray:
    xy = np.asarray(xy, dtype=float)
    xd, yd = device.distortion.apply(xy[..., 0], xy[..., 1])
    return np.stack([xd, yd], axis=-1)


def undistort_pixel(device: Device, pixels, *, max_iter: int = 20, tol: float = 1e-10) -> np.ndarray:
    """Invert the lens model: distorted pixels (..., 2) -> rays (..., 3) with z = 1.

    Damped Newton iteration on the residual ``distort(x) - x_d``, started at
    the distorted normalized coordinate. Raises :class:`UndistortError` if any
    pixel fails to converge within ``max_iter`` iterations.
    """
    pixels = np.asarray(pixels, dtype=float)
    intr = device.intrinsics
    xd = (pixels[..., 0] - intr.cx) / intr.fx
    yd = (pixels[..., 1] - intr.cy) / intr.fy
    dist = device.distortion
    if dist.is_zero:
        return np.stack([xd, yd, np.ones_like(xd)], axis=-1)

    x, y = xd.copy(), yd.copy()
    converged = np.zeros(x.shape, dtype=bool)
    for _ in range(max_iter):
        fx_, fy_ = dist.apply(x, y)
        rx, ry = fx_ - xd, fy_ - yd
        err = np.hypot(rx, ry)
        converged = err < tol
        if np.all(converged):
            break
        a, b, c, d = dist.jacobian(x, y)
        det = a * d - b * c
        dx = (d * rx - b * ry) / det
        dy = (-c * rx + a * ry) / det
        # Halve the step where a full Newton step would increase the residual.
        step = np.ones_like(x)
        for _ in range(8):
            nx, ny = dist.apply(x - step * dx, y - step * dy)
            worse = np.hypot(nx - xd, ny - yd) > err
            if not np.any(worse):
                break
            step = np.where(worse, 0.5 * step, step)
        x = np.where(converged, x, x - step * dx)
        y = np.where(converged, y, y - step * dy)
    else:
        fx_, fy_ = dist.apply(x, y)
        converged = np.hypot(fx_ - xd, fy_ - yd) < tol
    if not np.all(converged):
        raise UndistortError(
            f"{int(np.sum(~converged))} pixel(s) did not converge in {max_iter} iterations"
        )
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def projection_matrix(rig: StereoRig, device: str) -> np.ndarray:
    """3x4 matrix ``K [R | t]`` for ``'camera'`` or ``'projector'`` (no distortion)."""
    dev, ext = rig.device(device)
    return dev.intrinsics.K @ np.hstack([ext.R, ext.t[:, None]])


def look_at(center, target, up=(0.0, -1.0, 0.0)) -> Extrinsics:
    """Extrinsics for a device at ``center`` whose optical axis points at ``target``.

    Device axes follow the camera convention: x right, y down, z forward.
    """
    center = np.asarray(center, dtype=float)
    z = np.asarray(target, dtype=float) - center
    z /= np.linalg.norm(z)
    x = np.cross(-np.asarray(up, dtype=float), z)
    if np.linalg.norm(x) < 1e-12:
        raise GeometryError("up vector is parallel to the viewing direction")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    # Re-orthonormalize to keep det(R) = 1 at machine precision.
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return Extrinsics(R, -R @ center)


def make_rig(
    *,
    camera_size=(640, 480),
    camera_focal: float = 900.0,
    projector_size=(912, 1140),
    projector_focal: float = 1000.0,
    baseline=(0.1, 0.0, 0.0),
    working_distance: float = 0.5,
    camera_dist: Distortion | None = None,
    projector_dist: Distortion | None = None,
) -> StereoRig:
    """Build a synthetic camera-projector rig whose projector aims at the
    point ``(0, 0, working_distance)`` on the camera axis.

    ``baseline`` is the projector optical center in the camera frame.
    """
    cw, ch = camera_size
    pw, ph = projector_size
    cam = Device(Intrinsics(camera_focal, camera_focal, (cw - 1) / 2, (ch - 1) / 2, cw, ch),
                 camera_dist or Distortion())
    proj = Device(Intrinsics(projector_focal, projector_focal, (pw - 1) / 2, (ph - 1) / 2, pw, ph),
                  projector_dist or Distortion())
    pose = look_at(baseline, (0.0, 0.0, working_distance))
    return StereoRig(cam, proj, pose)
