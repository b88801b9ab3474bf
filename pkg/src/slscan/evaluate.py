"""Scan quality metrics: depth precision, plane roughness, cone distances,
and depth cross-sections."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.optimize import least_squares

from .triangulate import PointCloud


class FitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PrecisionReport:
    std_map: np.ndarray = field(repr=False)
    mean: float
    max: float
    n_scans: int
    n_pixels: int

    def to_dict(self):
        return {"mean_mm": self.mean, "max_mm": self.max, "n_scans": self.n_scans,
                "n_pixels": self.n_pixels}


def depth_std(scans, mask=None) -> PrecisionReport:
    """Per-pixel sample standard deviation (n - 1) of repeated depth maps.

    Depth maps are in meters with NaN for invalid pixels; the report is in
    millimetres and covers only pixels valid in every scan (and in ``mask``).
    """
    scans = np.asarray(scans, dtype=float)
    if scans.ndim != 3 or len(scans) < 2:
        raise ValueError("need at least two depth maps of equal shape")
    valid = np.all(np.isfinite(scans), axis=0)
    if mask is not None:
        valid &= np.asarray(mask, dtype=bool)
    std = np.full(scans.shape[1:], np.nan)
    std[valid] = np.std(scans[:, valid], axis=0, ddof=1) * 1e3
    if not valid.any():
        return PrecisionReport(std, float("nan"), float("nan"), len(scans), 0)
    return PrecisionReport(std, float(std[valid].mean()), float(std[valid].max()), len(scans),
                           int(valid.sum()))


@dataclass(frozen=True)
class RoughnessReport:
    esd: float
    normal: tuple
    centroid: tuple
    n_points: int
    patch: tuple | None = None
    area: float | None = None

    def to_dict(self):
        return {"esd_mm": self.esd, "normal": list(self.normal), "centroid": list(self.centroid),
                "n_points": self.n_points, "patch": None if self.patch is None else list(self.patch),
                "area_cm2": self.area}


def fit_plane(points):
    """Total-least-squares plane: (centroid, unit normal, signed distances)."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 3:
        raise FitError("need at least 3 points to fit a plane")
    c = pts.mean(axis=0)
    d = pts - c
    _, s, vt = np.linalg.svd(d, full_matrices=False)
    if s[1] <= 1e-12 * max(s[0], 1e-300):
        raise FitError("points are collinear; plane is undefined")
    n = vt[2]
    return c, n, d @ n


def _patch_select(cloud: PointCloud, patch):
    if patch is None:
        return np.ones(len(cloud), dtype=bool)
    if cloud.pixels is None:
        raise ValueError("patch selection needs per-point pixel provenance")
    u0, v0, u1, v1 = patch
    u, v = cloud.pixels[:, 0], cloud.pixels[:, 1]
    return (u >= u0) & (u < u1) & (v >= v0) & (v < v1)


def plane_esd(cloud: PointCloud, patch=None) -> RoughnessReport:
    """Standard deviation (mm) of orthogonal distances to the best-fit plane.

    ``patch`` is an optional pixel rectangle ``(u0, v0, u1, v1)`` (half-open).
    The reported area is the metric area of the patch projected onto the
    fitted plane, in cm^2.
    """
    sel = _patch_select(cloud, patch)
    pts = cloud.points[sel]
    c, n, dist = fit_plane(pts)
    esd = float(np.std(dist, ddof=1)) * 1e3
    area = None
    if patch is not None and len(pts) >= 3:
        # convex hull of the patch points in plane coordinates
        from scipy.spatial import ConvexHull
        basis = np.linalg.svd(pts - c, full_matrices=False)[2][:2]
        try:
            area = float(ConvexHull((pts - c) @ basis.T).volume) * 1e4
        except Exception:
            area = None
    return RoughnessReport(esd=esd, normal=tuple(n.tolist()), centroid=tuple(c.tolist()),
                           n_points=int(len(pts)), patch=None if patch is None else tuple(patch),
                           area=area)


# -- cones ---------------------------------------------------------------

def _axis_from_angles(theta, phi):
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def _angles_from_axis(a):
    a = a / np.linalg.norm(a)
    return np.arccos(np.clip(a[2], -1, 1)), np.arctan2(a[1], a[0])


def cone_distance(points, apex, axis, half_angle):
    """Signed orthogonal distance from points to a cone surface (positive outside)."""
    v = np.asarray(points) - apex
    h = v @ axis
    r = np.linalg.norm(v - h[:, None] * axis, axis=1)
    return r * np.cos(half_angle) - h * np.sin(half_angle)


@dataclass(frozen=True)
class ConeFit:
    apex: np.ndarray
    axis: np.ndarray
    half_angle: float
    rms: float
    n_points: int
    converged: bool


@dataclass(frozen=True, eq=False)
class ConeReport:
    cones: tuple
    distances: np.ndarray
    reference: np.ndarray | None = None

    @property
    def errors(self):
        if self.reference is None:
            return None
        return self.distances - self.reference

    def to_dict(self):
        d = {"cones": [{"apex": c.apex.tolist(), "axis": c.axis.tolist(),
                        "half_angle_deg": float(np.degrees(c.half_angle)), "rms_mm": c.rms * 1e3,
                        "n_points": c.n_points, "converged": c.converged} for c in self.cones],
             "distances_mm": (self.distances * 1e3).tolist()}
        if self.reference is not None:
            d["errors_mm"] = (self.errors * 1e3).tolist()
        return d


def fit_cone(points, apex0, axis0=(0.0, 0.0, 1.0), half_angle0=np.deg2rad(30), *,
             xtol: float = 1e-10, max_rms: float | None = None) -> ConeFit:
    """Levenberg-Marquardt fit of (apex, axis angles, half-angle) to surface points."""
    pts = np.asarray(points, dtype=float)
    if len(pts) < 100:
        raise FitError(f"cone neighbourhood has only {len(pts)} points (need >= 100)")
    th0, ph0 = _angles_from_axis(np.asarray(axis0, dtype=float))
    x0 = np.r_[np.asarray(apex0, dtype=float), th0, ph0, half_angle0]

    def resid(x):
        return cone_distance(pts, x[:3], _axis_from_angles(x[3], x[4]), x[5])

    sol = least_squares(resid, x0, method="lm", xtol=xtol, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    apex = sol.x[:3]
    axis = _axis_from_angles(sol.x[3], sol.x[4])
    rms = float(np.sqrt(np.mean(sol.fun ** 2)))
    converged = sol.status > 0
    if not converged:
        raise FitError(f"cone fit did not converge: {sol.message}")
    if max_rms is not None and rms > max_rms:
        raise FitError(f"cone fit residual {rms:.3g} m exceeds {max_rms:.3g} m")
    return ConeFit(apex, axis, float(sol.x[5]), rms, len(pts), converged)


def fit_cones(cloud: PointCloud, seeds, radius: float, *, axis0=(0.0, 0.0, 1.0),
              half_angle0=np.deg2rad(30), reference=None, max_rms: float | None = None) -> ConeReport:
    """Fit one cone per seed apex using points within ``radius`` of the seed.

    Choose ``radius`` below the cone height so the neighbourhood excludes
    the board the cones stand on. Distances are apex-to-apex from cone 1.
    """
    pts = cloud.points
    fits = []
    for seed in np.asarray(seeds, dtype=float):
        near = np.linalg.norm(pts - seed, axis=1) < radius
        fits.append(fit_cone(pts[near], seed, axis0, half_angle0, max_rms=max_rms))
    apexes = np.array([f.apex for f in fits])
    dist = np.linalg.norm(apexes - apexes[0], axis=1)
    ref = None if reference is None else np.asarray(reference, dtype=float)
    return ConeReport(tuple(fits), dist, ref)


def distance_statistics(distance_sets, reference):
    """RMSE and standard deviation (mm) per cone distance over repeated scans."""
    d = np.asarray(distance_sets, dtype=float) * 1e3
    ref = np.asarray(reference, dtype=float) * 1e3
    rmse = np.sqrt(np.mean((d - ref) ** 2, axis=0))
    std = np.std(d, axis=0, ddof=1) if len(d) > 1 else np.zeros(d.shape[1])
    return rmse, std


# -- cross sections ------------------------------------------------------

def cross_section(depth, line, n_samples: int | None = None) -> np.ndarray:
    """Depth profile in millimetres along a row or segment.

    ``line`` is a row index or a segment ``((u0, v0), (u1, v1))`` in pixels;
    segments are sampled bilinearly (NaN where any neighbour is invalid).
    """
    depth = np.asarray(depth, dtype=float)
    h, w = depth.shape
    if np.ndim(line) == 0:
        row = int(line)
        if not 0 <= row < h:
            raise IndexError(f"row {row} outside image")
        return depth[row] * 1e3
    (u0, v0), (u1, v1) = line
    for u, v in ((u0, v0), (u1, v1)):
        if not (0 <= u <= w - 1 and 0 <= v <= h - 1):
            raise IndexError(f"segment endpoint ({u}, {v}) outside image")
    if n_samples is None:
        n_samples = int(np.ceil(np.hypot(u1 - u0, v1 - v0))) + 1
    uu = np.linspace(u0, u1, n_samples)
    vv = np.linspace(v0, v1, n_samples)
    finite = np.isfinite(depth)
    vals = map_coordinates(np.where(finite, depth, 0.0), [vv, uu], order=1)
    ok = map_coordinates(finite.astype(float), [vv, uu], order=1) > 1 - 1e-9
    return np.where(ok, vals, np.nan) * 1e3


def detrend(profile, reference=None) -> np.ndarray:
    """Remove a least-squares line (or a reference profile) from a profile."""
    profile = np.asarray(profile, dtype=float)
    if reference is not None:
        return profile - np.asarray(reference, dtype=float)
    x = np.arange(len(profile), dtype=float)
    ok = np.isfinite(profile)
    if ok.sum() < 2:
        return profile - np.nanmean(profile)
    coef = np.polyfit(x[ok], profile[ok], 1)
    return profile - np.polyval(coef, x)


def ripple_amplitude(profile, reference=None) -> float:
    """Peak-to-peak of the detrended profile, ignoring NaNs."""
    d = detrend(profile, reference)
    d = d[np.isfinite(d)]
    if not len(d):
        return float("nan")
    return float(d.max() - d.min())
