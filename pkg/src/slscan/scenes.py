"""Parametric scenes with vectorized ray intersection.

Every scene implements ``intersect(origins, dirs) -> (t, normals)`` for rays
``origins + t * dirs`` with unit ``dirs``; misses return ``t = inf``. Normals
are unit length and not oriented toward the viewer.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

EPS_T = 1e-9


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


class Scene:
    def intersect(self, origins, dirs):
        raise NotImplementedError

    def translate(self, offset) -> "Scene":
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Plane(Scene):
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "point", np.asarray(self.point, dtype=float))
        object.__setattr__(self, "normal", _unit(self.normal))

    def intersect(self, origins, dirs):
        denom = _dot(dirs, self.normal)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _dot(self.point - origins, self.normal) / denom
        t = np.where((np.abs(denom) > 1e-15) & (t > EPS_T), t, np.inf)
        normals = np.broadcast_to(self.normal, np.shape(dirs))
        return t, normals

    def translate(self, offset):
        return replace(self, point=self.point + np.asarray(offset, dtype=float))

    def to_dict(self):
        return {"type": "plane", "point": self.point.tolist(), "normal": self.normal.tolist()}


@dataclass(frozen=True, eq=False)
class Sphere(Scene):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def intersect(self, origins, dirs):
        oc = origins - self.center
        b = _dot(oc, dirs)
        c = _dot(oc, oc) - self.radius ** 2
        disc = b * b - c
        sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
        t0 = -b - sq
        t1 = -b + sq
        t = np.where(t0 > EPS_T, t0, np.where(t1 > EPS_T, t1, np.inf))
        t = np.where(disc >= 0, t, np.inf)
        with np.errstate(invalid="ignore"):
            hit = origins + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs
        normals = (hit - self.center) / self.radius
        return t, normals

    def translate(self, offset):
        return replace(self, center=self.center + np.asarray(offset, dtype=float))

    def to_dict(self):
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True, eq=False)
class Cone:
    """Finite solid cone: apex, unit axis pointing from apex into the body,
    half-angle (radians) and height along the axis. The base disk is open."""

    apex: np.ndarray
    axis: np.ndarray
    half_angle: float
    height: float

    def __post_init__(self):
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float))
        object.__setattr__(self, "axis", _unit(self.axis))
        if not (0 < self.half_angle < np.pi / 2) or self.height <= 0:
            raise ValueError("cone needs 0 < half_angle < pi/2 and positive height")

    @property
    def base_radius(self) -> float:
        return self.height * np.tan(self.half_angle)

    def intersect(self, origins, dirs):
        cos2 = np.cos(self.half_angle) ** 2
        co = origins - self.apex
        dv = _dot(dirs, self.axis)
        cv = _dot(co, self.axis)
        a = dv * dv - cos2
        b = 2.0 * (dv * cv - _dot(dirs, co) * cos2)
        c = cv * cv - _dot(co, co) * cos2
        disc = b * b - 4 * a * c
        sq = np.sqrt(np.where(disc >= 0, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = (-b - sq) / (2 * a)
            r2 = (-b + sq) / (2 * a)
        lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)
        t = np.full(np.shape(dv), np.inf)
        for cand in (hi, lo):  # lo written last so it wins when both are valid
            h = cv + cand * dv
            ok = (disc >= 0) & np.isfinite(cand) & (cand > EPS_T) & (h >= 0) & (h <= self.height)
            t = np.where(ok, cand, t)
        hit = origins + np.where(np.isfinite(t), t, 0.0)[..., None] * dirs
        v = hit - self.apex
        h = _dot(v, self.axis)
        # gradient of (v.a)^2 - |v|^2 cos^2, pointing outward
        n = -(h[..., None] * self.axis - v * cos2)
        n = n / np.maximum(np.linalg.norm(n, axis=-1, keepdims=True), 1e-300)
        return t, n

    def translate(self, offset):
        return replace(self, apex=self.apex + np.asarray(offset, dtype=float))

    def to_dict(self):
        return {"apex": self.apex.tolist(), "axis": self.axis.tolist(),
                "half_angle": self.half_angle, "height": self.height}


@dataclass(frozen=True, eq=False)
class ConeBoard(Scene):
    """A base plane carrying cones, like a cone-distance evaluation board."""

    plane: Plane
    cones: tuple[Cone, ...]

    def intersect(self, origins, dirs):
        t, n = self.plane.intersect(origins, dirs)
        n = np.array(np.broadcast_to(n, np.shape(dirs)))
        for cone in self.cones:
            tc, nc = cone.intersect(origins, dirs)
            closer = tc < t
            t = np.where(closer, tc, t)
            n[closer] = nc[closer]
        return t, n

    def translate(self, offset):
        return ConeBoard(self.plane.translate(offset), tuple(c.translate(offset) for c in self.cones))

    def apex_distances(self) -> np.ndarray:
        """Distances from cone 1 to every cone (meters)."""
        apexes = np.array([c.apex for c in self.cones])
        return np.linalg.norm(apexes - apexes[0], axis=1)

    def to_dict(self):
        return {"type": "coneboard", "plane": self.plane.to_dict(),
                "cones": [c.to_dict() for c in self.cones]}


@dataclass(frozen=True, eq=False)
class HeightField(Scene):
    """Bilinear height grid over a base plane.

    ``heights[j, i]`` is the offset along ``normal`` at in-plane position
    ``origin + i*spacing*axis_u + j*spacing*axis_v``. Rays outside the grid
    footprint miss. Rays are marched in steps of ``march_step`` meters
    (default half the grid spacing) and the first sign change is
    refined by bisection to ``tol``.
    """

    origin: np.ndarray
    normal: np.ndarray
    axis_u: np.ndarray
    heights: np.ndarray = field(repr=False)
    spacing: float = 1e-3
    march_step: float | None = None
    tol: float = 1e-7

    def __post_init__(self):
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        n = _unit(self.normal)
        u = np.asarray(self.axis_u, dtype=float)
        u = _unit(u - _dot(u, n) * n)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float))
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "axis_u", u)
        object.__setattr__(self, "heights", np.asarray(self.heights, dtype=float))
        if self.march_step is None:
            object.__setattr__(self, "march_step", 0.5 * self.spacing)

    @property
    def axis_v(self):
        return np.cross(self.normal, self.axis_u)

    def _local(self, pts):
        d = pts - self.origin
        return (_dot(d, self.axis_u) / self.spacing, _dot(d, self.axis_v) / self.spacing,
                _dot(d, self.normal))

    def height_at(self, gi, gj):
        """Bilinear height at fractional grid coordinates; NaN outside."""
        H = self.heights
        rows, cols = H.shape
        inside = (gi >= 0) & (gi <= cols - 1) & (gj >= 0) & (gj <= rows - 1)
        i = np.clip(gi, 0, cols - 1)
        j = np.clip(gj, 0, rows - 1)
        i0 = np.minimum(np.floor(i).astype(int), cols - 2)
        j0 = np.minimum(np.floor(j).astype(int), rows - 2)
        fi, fj = i - i0, j - j0
        h = ((1 - fi) * (1 - fj) * H[j0, i0] + fi * (1 - fj) * H[j0, i0 + 1]
             + (1 - fi) * fj * H[j0 + 1, i0] + fi * fj * H[j0 + 1, i0 + 1])
        return np.where(inside, h, np.nan)

    def _gap(self, origins, dirs, t):
        gi, gj, w = self._local(origins + t[..., None] * dirs)
        return w - self.height_at(gi, gj)

    def intersect(self, origins, dirs):
        shape = np.shape(dirs)[:-1]
        origins = np.broadcast_to(origins, np.shape(dirs)).reshape(-1, 3)
        dirs = np.reshape(dirs, (-1, 3))
        dn = dirs @ self.normal
        on = (origins - self.origin) @ self.normal
        hmin, hmax = float(self.heights.min()), float(self.heights.max())
        # Clip each ray to the slab hmin - pad <= height <= hmax + pad.
        pad = 1e-6
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (hmin - pad - on) / dn
            tb = (hmax + pad - on) / dn
        t0 = np.maximum(np.minimum(ta, tb), EPS_T)
        t1 = np.maximum(ta, tb)
        # Clip further to the footprint box along both in-plane axes.
        rows, cols = self.heights.shape
        for axis, extent in ((self.axis_u, (cols - 1) * self.spacing),
                             (self.axis_v, (rows - 1) * self.spacing)):
            da = dirs @ axis
            oa = (origins - self.origin) @ axis
            with np.errstate(divide="ignore", invalid="ignore"):
                sa = (0.0 - oa) / da
                sb = (extent - oa) / da
            flat = np.abs(da) < 1e-15
            inside = (oa >= 0) & (oa <= extent)
            lo_ = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(sa, sb))
            hi_ = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(sa, sb))
            t0 = np.maximum(t0, lo_)
            t1 = np.minimum(t1, hi_)
        live = np.flatnonzero((np.abs(dn) > 1e-15) & (t1 > t0))

        result = np.full(len(dirs), np.inf)
        if len(live):
            o, d = origins[live], dirs[live]
            a0, a1 = t0[live], t1[live]
            n_steps = int(np.ceil(np.max(a1 - a0) / self.march_step))
            n_steps = max(n_steps, 2)
            idx = np.arange(len(live))
            prev_t = a0
            prev_g = self._gap(o, d, prev_t)
            lo = np.zeros(len(live))
            hi = np.zeros(len(live))
            found = np.zeros(len(live), dtype=bool)
            for s in range(1, n_steps + 1):
                cur_t = a0[idx] + (a1[idx] - a0[idx]) * s / n_steps
                cur_g = self._gap(o[idx], d[idx], cur_t)
                with np.errstate(invalid="ignore"):
                    cross = np.isfinite(prev_g) & np.isfinite(cur_g) & (np.sign(prev_g) != np.sign(cur_g))
                hit_idx = idx[cross]
                lo[hit_idx] = prev_t[cross]
                hi[hit_idx] = cur_t[cross]
                found[hit_idx] = True
                keep = ~cross
                idx, prev_t, prev_g = idx[keep], cur_t[keep], cur_g[keep]
                if not len(idx):
                    break
            f = np.flatnonzero(found)
            if len(f):
                o, d = o[f], d[f]
                a, b = lo[f], hi[f]
                ga = self._gap(o, d, a)
                while np.max(b - a) > self.tol:
                    m = 0.5 * (a + b)
                    gm = self._gap(o, d, m)
                    same = np.sign(gm) == np.sign(ga)
                    a = np.where(same, m, a)
                    ga = np.where(same, gm, ga)
                    b = np.where(same, b, m)
                result[live[f]] = 0.5 * (a + b)

        hit = origins + np.where(np.isfinite(result), result, 0.0)[:, None] * dirs
        normals = self._normals(hit)
        return result.reshape(shape), normals.reshape(shape + (3,))

    def _normals(self, pts):
        gi, gj, _ = self._local(pts)
        e = 1e-3
        dhdi = (self.height_at(gi + e, gj) - self.height_at(gi - e, gj)) / (2 * e * self.spacing)
        dhdj = (self.height_at(gi, gj + e) - self.height_at(gi, gj - e)) / (2 * e * self.spacing)
        dhdi = np.nan_to_num(dhdi)
        dhdj = np.nan_to_num(dhdj)
        n = (self.normal - dhdi[..., None] * self.axis_u - dhdj[..., None] * self.axis_v)
        return n / np.linalg.norm(n, axis=-1, keepdims=True)

    def translate(self, offset):
        return replace(self, origin=self.origin + np.asarray(offset, dtype=float))

    def to_dict(self):
        return {"type": "heightfield", "origin": self.origin.tolist(), "normal": self.normal.tolist(),
                "axis_u": self.axis_u.tolist(), "spacing": self.spacing,
                "heights": self.heights.tolist()}


@dataclass(frozen=True, eq=False)
class Union(Scene):
    """Nearest hit over several scenes (e.g. an object in front of a wall)."""

    parts: tuple[Scene, ...]

    def intersect(self, origins, dirs):
        t = np.full(np.shape(dirs)[:-1], np.inf)
        n = np.zeros(np.shape(dirs))
        for part in self.parts:
            tp, np_ = part.intersect(origins, dirs)
            closer = tp < t
            t = np.where(closer, tp, t)
            n = np.where(closer[..., None], np_, n)
        return t, n

    def translate(self, offset):
        return Union(tuple(p.translate(offset) for p in self.parts))

    def to_dict(self):
        return {"type": "union", "parts": [p.to_dict() for p in self.parts]}


def scene_from_dict(d: dict) -> Scene:
    kind = d.get("type")
    if kind == "plane":
        return Plane(d["point"], d["normal"])
    if kind == "sphere":
        return Sphere(d["center"], float(d["radius"]))
    if kind == "coneboard":
        cones = tuple(Cone(c["apex"], c["axis"], float(c["half_angle"]), float(c["height"]))
                      for c in d["cones"])
        return ConeBoard(scene_from_dict(d["plane"]) if "type" in d["plane"]
                         else Plane(d["plane"]["point"], d["plane"]["normal"]), cones)
    if kind == "heightfield":
        return HeightField(d["origin"], d["normal"], d["axis_u"], np.asarray(d["heights"]),
                           float(d["spacing"]))
    if kind == "union":
        return Union(tuple(scene_from_dict(p) for p in d["parts"]))
    raise ValueError(f"unknown scene type {kind!r}")


def fronto_plane(z: float) -> Plane:
    return Plane((0.0, 0.0, z), (0.0, 0.0, -1.0))


def cone_board(distance: float = 0.5, *, height: float = 0.025, half_angle: float = np.deg2rad(35),
               spacing: float = 0.06, layout=None) -> ConeBoard:
    """Six cones on a fronto-parallel board at ``distance`` meters, apexes
    pointing at the camera. ``layout`` overrides the in-plane (x, y) positions."""
    if layout is None:
        layout = [(-spacing, -spacing / 2), (0.0, -spacing / 2), (spacing, -spacing / 2),
                  (-spacing, spacing / 2), (0.0, spacing / 2), (spacing, spacing / 2)]
    cones = tuple(Cone((x, y, distance - height), (0.0, 0.0, 1.0), half_angle, height)
                  for x, y in layout)
    return ConeBoard(fronto_plane(distance), cones)
