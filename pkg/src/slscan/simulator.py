"""Synthetic fringe-projection renderer used as ground truth for the pipeline.

Each camera pixel is back-projected through the (distorted) camera lens,
intersected with the scene, and the hit point is projected into the
projector to look up the pattern value. Intensity is linear in that value::

    I = ambient + shading * (A0 + B0 * (2 * sample - 1))

so an ideal sinusoidal pattern gives ``I = A + B cos(phase)`` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from . import geometry as geo
from .decode import FrameSet
from .patterns import PatternSequence
from .scenes import Scene


# Self-hits on ray-marched surfaces land within the march tolerance of the
# true point, so occluders closer than this are ignored.
SHADOW_EPS = 1e-5


class EmptyVisibilityError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RenderConfig:
    """Rendering parameters.

    ``motion`` is the sensor translation (camera frame, meters) applied
    between consecutive captures: either one 3-vector for uniform motion or
    an array with one row per gap between frames.
    """

    reflectance: float = 0.5
    modulation: float = 0.4
    ambient: float = 0.0
    noise_sigma: float = 0.0
    motion: np.ndarray | None = None
    quantize_bits: int | None = None
    sampling: str = "bilinear"
    lambertian: bool = True
    reference_index: int | None = None
    seed: int = 0
    frame_interval: float = 1.0 / 30.0

    def __post_init__(self):
        for name in ("reflectance", "modulation", "ambient"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.ambient + self.reflectance + self.modulation > 1.0 + 1e-12:
            raise ValueError("ambient + reflectance + modulation must not exceed 1 (saturation)")
        if self.modulation > self.reflectance:
            raise ValueError("modulation must not exceed reflectance (negative intensity)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.sampling not in ("bilinear", "analytic"):
            raise ValueError("sampling must be 'bilinear' or 'analytic'")

    def offsets(self, n_frames: int) -> np.ndarray:
        """Accumulated sensor offset for each frame (first frame at zero)."""
        out = np.zeros((n_frames, 3))
        if self.motion is None:
            return out
        steps = np.asarray(self.motion, dtype=float)
        if steps.ndim == 1:
            steps = np.broadcast_to(steps, (n_frames - 1, 3))
        if steps.shape != (n_frames - 1, 3):
            raise ValueError(f"motion needs {n_frames - 1} per-gap steps, got shape {steps.shape}")
        out[1:] = np.cumsum(steps, axis=0)
        return out

    def reference(self, n_frames: int) -> int:
        if self.reference_index is not None:
            return self.reference_index
        return middle_index(n_frames)


def middle_index(n: int) -> int:
    return -(-n // 2) - 1


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Per-pixel truth in the reference frame's camera coordinates."""

    points: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)
    proj_uv: np.ndarray = field(repr=False)
    hit: np.ndarray = field(repr=False)
    lit: np.ndarray = field(repr=False)
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def valid(self) -> np.ndarray:
        return self.lit

    def projector_coord(self, axis: str) -> np.ndarray:
        return self.proj_uv[..., 0 if axis == "u" else 1]


def pixel_grid(intr: geo.Intrinsics) -> np.ndarray:
    u, v = np.meshgrid(np.arange(intr.width, dtype=float), np.arange(intr.height, dtype=float))
    return np.stack([u, v], axis=-1)


def camera_rays(rig: geo.StereoRig) -> np.ndarray:
    """Unit ray direction per camera pixel, shape (H, W, 3)."""
    rays = geo.undistort_pixel(rig.camera, pixel_grid(rig.camera.intrinsics))
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class _Geometry:
    points: np.ndarray
    depth: np.ndarray
    proj_uv: np.ndarray
    hit: np.ndarray
    lit: np.ndarray
    shading: np.ndarray


def trace(rig: geo.StereoRig, scene: Scene, offset=(0.0, 0.0, 0.0), rays=None) -> _Geometry:
    """Intersect every camera pixel with ``scene`` with the sensor displaced by ``offset``.

    Points and depth are returned in the displaced camera frame.
    """
    offset = np.asarray(offset, dtype=float)
    if rays is None:
        rays = camera_rays(rig)
    # Moving the sensor by +offset is the same as moving the scene by -offset.
    local = scene.translate(-offset) if np.any(offset) else scene
    t, normals = local.intersect(np.zeros(3), rays)
    hit = np.isfinite(t)
    pts = np.where(hit[..., None], t[..., None] * rays, np.nan)

    pose = rig.cam_T_proj
    pp = pose.transform(np.nan_to_num(pts))
    in_front = hit & (pp[..., 2] > 0)
    proj_uv = geo.project(rig.projector, np.where(in_front[..., None], np.nan_to_num(pts), [0, 0, 1.0]),
                          pose, check=False)
    proj_uv[~in_front] = np.nan
    intr = rig.projector.intrinsics
    with np.errstate(invalid="ignore"):
        in_frustum = (in_front & (proj_uv[..., 0] >= 0) & (proj_uv[..., 0] <= intr.width - 1)
                      & (proj_uv[..., 1] >= 0) & (proj_uv[..., 1] <= intr.height - 1))

    # Shadow test: the segment from the projector center to the hit point
    # must not hit the scene first.
    lit = in_frustum.copy()
    center = pose.center
    if np.any(lit):
        to_pt = pts[lit] - center
        dist = np.linalg.norm(to_pt, axis=-1)
        dirs = to_pt / dist[:, None]
        ts, _ = local.intersect(center, dirs)
        occluded = ts < dist - SHADOW_EPS
        idx = np.flatnonzero(lit.ravel())
        lit.ravel()[idx[occluded]] = False

    shading = np.zeros(t.shape)
    if np.any(hit):
        to_proj = center - np.nan_to_num(pts)
        to_proj /= np.linalg.norm(to_proj, axis=-1, keepdims=True)
        shading = np.abs(np.einsum("...i,...i->...", normals, to_proj))
    depth = np.where(hit, pts[..., 2], np.nan)
    return _Geometry(pts, depth, proj_uv, hit, lit, shading)


def _sample(seq: PatternSequence, index: int, uv: np.ndarray, lit: np.ndarray, sampling: str):
    out = np.zeros(lit.shape)
    u, v = uv[lit, 0], uv[lit, 1]
    if sampling == "analytic":
        out[lit] = seq.analytic(index, u, v)
    else:
        out[lit] = map_coordinates(np.asarray(seq.images[index], dtype=float), [v, u], order=1,
                                   mode="nearest")
    return out


def shade(g: _Geometry, sample: np.ndarray, cfg: RenderConfig) -> np.ndarray:
    """Noise-free intensity from pattern samples (linear forward model)."""
    s = g.shading if cfg.lambertian else np.ones_like(g.shading)
    A = cfg.reflectance * s
    B = cfg.modulation * s
    return np.where(g.lit, cfg.ambient + A + B * (2.0 * sample - 1.0), cfg.ambient)


def _finish(img, rng, cfg: RenderConfig):
    if cfg.noise_sigma > 0:
        img = img + rng.normal(0.0, cfg.noise_sigma, img.shape)
    img = np.clip(img, 0.0, 1.0)
    if cfg.quantize_bits:
        levels = 2 ** cfg.quantize_bits - 1
        img = np.floor(img * levels + 0.5) / levels
    return img


def render_sequence(rig: geo.StereoRig, scene: Scene, seq: PatternSequence,
                    cfg: RenderConfig = RenderConfig()):
    """Render every pattern of ``seq``; returns ``(FrameSet, GroundTruth)``.

    Ground truth is taken at the reference frame's sensor position.
    """
    n = len(seq)
    offsets = cfg.offsets(n)
    ref = cfg.reference(n)
    rays = camera_rays(rig)
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(n)]

    cache: dict[bytes, _Geometry] = {}
    images = []
    for i in range(n):
        key = offsets[i].tobytes()
        if key not in cache:
            cache[key] = trace(rig, scene, offsets[i], rays)
        g = cache[key]
        sample = _sample(seq, i, g.proj_uv, g.lit, cfg.sampling)
        images.append(_finish(shade(g, sample, cfg), rngs[i], cfg))

    key = offsets[ref].tobytes()
    g = cache.get(key) or trace(rig, scene, offsets[ref], rays)
    if not np.any(g.lit):
        raise EmptyVisibilityError("no camera pixel sees a projector-lit surface")
    truth = GroundTruth(points=g.points, depth=g.depth, proj_uv=g.proj_uv, hit=g.hit, lit=g.lit,
                        offset=offsets[ref])
    timestamps = np.arange(n) * cfg.frame_interval
    return FrameSet(np.stack(images), timestamps, seq.spec), truth


def render_frame(rig: geo.StereoRig, scene: Scene, pattern: np.ndarray, cfg: RenderConfig = RenderConfig(),
                 offset=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Render a single arbitrary projector image (bilinear lookup, no noise)."""
    g = trace(rig, scene, offset)
    sample = np.zeros(g.lit.shape)
    uv = g.proj_uv
    sample[g.lit] = map_coordinates(np.asarray(pattern, dtype=float), [uv[g.lit, 1], uv[g.lit, 0]],
                                    order=1, mode="nearest")
    return shade(g, sample, cfg)


def ground_truth_cloud(scene: Scene, rig: geo.StereoRig, *, lit_only: bool = False):
    """Exact intersection points per camera pixel as a :class:`PointCloud`."""
    from .triangulate import PointCloud

    g = trace(rig, scene)
    keep = g.lit if lit_only else g.hit
    vv, uu = np.nonzero(keep)
    return PointCloud(points=g.points[keep], pixels=np.stack([uu, vv], axis=-1).astype(float))
