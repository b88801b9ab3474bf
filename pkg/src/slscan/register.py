"""Phase-correlation registration and translation-only motion compensation.

Sign convention: if ``m(x, y) = f(x - dx, y - dy)`` (``m`` is ``f`` moved by
``(dx, dy)``), the inverse transform of the normalized cross-power spectrum
``F M* / |F M*|`` peaks at ``(-dx, -dy)`` and :func:`phase_correlate`
reports ``(dx, dy)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import map_coordinates

from .decode import FrameSet

log = logging.getLogger(__name__)

CONSTRAINTS = ("none", "x", "y")


class DegenerateSpectrumError(ValueError):
    pass


@dataclass(frozen=True)
class ShiftEstimate:
    dx: float
    dy: float
    peak_value: float
    axis_constraint: str = "none"

    def __neg__(self):
        return ShiftEstimate(-self.dx, -self.dy, self.peak_value, self.axis_constraint)

    def to_dict(self):
        return {"dx": self.dx, "dy": self.dy, "peak_value": self.peak_value,
                "axis_constraint": self.axis_constraint}


@dataclass(frozen=True)
class MotionPlan:
    reference_index: int
    shifts: tuple
    usable: tuple = ()

    def __post_init__(self):
        if not self.usable:
            object.__setattr__(self, "usable", tuple(True for _ in self.shifts))

    def to_dict(self):
        return {"reference_index": self.reference_index,
                "shifts": [None if s is None else s.to_dict() for s in self.shifts],
                "usable": list(self.usable)}


def _normalize_constraint(constraint):
    if constraint in (None, "none"):
        return "none"
    c = str(constraint).replace("-only", "")
    if c not in CONSTRAINTS:
        raise ValueError(f"axis constraint must be one of none|x|y, got {constraint!r}")
    return c


def hann2d(shape) -> np.ndarray:
    h, w = shape
    return np.outer(np.hanning(h), np.hanning(w))


def cross_power(f, m, *, window: bool = False, eps: float = 1e-12):
    """Normalized cross-power spectrum ``F M* / |F M*|`` (near-zero bins set to 0)."""
    f = np.asarray(f, dtype=float)
    m = np.asarray(m, dtype=float)
    if f.shape != m.shape or f.ndim != 2:
        raise ValueError(f"images must be 2D with equal shapes, got {f.shape} and {m.shape}")
    if np.ptp(f) == 0 or np.ptp(m) == 0:
        raise DegenerateSpectrumError("image has zero variance")
    if window:
        win = hann2d(f.shape)
        f = (f - f.mean()) * win
        m = (m - m.mean()) * win
    prod = np.fft.fft2(f) * np.conj(np.fft.fft2(m))
    mag = np.abs(prod)
    small = mag < eps * mag.max()
    if small.mean() > 0.5:
        raise DegenerateSpectrumError("more than half of the cross-power spectrum is near zero")
    return np.where(small, 0.0, prod / np.where(small, 1.0, mag))


def _parabolic(cm, c0, cp):
    denom = cm - 2.0 * c0 + cp
    if denom >= 0:
        return 0.0
    off = 0.5 * (cm - cp) / denom
    return float(np.clip(off, -0.5, 0.5))


def _wrap(idx, n):
    return idx - n if idx > n // 2 else idx


def _upsampled_peak(C, iy, ix, constraint, factor):
    """Refine the integer peak by evaluating the band-limited correlation
    surface on a 1/factor grid over +-0.75 px (matrix-multiply DFT)."""
    h, w = C.shape
    n = int(np.ceil(1.5 * factor)) | 1
    off = (np.arange(n) - n // 2) / factor
    ys = np.array([float(iy)]) if constraint == "x" else iy + off
    xs = np.array([float(ix)]) if constraint == "y" else ix + off
    ky = np.fft.fftfreq(h) * h
    kx = np.fft.fftfreq(w) * w
    ker_y = np.exp(2j * np.pi * np.outer(ys, ky) / h)
    ker_x = np.exp(2j * np.pi * np.outer(kx, xs) / w)
    surf = np.real(ker_y @ C @ ker_x) / (h * w)
    j, i = np.unravel_index(int(np.argmax(surf)), surf.shape)
    return float(ys[j] - iy), float(xs[i] - ix), float(surf[j, i])


def phase_correlate(f, m, constraint: str = "none", *, window: bool = False,
                    subpixel: str | None = "upsample", upsample: int = 100) -> ShiftEstimate:
    """Translation of ``m`` relative to ``f`` by phase correlation.

    ``constraint`` ``'x'`` restricts the search to horizontal shifts (dy is
    exactly 0) and ``'y'`` to vertical ones.

    ``subpixel`` selects the peak refinement: ``'upsample'`` locates the
    maximum of the DFT-interpolated correlation surface to ``1/upsample``
    px; ``'parabolic'`` fits a parabola through the peak and its two
    neighbours per axis (cheaper, but biased by up to ~0.12 px because the
    peak of a pure shift is sinc-shaped); ``None`` keeps integer shifts.
    """
    constraint = _normalize_constraint(constraint)
    C = cross_power(f, m, window=window)
    c = np.real(np.fft.ifft2(C))
    h, w = c.shape
    if constraint == "x":
        iy, ix = 0, int(np.argmax(c[0]))
    elif constraint == "y":
        iy, ix = int(np.argmax(c[:, 0])), 0
    else:
        iy, ix = np.unravel_index(int(np.argmax(c)), c.shape)
    peak = float(c[iy, ix])

    ox = oy = 0.0
    if subpixel == "upsample":
        oy, ox, peak = _upsampled_peak(C, iy, ix, constraint, upsample)
    elif subpixel == "parabolic":
        if constraint != "y":
            ox = _parabolic(c[iy, (ix - 1) % w], peak, c[iy, (ix + 1) % w])
        if constraint != "x":
            oy = _parabolic(c[(iy - 1) % h, ix], peak, c[(iy + 1) % h, ix])
    elif subpixel is not None:
        raise ValueError("subpixel must be 'upsample', 'parabolic' or None")
    # the peak sits at (-dx, -dy)
    dx = -(_wrap(ix, w) + ox) if constraint != "y" else 0.0
    dy = -(_wrap(iy, h) + oy) if constraint != "x" else 0.0
    return ShiftEstimate(float(dx) + 0.0, float(dy) + 0.0, peak, constraint)


def plan_motion(frames: FrameSet, reference_index: int | None = None, constraint: str = "x",
                *, window: bool = True, subpixel: str | None = "upsample") -> MotionPlan:
    """Register every image against the reference image of the set."""
    n = len(frames)
    if n < 2:
        raise ValueError("need at least two images to plan motion")
    if reference_index is None:
        reference_index = -(-n // 2) - 1
    if not 0 <= reference_index < n:
        raise IndexError(f"reference index {reference_index} outside 0..{n - 1}")
    constraint = _normalize_constraint(constraint)
    ref = frames.images[reference_index]
    shifts, usable = [], []
    for i, img in enumerate(frames.images):
        if i == reference_index:
            shifts.append(ShiftEstimate(0.0, 0.0, 1.0, constraint))
            usable.append(True)
            continue
        try:
            shifts.append(phase_correlate(ref, img, constraint, window=window, subpixel=subpixel))
            usable.append(True)
        except DegenerateSpectrumError as exc:
            log.warning("image %d not registrable: %s", i, exc)
            shifts.append(None)
            usable.append(False)
    return MotionPlan(reference_index, tuple(shifts), tuple(usable))


def shift_image(img, dx: float, dy: float, interpolation: str = "bilinear"):
    """Sample ``img`` at ``(x + dx, y + dy)``; returns ``(shifted, inside)``."""
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    sx, sy = xx + dx, yy + dy
    if interpolation == "nearest":
        sx, sy = np.floor(sx + 0.5), np.floor(sy + 0.5)
        order = 0
    elif interpolation == "bilinear":
        order = 1
    else:
        raise ValueError("interpolation must be 'nearest' or 'bilinear'")
    tol = 1e-9
    inside = (sx >= -tol) & (sx <= w - 1 + tol) & (sy >= -tol) & (sy <= h - 1 + tol)
    out = map_coordinates(img, [np.clip(sy, 0, h - 1), np.clip(sx, 0, w - 1)], order=order,
                          mode="nearest")
    return out, inside


def align(frames: FrameSet, plan: MotionPlan, interpolation: str = "bilinear",
          *, round_shifts: bool = False) -> FrameSet:
    """Resample each image by its negative shift into the reference frame.

    Pixels that would be read from outside any source image are cleared in
    the returned frame set's ``valid`` mask.
    """
    if len(plan.shifts) != len(frames):
        raise ValueError("motion plan does not cover every image")
    valid = np.ones(frames.shape, dtype=bool) if frames.valid is None else frames.valid.copy()
    out = []
    for img, s, ok in zip(frames.images, plan.shifts, plan.usable):
        if not ok or s is None:
            raise ValueError("motion plan contains an unusable image")
        dx, dy = (round(s.dx), round(s.dy)) if round_shifts else (s.dx, s.dy)
        if dx == 0 and dy == 0:
            out.append(img)
            continue
        # image i is the reference moved by (dx, dy): ref(x) = img(x + d)
        shifted, inside = shift_image(img, dx, dy, interpolation)
        out.append(shifted)
        valid &= inside
    return replace(frames, images=np.stack(out), valid=valid)
