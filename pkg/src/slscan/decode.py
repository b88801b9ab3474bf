"""Fringe decoding: wrapped phase, temporal phase unwrapping, projector coordinates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .patterns import PHASE_SIGN, PatternSpec

TWO_PI = 2.0 * np.pi
DEFAULT_THRESHOLD = 0.02


class DecodeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FrameSet:
    """Camera images belonging to one projected sequence.

    ``valid`` optionally marks pixels that every image actually covers
    (set by motion alignment); ``None`` means all pixels.
    """

    images: np.ndarray = field(repr=False)
    timestamps: np.ndarray | None = None
    spec: PatternSpec | None = None
    valid: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        if images.ndim != 3:
            raise DecodeError(f"expected a stack of 2D images, got array of shape {images.shape}")
        object.__setattr__(self, "images", images)
        if self.timestamps is None:
            object.__setattr__(self, "timestamps", np.zeros(len(images)))
        else:
            ts = np.asarray(self.timestamps, dtype=float)
            if ts.shape != (len(images),):
                raise DecodeError("need one timestamp per image")
            object.__setattr__(self, "timestamps", ts)

    def __len__(self):
        return len(self.images)

    @property
    def shape(self) -> tuple[int, int]:
        return self.images.shape[1:]


@dataclass(frozen=True, eq=False)
class PhaseMaps:
    phi_h: np.ndarray
    phi_l: np.ndarray
    A: np.ndarray
    B: np.ndarray
    k: np.ndarray
    Phi: np.ndarray
    mask: np.ndarray
    B_l: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ProjectorCoordMap:
    p: np.ndarray
    axis: str
    mask: np.ndarray

    @property
    def shape(self):
        return self.p.shape


def _shifts(n: int) -> np.ndarray:
    return PHASE_SIGN * TWO_PI * np.arange(n) / n


def wrapped_phase(images, steps: int | None = None):
    """Wrapped phase, shading and modulation from ``N`` phase-shifted images.

    Returns ``(phi, A, B)`` with ``phi`` in ``[0, 2*pi)``. The three-step case
    uses the closed form ``atan2(sqrt(3)(I2 - I3), 2 I1 - I2 - I3)``; larger N
    use the least-squares estimator over uniformly spaced shifts.
    """
    images = np.asarray(images, dtype=float)
    n = len(images) if steps is None else steps
    if n < 3:
        raise DecodeError(f"need at least 3 phase steps, got {n}")
    if len(images) != n:
        raise DecodeError(f"expected {n} images, got {len(images)}")
    if images.ndim > 1 and any(im.shape != images[0].shape for im in images):
        raise DecodeError("image dimensions differ")

    A = images.mean(axis=0)
    if n == 3:
        i1, i2, i3 = images
        y = np.sqrt(3.0) * (i2 - i3)
        x = 2.0 * i1 - i2 - i3
        phi = np.arctan2(y, x)
        # |(x, y)| = 3B for the three-step combination
        B = np.hypot(x, y) / 3.0
    else:
        phi, B = _lsq_phase(images)
    phi = np.where(phi < 0, phi + TWO_PI, phi)
    # arctan2 can return exactly pi for y = -0.0; keep the half-open range.
    phi = np.where(phi >= TWO_PI, phi - TWO_PI, phi)
    return phi, A, B


def _lsq_phase(images):
    n = len(images)
    delta = _shifts(n)
    # I_i = A + B cos(phi + delta_i)  =>  sum I sin(delta) = -B N/2 sin(phi)
    s = np.tensordot(-np.sin(delta), images, axes=1)
    c = np.tensordot(np.cos(delta), images, axes=1)
    return np.arctan2(s, c), (2.0 / n) * np.hypot(s, c)


def unwrap_temporal(phi_h, phi_l, n_fringe: int):
    """Fringe order and absolute phase by temporal phase unwrapping.

    Returns ``(k, Phi, in_range)``. ``k`` is clamped to ``[0, n_fringe - 1]``;
    ``in_range`` is False wherever clamping was needed.
    """
    if n_fringe < 1:
        raise DecodeError("n_fringe must be >= 1")
    phi_h = np.asarray(phi_h, dtype=float)
    phi_l = np.asarray(phi_l, dtype=float)
    if phi_h.shape != phi_l.shape:
        raise DecodeError("phase maps differ in shape")
    k_raw = np.round((n_fringe * phi_l - phi_h) / TWO_PI)
    in_range = (k_raw >= 0) & (k_raw <= n_fringe - 1)
    k = np.clip(k_raw, 0, n_fringe - 1).astype(np.int32)
    Phi = phi_h + TWO_PI * k
    return k, Phi, in_range


def to_projector_coord(Phi, spec: PatternSpec, mask=None) -> ProjectorCoordMap:
    Phi = np.asarray(Phi, dtype=float)
    p = spec.wavelength / TWO_PI * Phi
    ok = np.isfinite(p) & (p >= 0) & (p < spec.extent)
    if mask is not None:
        ok &= mask
    return ProjectorCoordMap(p=p, axis=spec.axis, mask=ok)


def decode_full(frames: FrameSet, spec: PatternSpec | None = None,
                threshold_B: float = DEFAULT_THRESHOLD):
    """Decode a complete 2N frame set into phase maps and projector coordinates."""
    spec = spec or frames.spec
    if spec is None:
        raise DecodeError("frame set carries no pattern spec")
    n = spec.steps
    if len(frames) != 2 * n:
        raise DecodeError(f"incomplete frame set: expected {2 * n} images, got {len(frames)}")
    phi_h, A, B = wrapped_phase(frames.images[:n])
    phi_l, _, B_l = wrapped_phase(frames.images[n:])
    k, Phi, in_range = unwrap_temporal(phi_h, phi_l, spec.n_fringe)
    mask = (B >= threshold_B) & (B_l >= threshold_B) & in_range
    if frames.valid is not None:
        mask &= frames.valid
    coords = to_projector_coord(Phi, spec, mask)
    maps = PhaseMaps(phi_h=phi_h, phi_l=phi_l, A=A, B=B, k=k, Phi=Phi, mask=coords.mask, B_l=B_l)
    return maps, coords
