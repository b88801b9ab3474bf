"""Phase-shifting fringe pattern sequences.

A sequence holds ``2N`` projector images: ``N`` high-frequency fringes
followed by ``N`` unit-frequency fringes. Image ``i`` (0-based) of a set is::

    0.5 + 0.5 * cos(2*pi*n*p/extent + PHASE_SIGN * 2*pi*i/N)

where ``p`` is the projector pixel coordinate along the propagation axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

# Sign of the per-step phase shift. Decoding relies on the same constant.
PHASE_SIGN = -1.0

ORIENTATIONS = ("vertical", "horizontal")


@dataclass(frozen=True)
class PatternSpec:
    """Fringe layout.

    ``vertical`` fringes propagate along projector x and encode ``u_p``;
    ``horizontal`` fringes propagate along y and encode ``v_p``.
    """

    orientation: str = "vertical"
    steps: int = 3
    n_fringe: int = 16
    width: int = 912
    height: int = 1140

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}, got {self.orientation!r}")
        if self.steps < 3:
            raise ValueError(f"need at least 3 phase steps, got {self.steps}")
        if self.n_fringe < 1:
            raise ValueError(f"n_fringe must be >= 1, got {self.n_fringe}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("projector resolution must be positive")

    @property
    def extent(self) -> int:
        return self.width if self.orientation == "vertical" else self.height

    @property
    def wavelength(self) -> float:
        """Fringe period of the high-frequency set, in projector pixels."""
        return self.extent / self.n_fringe

    @property
    def axis(self) -> str:
        return "u" if self.orientation == "vertical" else "v"

    @property
    def n_images(self) -> int:
        return 2 * self.steps

    def shift(self, i: int) -> float:
        """Phase shift carried by step ``i`` (0-based)."""
        return PHASE_SIGN * 2.0 * np.pi * (i % self.steps) / self.steps

    def fringes_of(self, index: int) -> int:
        """Fringe count for image ``index`` of the full 2N sequence."""
        return self.n_fringe if index < self.steps else 1

    def to_dict(self) -> dict:
        return {"orientation": self.orientation, "steps": self.steps, "n_fringe": self.n_fringe,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "PatternSpec":
        return cls(orientation=d.get("orientation", "vertical"), steps=int(d.get("steps", 3)),
                   n_fringe=int(d.get("n_fringe", 16)), width=int(d.get("width", 912)),
                   height=int(d.get("height", 1140)))


def fringe_value(spec: PatternSpec, index: int, p) -> np.ndarray:
    """Analytic pattern value of image ``index`` at projector coordinate ``p``."""
    n = spec.fringes_of(index)
    phase = 2.0 * np.pi * n * np.asarray(p, dtype=float) / spec.extent
    return 0.5 + 0.5 * np.cos(phase + spec.shift(index))


@dataclass(frozen=True, eq=False)
class PatternSequence:
    spec: PatternSpec
    images: np.ndarray = field(repr=False)
    bits: int | None = None

    def __len__(self):
        return len(self.images)

    @property
    def high(self) -> np.ndarray:
        return self.images[: self.spec.steps]

    @property
    def unit(self) -> np.ndarray:
        return self.images[self.spec.steps:]

    def analytic(self, index: int, u, v) -> np.ndarray:
        """Unquantized value of image ``index`` at projector pixel (u, v)."""
        p = u if self.spec.orientation == "vertical" else v
        return fringe_value(self.spec, index, p)


def generate(spec: PatternSpec) -> PatternSequence:
    """Render the 2N float patterns at projector resolution."""
    p = np.arange(spec.extent, dtype=float)
    rows = np.stack([fringe_value(spec, i, p) for i in range(spec.n_images)])
    if spec.orientation == "vertical":
        images = np.broadcast_to(rows[:, None, :], (spec.n_images, spec.height, spec.width))
    else:
        images = np.broadcast_to(rows[:, :, None], (spec.n_images, spec.height, spec.width))
    images = np.ascontiguousarray(images)
    images.setflags(write=False)
    return PatternSequence(spec, images)


def quantize_values(values, bits: int) -> np.ndarray:
    if bits not in (8, 10, 12, 16):
        raise ValueError(f"bits must be one of 8, 10, 12, 16; got {bits}")
    levels = 2 ** bits - 1
    # round half up, not numpy's half-to-even
    return np.floor(np.asarray(values, dtype=float) * levels + 0.5) / levels


def quantize(seq: PatternSequence, bits: int = 8) -> PatternSequence:
    images = quantize_values(seq.images, bits)
    images.setflags(write=False)
    return replace(seq, images=images, bits=bits)


def to_integer(seq: PatternSequence, bits: int = 8) -> np.ndarray:
    """Integer images ready for export (uint8 or uint16)."""
    levels = 2 ** bits - 1
    dtype = np.uint8 if bits <= 8 else np.uint16
    return np.floor(np.asarray(seq.images) * levels + 0.5).astype(dtype)
