"""Staged in-process reconstruction: motion compensation, decode, triangulate.

Each stage receives the previous stage's immutable arrays by reference.
Failures are re-raised as :class:`StageError` naming the stage, together
with an exit-code class (data or numerical) for the command-line tool.
"""
from __future__ import annotations

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import decode as dec
from . import geometry as geo
from . import register as reg
from . import triangulate as tri
from .patterns import PatternSpec

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_NUMERIC = (ArithmeticError, np.linalg.LinAlgError, reg.DegenerateSpectrumError, geo.UndistortError)


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = EXIT_NUMERIC if isinstance(cause, _NUMERIC) else EXIT_DATA


@dataclass(frozen=True)
class PipelineConfig:
    spec: PatternSpec | None = None
    motion_comp: bool = False
    motion_axis: str = "x"
    reference: int | None = None
    threshold_B: float = dec.DEFAULT_THRESHOLD
    projector_distortion: str = "iterative"
    interpolation: str = "bilinear"

    def __post_init__(self):
        if self.motion_axis not in ("x", "y", "none"):
            raise ConfigError(f"motion_axis must be x, y or none, got {self.motion_axis!r}")
        if self.projector_distortion not in ("none", "iterative"):
            raise ConfigError("projector_distortion must be 'none' or 'iterative'")
        if self.threshold_B < 0:
            raise ConfigError("threshold_B must be >= 0")


@dataclass
class Reconstruction:
    cloud: tri.PointCloud
    maps: dec.PhaseMaps
    coords: dec.ProjectorCoordMap
    plan: reg.MotionPlan | None
    timings: dict = field(default_factory=dict)
    stats: tri.TriangulationStats = field(default_factory=tri.TriangulationStats)

    def throughput(self, stage: str) -> float:
        """Mpixel/s of a timed stage over the full image."""
        h, w = self.coords.shape
        dt = self.timings.get(stage, 0.0)
        return h * w / dt / 1e6 if dt > 0 else float("inf")

    def report(self) -> dict:
        out = {f"{k}_s": round(v, 6) for k, v in self.timings.items()}
        for st in ("decode", "triangulate"):
            if st in self.timings:
                out[f"{st}_mpix_per_s"] = round(self.throughput(st), 3)
        out.update(points=len(self.cloud), valid_pixels=int(self.coords.mask.sum()),
                   dropped=self.stats.dropped)
        return out


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with attribution
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


def run_reconstruct(frames: dec.FrameSet, rig: geo.StereoRig, cfg: PipelineConfig = PipelineConfig(),
                    table: tri.TriangulationTable | None = None) -> Reconstruction:
    timings: dict = {}
    spec = cfg.spec or frames.spec
    plan = None
    with _stage("config", timings):
        if spec is None:
            raise ConfigError("no pattern spec for this frame set")
        if len(frames) != spec.n_images:
            raise dec.DecodeError(f"frame set has {len(frames)} images, spec needs {spec.n_images}")
        if frames.shape != rig.camera.intrinsics.shape:
            raise dec.DecodeError(f"frames are {frames.shape}, camera is {rig.camera.intrinsics.shape}")
    if cfg.motion_comp:
        with _stage("motion", timings):
            plan = reg.plan_motion(frames, cfg.reference, cfg.motion_axis)
            if not all(plan.usable):
                bad = [i for i, ok in enumerate(plan.usable) if not ok]
                raise reg.DegenerateSpectrumError(f"images {bad} could not be registered")
            frames = reg.align(frames, plan, cfg.interpolation)
    with _stage("decode", timings):
        maps, coords = dec.decode_full(frames, spec, cfg.threshold_B)
    stats = tri.TriangulationStats()
    with _stage("table", timings):
        if table is None:
            table = tri.build_table(rig, coords.axis)
        else:
            table.check(rig, coords.axis)
    intensity = maps.A
    with _stage("triangulate", timings):
        cloud = tri.triangulate_map(coords, rig, table, projector_distortion=cfg.projector_distortion,
                                    intensity=intensity, stats=stats)
    rec = Reconstruction(cloud, maps, coords, plan, timings, stats)
    log.info("reconstruction: %s", rec.report())
    return rec


def ply_comments(rig: geo.StereoRig, spec: PatternSpec) -> list[str]:
    import json

    return [f"rig_fingerprint {rig.fingerprint()}",
            f"pattern_spec {json.dumps(spec.to_dict(), sort_keys=True)}"]
