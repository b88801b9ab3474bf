"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import decode as dec
from . import evaluate as ev
from . import geometry as geo
from . import io
from . import patterns as pat
from . import scenes
from . import simulator as sim
from . import sync
from .pipeline import (EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, ConfigError, PipelineConfig,
                       StageError, ply_comments, run_reconstruct)

log = logging.getLogger("slscan")

FRAME_MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def _floats(text, n=None):
    try:
        vals = [float(x) for x in str(text).replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _vec3(text):
    return _floats(text, 3)


def _rect(text):
    return [int(v) for v in _floats(text, 4)]


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{what} file {path} is not valid JSON: {exc}") from None


def _load_rig(path) -> geo.StereoRig:
    data = _read_json(path, "calibration")
    try:
        return geo.StereoRig.from_dict(data)
    except geo.GeometryError as exc:
        raise ConfigError(f"calibration {path}: {exc}") from None


def _atomic_write(path, writer):
    """Write through a temporary file so a failure leaves no partial output."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _spec_from_args(a) -> pat.PatternSpec:
    return pat.PatternSpec(orientation=a.orientation, steps=a.steps, n_fringe=a.n_fringe,
                           width=a.proj_width, height=a.proj_height)


def _add_spec_args(p):
    p.add_argument("--orientation", choices=("vertical", "horizontal"), default="vertical")
    p.add_argument("--steps", type=int, default=3)
    p.add_argument("--n-fringe", type=int, default=16)
    p.add_argument("--proj-width", type=int, default=912)
    p.add_argument("--proj-height", type=int, default=1140)


def read_frames(frame_dir) -> tuple[dec.FrameSet, dict]:
    """Load a frame directory written by ``simulate`` (or any tool following
    the same manifest layout)."""
    frame_dir = Path(frame_dir)
    man = _read_json(frame_dir / FRAME_MANIFEST, "frame manifest")
    for key in ("frames", "pattern_spec"):
        if key not in man:
            raise io.FormatError(f"frame manifest field {key!r} is missing")
    imgs = [io.read_image(frame_dir / f) for f in man["frames"]]
    io.check_manifest_dims(man, imgs)
    scale = float(2 ** int(man.get("bits", 16)) - 1)
    stack = np.stack([im.astype(float) / scale for im in imgs])
    spec = pat.PatternSpec.from_dict(man["pattern_spec"])
    ts = man.get("timestamps")
    if ts is not None and len(ts) != len(imgs):
        raise io.FormatError(f"frame manifest field 'timestamps' has {len(ts)} entries for {len(imgs)} frames")
    return dec.FrameSet(stack, ts, spec), man


# -- subcommands ---------------------------------------------------------------

def cmd_gen_patterns(a):
    spec = _spec_from_args(a)
    seq = pat.generate(spec)
    ints = pat.to_integer(seq, a.bits)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = a.format
    names = []
    for i, img in enumerate(ints):
        tag = "hf" if i < spec.steps else "uf"
        name = f"pat_{tag}_{i % spec.steps}.{ext}"
        io.write_image(out / name, img)
        names.append(name)
    meta = {"pattern_spec": spec.to_dict(), "bits": a.bits, "files": names,
            "phase_sign": pat.PHASE_SIGN, "wavelength_px": spec.wavelength}
    (out / "patterns.json").write_text(json.dumps(meta, indent=2))
    print(f"wrote {len(names)} patterns to {out}")
    return EXIT_OK


def _scene_from_arg(a):
    if a.scene == "plane":
        return scenes.fronto_plane(a.distance)
    if a.scene == "cones":
        return scenes.cone_board(a.distance)
    return scenes.scene_from_dict(_read_json(a.scene, "scene"))


def cmd_simulate(a):
    if a.rig:
        rig = _load_rig(a.rig)
    else:
        dist = geo.Distortion(k1=a.k1)
        rig = geo.make_rig(camera_dist=dist, projector_dist=dist, working_distance=a.distance,
                           baseline=tuple(a.baseline))
    scene = _scene_from_arg(a)
    spec = _spec_from_args(a)
    if (spec.width, spec.height) != (rig.projector.intrinsics.width, rig.projector.intrinsics.height):
        raise ConfigError("pattern size does not match the projector resolution in the calibration")
    motion = None
    if a.motion is not None:
        motion = np.asarray(a.motion, dtype=float)
        if motion.size % 3:
            raise ConfigError("--motion needs 3 numbers per step")
        motion = motion.reshape(-1, 3)
        if len(motion) == 1:
            motion = motion[0]
    cfg = sim.RenderConfig(noise_sigma=a.noise, motion=motion, sampling=a.sampling, seed=a.seed,
                           reference_index=a.reference)
    frames, truth = sim.render_sequence(rig, scene, pat.generate(spec), cfg)

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    ints = np.floor(frames.images * 65535 + 0.5).astype(np.uint16)
    names = [f"frame_{i:02d}.pgm" for i in range(len(ints))]
    for name, img in zip(names, ints):
        io.write_pgm(out / name, img)
    depth = np.where(truth.lit, truth.depth, np.nan)
    io.write_raw(out / "depth.raw", depth, kind="ground_truth_depth_m")
    geo.save_rig(rig, out / "rig.json")
    h, w = frames.shape
    man = {"frames": names, "bits": 16, "width": w, "height": h, "count": len(names),
           "timestamps": frames.timestamps.tolist(), "offsets_m": cfg.offsets(len(names)).tolist(),
           "reference_index": cfg.reference(len(names)), "pattern_spec": spec.to_dict(),
           "rig_fingerprint": rig.fingerprint(), "seed": a.seed, "noise_sigma": a.noise,
           "scene": scene.to_dict() if not isinstance(scene, scenes.HeightField) else "heightfield",
           "depth": {"file": "depth.raw", "width": w, "height": h, "dtype": "float32",
                     "byte_order": "little"}}
    (out / FRAME_MANIFEST).write_text(json.dumps(man, indent=2))
    print(f"wrote {len(names)} frames, manifest and ground-truth depth to {out}")
    return EXIT_OK


def cmd_sync_check(a):
    man = _read_json(a.manifest, "sync manifest")
    try:
        seq_len = int(man["seq_len"])
        cfg = sync.SyncConfig(float(man.get("dt_img", 1 / 30)), man.get("tol_lower"), man.get("tol_upper"))
        if "triggers" in man:
            trigs = [sync.TriggerEvent(float(t["t_p"]), int(t["sequence_id"]), int(t["index"]))
                     for t in man["triggers"]]
        else:
            trigs = [tr for sid, tp in enumerate(man["sequences"])
                     for tr in sync.sequence_triggers(float(tp), sid, seq_len)]
        images = [float(t) for t in man["images"]]
    except KeyError as exc:
        raise ConfigError(f"sync manifest field {exc.args[0]!r} is missing") from None
    res = sync.assemble(trigs, images, seq_len, cfg)
    for sid, stamps in zip(res.sequence_ids, res.framesets):
        pos = [res.assignments[(sid, i)] for i in range(1, seq_len + 1)]
        print(f"set {sid}: images {pos} at t_c=" + ",".join(f"{t:.6f}" for t in stamps))
    for r in res.rejections:
        print(f"rejected: {r}")
    for c in res.conflicts:
        print(f"conflict: sequence {c.sequence_id} slot {c.index} kept image {c.chosen}, "
              f"dropped {c.rejected}")
    print(f"complete sets: {len(res.framesets)}; rejected: {len(res.rejections)}; "
          f"unmatched images: {len(res.unmatched)}")
    return EXIT_OK if res.framesets else EXIT_DATA


def cmd_decode(a):
    frames, _ = read_frames(a.frames)
    try:
        maps, coords = dec.decode_full(frames, threshold_B=a.threshold)
    except dec.DecodeError as exc:
        raise StageError("decode", exc) from exc
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_raw(out / "Phi.raw", np.where(maps.mask, maps.Phi, np.nan), kind="absolute_phase_rad")
    io.write_raw(out / "p.raw", np.where(coords.mask, coords.p, np.nan), kind=f"projector_{coords.axis}_px")
    io.write_raw(out / "B.raw", maps.B, kind="modulation")
    io.write_pgm(out / "mask.pgm", coords.mask.astype(np.uint8) * 255)
    print(f"decoded {int(coords.mask.sum())} of {coords.mask.size} pixels into {out}")
    return EXIT_OK


def cmd_reconstruct(a):
    rig = _load_rig(a.rig)
    frames, man = read_frames(a.frames)
    fp = man.get("rig_fingerprint")
    if fp and fp != rig.fingerprint():
        log.warning("frames were recorded with a different calibration (fingerprint %s)", fp)
    cfg = PipelineConfig(motion_comp=a.motion_comp, motion_axis=a.motion_axis, reference=a.reference,
                         threshold_B=a.threshold, projector_distortion=a.projector_distortion)
    rec = run_reconstruct(frames, rig, cfg)
    if a.debug_motion and rec.plan is not None:
        print(json.dumps({"motion_plan": rec.plan.to_dict()}, indent=2))
    comments = ply_comments(rig, frames.spec)
    _atomic_write(a.out, lambda p: io.write_ply(p, rec.cloud, binary=not a.ascii, comments=comments))
    for k, v in rec.report().items():
        print(f"{k}: {v}")
    print(f"wrote {len(rec.cloud)} points to {a.out}")
    return EXIT_OK


def _print_report(d: dict, prefix=""):
    for k, v in d.items():
        if isinstance(v, dict):
            _print_report(v, prefix + k + ".")
        elif isinstance(v, list) and v and isinstance(v[0], dict):
            for i, item in enumerate(v, start=1):
                _print_report(item, f"{prefix}{k}[{i}].")
        else:
            print(f"{prefix}{k}: {v}")


def cmd_evaluate(a):
    if a.mode == "precision":
        if not a.depth or len(a.depth) < 2:
            raise UsageError("precision mode needs at least two --depth maps")
        rep = ev.depth_std([io.read_raw(p) for p in a.depth])
        _print_report(rep.to_dict())
    elif a.mode == "esd":
        cloud, _ = io.read_ply(a.cloud)
        _print_report(ev.plane_esd(cloud, a.patch).to_dict())
    elif a.mode == "cones":
        cloud, _ = io.read_ply(a.cloud)
        if a.seeds:
            seeds = np.asarray(_read_json(a.seeds, "cone seed"), dtype=float)
            reference = None
        else:
            board = scenes.cone_board(a.distance)
            seeds = np.array([c.apex for c in board.cones])
            reference = board.apex_distances()
        rep = ev.fit_cones(cloud, seeds, a.radius, reference=reference)
        _print_report(rep.to_dict())
    else:
        depth = io.read_raw(a.depth[0]) if a.depth else None
        if depth is None:
            raise UsageError("cross-section mode needs --depth")
        line = a.row if a.segment is None else ((a.segment[0], a.segment[1]), (a.segment[2], a.segment[3]))
        if line is None:
            raise UsageError("cross-section mode needs --row or --segment")
        prof = ev.cross_section(depth, line)
        print(f"samples: {len(prof)}")
        print(f"ripple_mm: {ev.ripple_amplitude(prof)}")
        if a.csv:
            idx = np.arange(len(prof))
            np.savetxt(a.csv, np.column_stack([idx, prof]), delimiter=",", header="sample,depth_mm",
                       comments="")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slscan", description="Phase-shifting structured-light toolkit")
    ap.add_argument("--config", help="JSON file with option defaults (flat or per subcommand)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-patterns", help="write the 2N fringe images")
    _add_spec_args(p)
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.add_argument("--format", choices=("pgm", "png"), default="pgm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_patterns)

    p = sub.add_parser("simulate", help="render a frame set of a synthetic scene")
    _add_spec_args(p)
    p.add_argument("--rig", help="calibration JSON; a default rig is generated when omitted")
    p.add_argument("--scene", default="plane", help="'plane', 'cones' or a scene JSON file")
    p.add_argument("--distance", type=float, default=0.5)
    p.add_argument("--baseline", type=_vec3, default=[0.1, 0.0, 0.0])
    p.add_argument("--k1", type=float, default=0.0, help="radial distortion of the generated rig")
    p.add_argument("--noise", type=float, default=0.0, help="intensity noise sigma")
    p.add_argument("--motion", type=_floats, default=None,
                   help="sensor step per frame in meters: 'dx,dy,dz' or one triple per gap")
    p.add_argument("--reference", type=int, default=None)
    p.add_argument("--sampling", choices=("bilinear", "analytic"), default="analytic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sync-check", help="match trigger and image timestamps")
    p.add_argument("manifest")
    p.set_defaults(func=cmd_sync_check)

    p = sub.add_parser("decode", help="decode a frame set into phase maps")
    p.add_argument("--frames", required=True)
    p.add_argument("--threshold", type=float, default=dec.DEFAULT_THRESHOLD)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("reconstruct", help="frame set to point cloud")
    p.add_argument("--frames", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ascii", action="store_true")
    p.add_argument("--motion-comp", action="store_true")
    p.add_argument("--motion-axis", choices=("x", "y", "none"), default="x")
    p.add_argument("--reference", type=int, default=None)
    p.add_argument("--debug-motion", action="store_true")
    p.add_argument("--threshold", type=float, default=dec.DEFAULT_THRESHOLD)
    p.add_argument("--projector-distortion", choices=("none", "iterative"), default="iterative")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="scan quality metrics")
    p.add_argument("mode", choices=("precision", "esd", "cones", "cross-section"))
    p.add_argument("--depth", nargs="+", help="depth maps (float32 raw with manifest)")
    p.add_argument("--cloud", help="PLY point cloud")
    p.add_argument("--patch", type=_rect, default=None, help="u0,v0,u1,v1 pixel rectangle")
    p.add_argument("--seeds", help="JSON list of approximate apex positions")
    p.add_argument("--distance", type=float, default=0.5, help="cone board distance (no --seeds)")
    p.add_argument("--radius", type=float, default=0.02)
    p.add_argument("--row", type=int, default=None)
    p.add_argument("--segment", type=_floats, default=None, help="u0,v0,u1,v1")
    p.add_argument("--csv")
    p.set_defaults(func=cmd_evaluate)
    return ap


def _apply_config(ap, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    data = _read_json(known.config, "configuration")
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    sub = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction))
    for name, parser in sub.choices.items():
        dests = {a.dest for a in parser._actions}
        section = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
        section.update({k.replace("-", "_"): v for k, v in data.get(name, {}).items()})
        parser.set_defaults(**{k: v for k, v in section.items() if k in dests})
        # required options satisfied by the config file
        for act in parser._actions:
            if act.dest in section and act.required:
                act.required = False


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        a = ap.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except (ConfigError, UsageError, ValueError) as exc:
        if isinstance(exc, io.FormatError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ArithmeticError, np.linalg.LinAlgError, ev.FitError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, sim.EmptyVisibilityError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
