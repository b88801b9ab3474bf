"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed after the run
(``pytest tests/test_acceptance.py``).
"""
import gc
import time

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.ndimage import binary_erosion, gaussian_filter

from slscan import cli
from slscan import decode as dec
from slscan import evaluate as ev
from slscan import geometry as geo
from slscan import io
from slscan import patterns as pat
from slscan import register as reg
from slscan import scenes
from slscan import simulator as sim
from slscan import sync
from slscan import triangulate as tri

from conftest import ACCEPTANCE
from test_sync import streams


def record(num, ok, detail):
    ACCEPTANCE[num] = (bool(ok), detail)
    assert ok, f"criterion {num}: {detail}"


# 1 -------------------------------------------------------------------------------

def test_criterion_1_noiseless_plane():
    t0 = time.perf_counter()
    d = geo.Distortion(k1=0.05)
    rig = geo.make_rig(camera_size=(640, 480), camera_dist=d, projector_dist=d)
    spec = pat.PatternSpec(n_fringe=16)
    frames, truth = sim.render_sequence(rig, scenes.fronto_plane(0.5), pat.generate(spec),
                                        sim.RenderConfig(sampling="analytic"))
    _, coords = dec.decode_full(frames)
    cloud = tri.triangulate_map(coords, rig)
    elapsed = time.perf_counter() - t0
    rms = np.sqrt(np.mean((cloud.points[:, 2] - 0.5) ** 2))
    lit = truth.lit
    produced = np.zeros(lit.shape, bool)
    produced[cloud.pixels[:, 1].astype(int), cloud.pixels[:, 0].astype(int)] = True
    frac = produced[lit].mean()
    ok = rms < 1e-4 and frac >= 0.999 and elapsed < 30
    record(1, ok, f"rms={rms * 1e3:.2e} mm (<0.1), valid={frac:.5f} (>=0.999), runtime={elapsed:.1f} s (<30)")


# 2 -------------------------------------------------------------------------------

@pytest.fixture(scope="module")
def motion_setup():
    # A textured bump seen against nothing: horizontal fringes with a vertical
    # baseline, so sideways motion does not change the projector coordinate.
    rig = geo.make_rig(baseline=(0.0, 0.1, 0.0))
    spec = pat.PatternSpec("horizontal", 3, 16, 912, 1140)
    sp = 1e-3
    x = (np.arange(201) - 100) * sp
    X, Y = np.meshgrid(x, x)
    H = 0.004 * np.sin(2 * np.pi * X / 0.05) + 0.01 * np.exp(-(X ** 2 + Y ** 2) / (2 * 0.06 ** 2))
    surf = scenes.HeightField(origin=(x[0], -x[0], 0.5), normal=(0, 0, -1), axis_u=(1, 0, 0),
                              heights=H, spacing=sp)
    return rig, spec, surf, tri.build_table(rig, "v")


def _motion_case(setup, steps_px):
    rig, spec, surf, table = setup
    seq = pat.generate(spec)
    px = 0.5 / rig.camera.intrinsics.fx  # meters per pixel at the working distance
    motion = np.outer(steps_px, [px, 0.0, 0.0])
    moving, truth = sim.render_sequence(rig, surf, seq, sim.RenderConfig(sampling="analytic", motion=motion))
    static, _ = sim.render_sequence(rig, surf.translate(-truth.offset), seq, sim.RenderConfig(sampling="analytic"))

    def depth(frames):
        _, coords = dec.decode_full(frames)
        return tri.triangulate_map(coords, rig, table).depth_map(frames.shape)

    plan = reg.plan_motion(moving, constraint="x")
    d_static, d_raw, d_comp = depth(static), depth(moving), depth(reg.align(moving, plan))
    interior = binary_erosion(truth.lit, iterations=15)
    ripples, rms = [], []
    for row in (200, 240, 280):
        ok = interior[row] & np.isfinite(d_static[row]) & np.isfinite(d_raw[row]) & np.isfinite(d_comp[row])
        ref = ev.cross_section(d_static, row)[ok]
        ripples.append(ev.ripple_amplitude(ev.cross_section(d_raw, row)[ok], reference=ref))
        rms.append(np.sqrt(np.mean((ev.cross_section(d_comp, row)[ok] - ref) ** 2)))
    cum = np.concatenate([[0.0], np.cumsum(steps_px)])
    expect = -(cum - cum[plan.reference_index])
    shift_err = np.max(np.abs(np.array([s.dx for s in plan.shifts]) - expect))
    return min(ripples), max(rms), shift_err


def test_criterion_2_motion_compensation(motion_setup):
    results = {}
    for name, steps in (("uniform", [2.0] * 5), ("non-uniform", np.diff([0, 1, 3, 3, 4, 6]))):
        results[name] = _motion_case(motion_setup, np.asarray(steps, float))
    ok = all(rip > 0.5 and rms < 0.1 * rip and se < 0.3 for rip, rms, se in results.values())
    detail = "; ".join(f"{k}: ripple={rip:.2f} mm (>0.5), comp rms={rms:.3f} mm, ratio={rms / rip:.3f} (<0.1), "
                       f"shift err={se:.2f} px" for k, (rip, rms, se) in results.items())
    record(2, ok, detail)


# 3 -------------------------------------------------------------------------------

def _fourier_shift(img, dx, dy):
    h, w = img.shape
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    return np.real(np.fft.ifft2(np.fft.fft2(img) * np.exp(-2j * np.pi * (kx * dx + ky * dy))))


def test_criterion_3_phase_correlation():
    rng = np.random.default_rng(2024)
    exact = 0
    for _ in range(100):
        f = gaussian_filter(rng.normal(size=(128, 160)), 1.0, mode="wrap")
        dy, dx = rng.integers(-60, 61, 2)
        s = reg.phase_correlate(f, np.roll(f, (dy, dx), axis=(0, 1)))
        exact += (s.dx == dx and s.dy == dy)
    worst = 0.0
    for _ in range(20):
        f = gaussian_filter(rng.normal(size=(128, 160)), 1.0, mode="wrap")
        dx, dy = rng.uniform(0.1, 4.9, 2) * rng.choice([-1, 1], 2)
        s = reg.phase_correlate(f, _fourier_shift(f, dx, dy))
        worst = max(worst, abs(s.dx - dx), abs(s.dy - dy))
    record(3, exact == 100 and worst < 0.1, f"integer exact {exact}/100, sub-pixel max error {worst:.4f} px (<0.1)")


# 4 -------------------------------------------------------------------------------

def _tpu_failures(rng, frac, n=100_000):
    nf = rng.integers(4, 33, n)
    Phi = rng.uniform(0, 2 * np.pi * nf)
    phi_h = np.mod(Phi, 2 * np.pi)
    k_true = np.floor(Phi / (2 * np.pi)).astype(int)
    phi_l = Phi / nf + rng.uniform(-1, 1, n) * frac * np.pi / nf
    bad = 0
    for m in np.unique(nf):
        sel = nf == m
        k, _, ok = dec.unwrap_temporal(phi_h[sel], phi_l[sel], int(m))
        bad += int(np.sum((k != k_true[sel]) | ~ok))
    return bad


def test_criterion_4_tpu_bound():
    rng = np.random.default_rng(4)
    inside = _tpu_failures(rng, 0.8 * (1 - 1e-12))
    outside = _tpu_failures(rng, 1.2)
    record(4, inside == 0 and outside > 0, f"failures at 0.8*pi/n: {inside} (=0), at 1.2*pi/n: {outside} (>0)")


# 5 -------------------------------------------------------------------------------

def test_criterion_5_table_equivalence():
    rng = np.random.default_rng(5)
    d = geo.Distortion(k1=0.05, k2=-0.01)
    rig = geo.make_rig(camera_dist=d, projector_dist=d)
    table = tri.build_table(rig, "u")
    h, w = table.shape
    n = 100_000
    rows, cols = rng.integers(0, h, n), rng.integers(0, w, n)
    und = table.undistorted[rows, cols]
    z = rng.uniform(0.3, 0.9, n)
    ray = np.c_[(und[:, 0] - rig.camera.intrinsics.cx) / rig.camera.intrinsics.fx,
                (und[:, 1] - rig.camera.intrinsics.cy) / rig.camera.intrinsics.fy, np.ones(n)]
    Mp = geo.projection_matrix(rig, "projector")
    hp = np.c_[ray * z[:, None], np.ones(n)] @ Mp.T
    p = hp[:, 0] / hp[:, 2]

    direct = tri.triangulate_pixel(rig, und[:, 0], und[:, 1], p)
    fast, ok = table.evaluate(rows, cols, p)
    dev = np.max(np.abs(fast - direct))

    # interleaved repeats with the collector paused; keep the best of each
    t_direct = t_table = np.inf
    gc.collect()
    gc.disable()
    try:
        for _ in range(15):
            t0 = time.perf_counter()
            tri.triangulate_pixel(rig, und[:, 0], und[:, 1], p)
            t1 = time.perf_counter()
            table.evaluate(rows, cols, p)
            t2 = time.perf_counter()
            t_direct, t_table = min(t_direct, t1 - t0), min(t_table, t2 - t1)
    finally:
        gc.enable()
    speedup = t_direct / t_table
    record(5, ok.all() and dev < 1e-9 and speedup >= 5,
           f"max deviation {dev:.2e} m (<1e-9), speedup {speedup:.1f}x (>=5)")


# 6 -------------------------------------------------------------------------------

def test_criterion_6_metric_oracles():
    rng = np.random.default_rng(6)
    pts = np.c_[rng.uniform(-0.05, 0.05, (100_000, 2)), np.full(100_000, 0.5)]
    esd0 = ev.plane_esd(tri.PointCloud(pts)).esd
    noisy = pts.copy()
    noisy[:, 2] += rng.normal(0, 5e-5, len(pts))
    esd1 = ev.plane_esd(tri.PointCloud(noisy)).esd

    rig = geo.make_rig()
    board = scenes.cone_board(0.5)
    frames, _ = sim.render_sequence(rig, board, pat.generate(pat.PatternSpec()), sim.RenderConfig(sampling="analytic"))
    _, coords = dec.decode_full(frames)
    cloud = tri.triangulate_map(coords, rig)
    seeds = np.array([c.apex for c in board.cones]) + rng.uniform(-2e-3, 2e-3, (6, 3))
    rep = ev.fit_cones(cloud, seeds, radius=0.8 * 0.025, reference=board.apex_distances())
    cone_err = np.max(np.abs(rep.errors)) * 1e3
    ok = esd0 < 1e-9 and abs(esd1 - 0.05) < 0.05 * 0.05 and cone_err < 0.1
    record(6, ok, f"exact ESD {esd0:.1e} mm, noisy ESD {esd1:.4f} mm (0.05 +-5%), "
                  f"cone distance max error {cone_err:.2e} mm (<0.1)")


# 7 -------------------------------------------------------------------------------

def test_criterion_7_sync():
    checked = []

    @settings(max_examples=1000, deadline=None, database=None)
    @given(streams())
    def run(stream):
        triggers, images, seq_len, cfg = stream
        res = sync.assemble(triggers, images, seq_len, cfg)
        ref = sync.brute_force_assign(triggers, images, cfg)
        by_seq = {}
        for t in triggers:
            by_seq.setdefault(t.sequence_id, set()).add(t.index)
        complete = sorted(s for s, idx in by_seq.items()
                          if idx == set(range(1, seq_len + 1)) and all((s, i) in ref for i in idx))
        assert sorted(res.sequence_ids) == complete
        assert all(ref[key] == pos for key, pos in res.assignments.items())
        used = list(res.assignments.values())
        assert len(used) == len(set(used))
        assert all(len(fs) == seq_len for fs in res.framesets)
        checked.append(len(res.framesets))

    try:
        run()
        ok, why = True, ""
    except AssertionError as exc:
        ok, why = False, f" counterexample: {exc}"
    record(7, ok, f"{len(checked)} random streams ({sum(checked)} frame sets) agree with the "
                  f"brute-force matcher; injective, complete-only{why}")


# 8 -------------------------------------------------------------------------------

def test_criterion_8_precision_behavior():
    rig = geo.make_rig(camera_size=(320, 240), camera_focal=450.0)
    spec = pat.PatternSpec()
    seq = pat.generate(spec)
    table = tri.build_table(rig, "u")
    plane = scenes.fronto_plane(0.5)
    sigmas = [0.002, 0.006, 0.018]  # 3x apart: 10-scan sample stds rarely invert
    maps, means = [], []
    for j, s in enumerate(sigmas):
        depths = []
        for k in range(10):
            fs, _ = sim.render_sequence(rig, plane, seq, sim.RenderConfig(noise_sigma=s, seed=1000 * j + k))
            _, coords = dec.decode_full(fs)
            depths.append(tri.triangulate_map(coords, rig, table).depth_map(coords.shape))
        rep = ev.depth_std(depths)
        maps.append(rep.std_map)
        means.append(rep.mean)
    means = np.array(means)
    slope, icpt = np.polyfit(sigmas, means, 1)
    pred = slope * np.array(sigmas) + icpt
    r2 = 1 - np.sum((means - pred) ** 2) / np.sum((means - means.mean()) ** 2)
    valid = np.all([np.isfinite(m) for m in maps], axis=0)
    per_pixel = np.mean((maps[1][valid] > maps[0][valid]) & (maps[2][valid] > maps[1][valid]))
    monotone = bool(np.all(np.diff(means) > 0))
    record(8, monotone and per_pixel > 0.99 and r2 > 0.99,
           f"mean std {np.round(means, 4).tolist()} mm, monotone={monotone}, "
           f"per-pixel monotone fraction {per_pixel:.4f}, R^2={r2:.5f} (>0.99)")


# 9 -------------------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    def run(tag, seed):
        d = tmp_path / tag
        assert cli.main(["simulate", "--noise", "0.01", "--seed", str(seed), "--k1", "0.05",
                         "--out", str(d)]) == 0
        assert cli.main(["reconstruct", "--frames", str(d), "--rig", str(d / "rig.json"),
                         "--out", str(tmp_path / f"{tag}.ply")]) == 0
        return (tmp_path / f"{tag}.ply").read_bytes()

    a, b, c = run("a", 7), run("b", 7), run("c", 8)
    same = a == b
    record(9, same and a != c and a.startswith(b"ply\nformat binary_little_endian"),
           f"same seed byte-identical={same} ({len(a)} bytes), different seed differs={a != c}")
