import numpy as np
import pytest
from hypothesis import given, strategies as st

from slscan import decode as dec
from slscan import patterns as pat
from slscan import scenes
from slscan import simulator as sim

TWO_PI = 2 * np.pi


def circ(a, b):
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


def forward(phi, A, B, n):
    return np.stack([A + B * np.cos(phi + pat.PHASE_SIGN * TWO_PI * i / n) for i in range(n)])


def test_symmetric_peak():
    phi, A, B = dec.wrapped_phase(np.array([0.6, 0.3, 0.3]))
    assert phi == pytest.approx(0.0, abs=1e-12)
    assert A == pytest.approx(0.4) and B == pytest.approx(0.2)


def test_two_thirds_pi():
    phi, A, B = dec.wrapped_phase(np.array([0.3, 0.6, 0.3]))
    assert phi == pytest.approx(2 * np.pi / 3)
    assert np.allclose(forward(phi, 0.4, 0.2, 3), [0.3, 0.6, 0.3])


def test_constant_input_masked():
    frames = dec.FrameSet(np.full((6, 4, 5), 0.37), spec=pat.PatternSpec(width=16, height=16, n_fringe=4))
    maps, coords = dec.decode_full(frames)
    assert np.all(maps.B < 1e-12) and not coords.mask.any()


def test_too_few_steps_and_mismatch():
    with pytest.raises(dec.DecodeError):
        dec.wrapped_phase(np.zeros((2, 3, 3)))
    with pytest.raises(dec.DecodeError):
        dec.wrapped_phase(np.zeros((4, 3, 3)), steps=3)


def test_unwrap_zero():
    k, Phi, ok = dec.unwrap_temporal(0.0, 0.0, 8)
    assert k == 0 and Phi == 0 and ok


def test_unwrap_example():
    phi_l = TWO_PI * 3.25 / 8
    phi_h = TWO_PI * 0.25
    k, Phi, ok = dec.unwrap_temporal(phi_h, phi_l, 8)
    assert k == 3 and ok
    assert Phi == pytest.approx(TWO_PI * 0.25 + 6 * np.pi)
    k2, _, _ = dec.unwrap_temporal(phi_h, phi_l + 0.3 * np.pi / 8, 8)
    assert k2 == 3


def test_unwrap_out_of_range_flagged():
    # n * phi_l near 2 pi with phi_h near 0 rounds to k = n
    k, _, ok = dec.unwrap_temporal(0.01, TWO_PI - 1e-3, 8)
    assert not ok and k == 7


def test_projector_coord_examples():
    spec = pat.PatternSpec(n_fringe=16, width=912)
    c = dec.to_projector_coord(np.array([TWO_PI, 0.0, TWO_PI * 16 - 1e-9]), spec)
    assert c.p[0] == pytest.approx(57.0)
    assert c.p[1] == 0.0
    assert c.p[2] < 912 and c.mask.all()
    assert not dec.to_projector_coord(np.array([TWO_PI * 16]), spec).mask[0]


def test_incomplete_frameset():
    frames = dec.FrameSet(np.zeros((5, 4, 4)), spec=pat.PatternSpec(n_fringe=4, width=8, height=8))
    with pytest.raises(dec.DecodeError, match="incomplete"):
        dec.decode_full(frames)


def test_dark_frames_empty_mask():
    frames = dec.FrameSet(np.zeros((6, 8, 8)), spec=pat.PatternSpec(n_fringe=4, width=8, height=8))
    _, coords = dec.decode_full(frames)
    assert not coords.mask.any()


def test_noiseless_plane_matches_truth(plane_scan, spec):
    frames, truth = plane_scan
    maps, coords = dec.decode_full(frames)
    err = np.abs(coords.p - truth.projector_coord(spec.axis))[coords.mask]
    assert coords.mask[truth.lit].mean() >= 0.999
    assert np.mean(err < 1e-3) >= 0.999
    # unwrap consistency
    assert np.max(circ(np.mod(maps.Phi, TWO_PI), maps.phi_h)[coords.mask]) < 1e-12


def test_noisy_plane_valid_fraction(rig, spec):
    # frozen regression: fraction is ~1.0 at this noise level
    cfg = sim.RenderConfig(noise_sigma=0.005, seed=11)
    frames, truth = sim.render_sequence(rig, scenes.fronto_plane(0.5), pat.generate(spec), cfg)
    _, coords = dec.decode_full(frames)
    assert coords.mask[truth.lit].mean() > 0.99


@given(st.integers(0, 2**32 - 1), st.sampled_from([3, 4, 5, 8]))
def test_shift_cyclicity(seed, n):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0, TWO_PI, 50)
    imgs = forward(phi, rng.uniform(0.3, 0.5, 50), rng.uniform(0.05, 0.3, 50), n)
    p0, _, _ = dec.wrapped_phase(imgs)
    p1, _, _ = dec.wrapped_phase(np.roll(imgs, -1, axis=0))
    assert np.max(circ(p1, p0 - TWO_PI / n)) < 1e-9


@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-1, 1))
def test_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    imgs = forward(rng.uniform(0, TWO_PI, 40), 0.4, rng.uniform(0.05, 0.3, 40), 3)
    p0, _, B0 = dec.wrapped_phase(imgs)
    p1, _, B1 = dec.wrapped_phase(a * imgs + b)
    assert np.max(circ(p0, p1)) < 1e-12
    assert np.allclose(B1, a * B0, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 2**32 - 1))
def test_three_step_matches_least_squares(seed):
    rng = np.random.default_rng(seed)
    imgs = forward(rng.uniform(0, TWO_PI, 40), 0.4, rng.uniform(0.05, 0.3, 40), 3)
    p, _, B = dec.wrapped_phase(imgs)
    pl, Bl = dec._lsq_phase(imgs)
    assert np.max(circ(p, pl)) < 1e-12
    assert np.allclose(B, Bl, atol=1e-14)


@given(st.integers(0, 2**32 - 1), st.integers(1, 64))
def test_phase_range_and_unwrap_consistency(seed, n):
    rng = np.random.default_rng(seed)
    Phi = rng.uniform(0, TWO_PI * n, 200)
    phi_h = np.mod(Phi, TWO_PI)
    k, out, ok = dec.unwrap_temporal(phi_h, Phi / n, n)
    assert ok.all()
    assert np.allclose(out, Phi, atol=1e-9 * n)
    assert np.all((phi_h >= 0) & (phi_h < TWO_PI))
