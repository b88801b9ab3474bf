import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.ndimage import gaussian_filter

from slscan import decode as dec
from slscan import register as reg


def texture(rng, shape=(128, 160), sigma=1.0):
    return gaussian_filter(rng.normal(size=shape), sigma, mode="wrap")


def fourier_shift(img, dx, dy):
    """Circularly shift a periodic image by a (sub-)pixel amount: m(x) = f(x - d)."""
    h, w = img.shape
    ky = np.fft.fftfreq(h)[:, None]
    kx = np.fft.fftfreq(w)[None, :]
    return np.real(np.fft.ifft2(np.fft.fft2(img) * np.exp(-2j * np.pi * (kx * dx + ky * dy))))


def test_identical_images():
    f = texture(np.random.default_rng(0))
    s = reg.phase_correlate(f, f)
    assert (s.dx, s.dy) == (0.0, 0.0)
    assert s.peak_value == pytest.approx(1.0, abs=1e-6)


def test_integer_circular_shift():
    f = texture(np.random.default_rng(1))
    m = np.roll(f, (2, 3), axis=(0, 1))
    s = reg.phase_correlate(f, m, subpixel=None)
    assert (s.dx, s.dy) == (3.0, 2.0)


def test_x_constraint_subpixel():
    rng = np.random.default_rng(2)
    field = texture(rng, (256, 320))
    f = field[64:192, 64:224]
    m = fourier_shift(field, 2.5, 0)[64:192, 64:224]
    s = reg.phase_correlate(f, m, "x", window=True)
    assert s.dy == 0.0
    assert s.dx == pytest.approx(2.5, abs=0.1)


def test_y_constraint_zeroes_dx():
    f = texture(np.random.default_rng(3))
    s = reg.phase_correlate(f, np.roll(f, 4, axis=0), "y-only")
    assert s.dx == 0.0 and s.dy == pytest.approx(4.0, abs=1e-6)


def test_flat_image_rejected():
    f = texture(np.random.default_rng(4))
    with pytest.raises(reg.DegenerateSpectrumError):
        reg.phase_correlate(f, np.ones_like(f))
    sparse = np.zeros((64, 64))
    sparse += np.cos(2 * np.pi * 3 * np.arange(64) / 64)[None, :]
    with pytest.raises(reg.DegenerateSpectrumError):
        reg.phase_correlate(sparse, np.roll(sparse, 2, axis=1))


def test_bad_constraint():
    with pytest.raises(ValueError):
        reg.phase_correlate(np.eye(4), np.eye(4), "z")


@given(st.integers(0, 2**32 - 1), st.integers(-20, 20), st.integers(-20, 20),
       st.integers(-20, 20), st.integers(-20, 20))
def test_shift_composition(seed, ax, ay, bx, by):
    f = texture(np.random.default_rng(seed), (96, 96))
    fa = np.roll(f, (ay, ax), axis=(0, 1))
    fb = np.roll(f, (by, bx), axis=(0, 1))
    s1 = reg.phase_correlate(f, fa)
    s2 = reg.phase_correlate(fa, fb)
    s3 = reg.phase_correlate(f, fb)
    assert abs(s1.dx + s2.dx - s3.dx) < 0.2 and abs(s1.dy + s2.dy - s3.dy) < 0.2


@given(st.integers(0, 2**32 - 1), st.floats(-6, 6), st.floats(-6, 6))
def test_symmetry(seed, dx, dy):
    f = texture(np.random.default_rng(seed), (96, 96))
    m = fourier_shift(f, dx, dy)
    a = reg.phase_correlate(f, m)
    b = reg.phase_correlate(m, f)
    assert abs(a.dx + b.dx) < 0.1 and abs(a.dy + b.dy) < 0.1


@given(st.integers(0, 2**32 - 1), st.integers(-30, 30), st.integers(-30, 30))
def test_window_neutral_for_circular_shifts(seed, dx, dy):
    f = texture(np.random.default_rng(seed), (96, 128))
    m = np.roll(f, (dy, dx), axis=(0, 1))
    a = reg.phase_correlate(f, m, subpixel=None)
    b = reg.phase_correlate(f, m, window=True, subpixel=None)
    assert (a.dx, a.dy) == (b.dx, b.dy) == (dx, dy)


def test_parabolic_option_is_coarser():
    rng = np.random.default_rng(5)
    f = texture(rng)
    m = fourier_shift(f, 1.3, -0.4)
    par = reg.phase_correlate(f, m, subpixel="parabolic")
    up = reg.phase_correlate(f, m)
    assert abs(up.dx - 1.3) < 0.02 and abs(up.dy + 0.4) < 0.02
    assert abs(par.dx - 1.3) < 0.3


def test_static_plan_is_zero():
    f = texture(np.random.default_rng(6))
    plan = reg.plan_motion(dec.FrameSet(np.stack([f] * 6)))
    assert plan.reference_index == 2
    assert all(s.dx == 0 and s.dy == 0 for s in plan.shifts)


def test_plan_marks_unregistrable_image():
    f = texture(np.random.default_rng(7))
    stack = np.stack([f, f, f, np.zeros_like(f)])
    plan = reg.plan_motion(dec.FrameSet(stack), constraint="none")
    assert plan.usable == (True, True, True, False)
    with pytest.raises(ValueError):
        reg.align(dec.FrameSet(stack), plan)


def test_align_zero_plan_identity():
    f = texture(np.random.default_rng(8))
    fs = dec.FrameSet(np.stack([f, f + 1]))
    plan = reg.MotionPlan(0, (reg.ShiftEstimate(0, 0, 1), reg.ShiftEstimate(0, 0, 1)))
    out = reg.align(fs, plan)
    assert np.array_equal(out.images, fs.images) and out.valid.all()


def test_align_integer_nearest_exact():
    rng = np.random.default_rng(9)
    field = rng.uniform(size=(60, 80))
    ref = field[10:50, 10:70]
    moved = field[10:50, 7:67]  # scene moved by +3 px in x
    fs = dec.FrameSet(np.stack([ref, moved]))
    plan = reg.plan_motion(fs, 0, "x", window=True)
    assert plan.shifts[1].dx == pytest.approx(3.0, abs=0.05)
    out = reg.align(fs, plan, "nearest", round_shifts=True)
    v = out.valid
    assert np.array_equal(out.images[1][v], ref[v])
    assert not v[:, -3:].any() and v[:, :-3].all()
