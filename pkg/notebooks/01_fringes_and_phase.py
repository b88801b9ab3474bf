# coding: utf-8
# %% [markdown]
# # Fringes and phase
#
# A 3+3 sequence carries two sinusoids: a high-frequency one with
# `n_fringe` periods across the projector and a unit-frequency one with a
# single period. Three shifted copies of each are enough to recover the
# phase at every pixel, whatever the ambient light and surface albedo.

# %%
import numpy as np

from slscan import decode as dec
from slscan import patterns as pat

spec = pat.PatternSpec(orientation="vertical", steps=3, n_fringe=16, width=912, height=1140)
seq = pat.generate(spec)
print(spec)
print("images:", len(seq.images), "shape:", seq.images[0].shape)

# %% [markdown]
# One projector row of the first high-frequency pattern, and its 8-bit
# version as it would be sent to the projector.

# %%
row = seq.images[0][0]
print("peak-to-peak:", row.max() - row.min())
as_bytes = pat.to_integer(seq, bits=8)
print("8-bit dtype:", as_bytes.dtype, "range:", as_bytes.min(), as_bytes.max())

# %% [markdown]
# Pretend the projector images are what a camera sees, with an unknown
# offset and contrast. Decoding returns the wrapped phases, the modulation
# `B`, and the projector column each pixel was lit by.

# %%
ambient, gain = 0.2, 0.6
frames = dec.FrameSet([ambient + gain * img for img in seq.images], spec=spec)
maps, coords = dec.decode_full(frames)
cols = np.arange(spec.width)[None, :] * np.ones((spec.height, 1))
err = np.abs(coords.p - cols)[coords.mask]
print(f"valid pixels: {coords.mask.mean():.4f}")
print(f"column error: max {err.max():.2e} px")
print(f"recovered modulation B ~ {np.median(maps.B):.3f} (true {gain / 2})")

# %% [markdown]
# ## How much noise can the low-frequency phase take?
#
# The fringe order is `round((n * phi_l - phi_h) / 2pi)`. Noise on `phi_l`
# is multiplied by `n`, so for 16 fringes the coarse phase must be good to
# better than pi/16 or the order jumps by one.

# %%
rng = np.random.default_rng(0)
n = spec.n_fringe
Phi = rng.uniform(0, 2 * np.pi * n, 50_000)
for scale in (0.5, 0.9, 1.1, 1.5):
    noise = rng.uniform(-1, 1, Phi.size) * scale * np.pi / n
    k, _, ok = dec.unwrap_temporal(np.mod(Phi, 2 * np.pi), Phi / n + noise, n)
    wrong = np.mean((k != np.floor(Phi / (2 * np.pi))) | ~ok)
    print(f"noise up to {scale:.1f} * pi/n -> wrong order on {100 * wrong:.2f}% of samples")
