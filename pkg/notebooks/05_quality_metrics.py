# coding: utf-8
# %% [markdown]
# # Measuring scan quality
#
# Three measures: repeatability (per-pixel depth std over repeated scans),
# flatness (std of distances to a fitted plane), and accuracy on a board of
# cones whose apex spacing is known.

# %%
import numpy as np

from slscan import decode as dec
from slscan import evaluate as ev
from slscan import geometry as geo
from slscan import patterns as pat
from slscan import scenes
from slscan import simulator as sim
from slscan import triangulate as tri

rig = geo.make_rig(camera_size=(320, 240), camera_focal=450.0)
seq = pat.generate(pat.PatternSpec())
table = tri.build_table(rig, "u")


def scan(scene, **render):
    frames, _ = sim.render_sequence(rig, scene, seq, sim.RenderConfig(**render))
    _, coords = dec.decode_full(frames)
    return tri.triangulate_map(coords, rig, table)


# %% [markdown]
# ## Repeatability versus camera noise

# %%
plane = scenes.fronto_plane(0.5)
for sigma in (0.002, 0.006, 0.018):
    maps = [scan(plane, noise_sigma=sigma, seed=s).depth_map(rig.camera.intrinsics.shape) for s in range(10)]
    rep = ev.depth_std(maps)
    print(f"sigma_I={sigma:.3f}: mean depth std {rep.mean:.3f} mm over {rep.n_pixels} pixels")

# %% [markdown]
# ## Flatness of a 60x60 pixel patch

# %%
cloud = scan(plane, noise_sigma=0.005, seed=0)
rough = ev.plane_esd(cloud, patch=(130, 90, 190, 150))
print(f"ESD {rough.esd:.3f} mm on {rough.n_points} points, patch area {rough.area:.2f} cm^2")

# %% [markdown]
# ## Cone board

# %%
board = scenes.cone_board(0.5)
cloud = scan(board, sampling="analytic")
seeds = np.array([c.apex for c in board.cones]) + 1e-3
report = ev.fit_cones(cloud, seeds, radius=0.02, reference=board.apex_distances())
for d, e in zip(report.distances[1:], report.errors[1:]):
    print(f"apex distance {d * 1e3:7.3f} mm, error {e * 1e3:+.2e} mm")
