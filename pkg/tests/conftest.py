import numpy as np
import pytest
from hypothesis import settings

from slscan import geometry as geo
from slscan import patterns as pat
from slscan import scenes
from slscan import simulator as sim

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_rig(rng, distortion=False):
    """Camera-projector rig with a randomized baseline and focal lengths."""
    base = rng.uniform([-0.15, -0.05, -0.02], [0.15, 0.05, 0.02])
    if np.linalg.norm(base[:2]) < 0.03:
        base[0] = 0.08
    dist = None
    if distortion:
        dist = geo.Distortion(*rng.uniform([-0.1, -0.05, -1e-3, -1e-3, -0.01], [0.1, 0.05, 1e-3, 1e-3, 0.01]))
    return geo.make_rig(camera_focal=rng.uniform(700, 1200), projector_focal=rng.uniform(800, 1300),
                        baseline=tuple(base), working_distance=rng.uniform(0.3, 0.8),
                        camera_dist=dist, projector_dist=dist)


@pytest.fixture(scope="session")
def rig():
    return geo.make_rig()


@pytest.fixture(scope="session")
def distorted_rig():
    d = geo.Distortion(k1=0.05)
    return geo.make_rig(camera_dist=d, projector_dist=d)


@pytest.fixture(scope="session")
def spec():
    return pat.PatternSpec(n_fringe=16)


@pytest.fixture(scope="session")
def plane_scan(distorted_rig, spec):
    """Noiseless analytic-sampled render of a fronto-parallel plane at 0.5 m."""
    cfg = sim.RenderConfig(sampling="analytic")
    return sim.render_sequence(distorted_rig, scenes.fronto_plane(0.5), pat.generate(spec), cfg)


# Acceptance results: criterion number -> (passed, detail). Filled by
# test_acceptance.py and printed as one line per criterion after the run.
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
