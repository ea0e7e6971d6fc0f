import numpy as np
import pytest

from anchorloc import simworld
from anchorloc.geometry import Pose, yaw_quat


def random_unit_quat(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def make_pose(x, y, z=0.0, yaw=0.0):
    return Pose(position=np.array([x, y, z], dtype=float), orientation=yaw_quat(yaw))


@pytest.fixture(scope="session")
def tiny_world():
    """A small, fast world for plumbing tests: short loop, two landmarks."""
    route = np.array([[0.0, 0.0], [6.0, 0.0], [6.0, 1.0], [0.0, 1.0], [0.0, 0.0]])
    # near-panoramic FOV keeps every sample lit, which plumbing tests rely on
    return simworld.WorldSpec(
        route=route,
        landmarks=(("a", (6.0, 0.0)), ("b", (0.0, 1.0))),
        obstacles=(((3.0, 0.4), (3.0, 0.7)),),
        fov_half_angle=175.0,
        noise_sigma=0.0,
        seed=3,
    )


@pytest.fixture(scope="session")
def tiny_samples(tiny_world):
    return simworld.generate(tiny_world, 120, 40)
