import os

# tiny matmuls gain nothing from BLAS threads; pinning keeps timings stable
# and stops forked training workers from oversubscribing the box
for _v in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_v, "1")

import numpy as np
import pytest

from pegmentor import geometry as geo


def random_rotation(rng: np.random.Generator) -> geo.Rotation:
    """Uniform random rotation via a normalized Gaussian quaternion."""
    return geo.Rotation(rng.normal(size=4))


def random_pose(rng: np.random.Generator, src=geo.WORLD, dst=geo.TIP,
                scale: float = 1.0) -> geo.RigidTransform:
    return geo.RigidTransform(random_rotation(rng), rng.uniform(-scale, scale, 3), src, dst)


def sample_viewing_pose(rng: np.random.Generator, points: np.ndarray,
                        intrinsics: geo.CameraIntrinsics,
                        max_tilt_deg: float = 60.0,
                        dist_range=(0.1, 0.5)) -> geo.RigidTransform:
    """Random world->camera_left pose that keeps all `points` in view.

    The camera sits above the board (tilt from straight-down bounded by
    max_tilt_deg) at a distance within dist_range of the point centroid,
    rolled by a random angle about its optical axis.
    """
    center = points.mean(axis=0)
    while True:
        tilt = rng.uniform(0.0, np.deg2rad(max_tilt_deg))
        azim = rng.uniform(0.0, 2 * np.pi)
        dist = rng.uniform(*dist_range)
        offset = dist * np.array([
            np.sin(tilt) * np.cos(azim),
            np.sin(tilt) * np.sin(azim),
            np.cos(tilt),
        ])
        eye = center + offset
        pose = geo.look_at_pose(eye, center)
        roll = geo.RigidTransform(geo.Rotation.about_z(rng.uniform(0, 2 * np.pi)),
                                  np.zeros(3), geo.CAMERA_LEFT, geo.CAMERA_LEFT)
        pose = geo.compose(pose, roll)
        uv, z = geo.project_points(intrinsics, pose, points)
        if np.all(z > 0.05) and np.all(uv[:, 0] >= 5) and np.all(uv[:, 0] < intrinsics.width - 5) \
                and np.all(uv[:, 1] >= 5) and np.all(uv[:, 1] < intrinsics.height - 5):
            return pose


@pytest.fixture
def intrinsics():
    return geo.CameraIntrinsics(fx=800.0, fy=800.0, cx=320.0, cy=240.0)
