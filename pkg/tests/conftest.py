import numpy as np
import pytest

from sceneforge.geometry import CameraIntrinsics, CameraPose


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_pose(rng: np.random.Generator, t_scale: float = 2.0) -> CameraPose:
    return CameraPose(random_rotation(rng), rng.uniform(-t_scale, t_scale, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_intrinsics():
    return CameraIntrinsics(fx=100.0, fy=120.0, cx=7.5, cy=8.0, width=16, height=16)
