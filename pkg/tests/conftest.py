import numpy as np
import pytest

from ow3d.geometry import CameraModel


def random_rotation(rng) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q = q @ np.diag(np.sign(np.diag(r)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_camera(rng, width=None, height=None) -> CameraModel:
    """Random valid camera aimed roughly at the origin (with random roll)."""
    width = int(rng.integers(16, 200)) if width is None else width
    height = int(rng.integers(16, 200)) if height is None else height
    fx = float(rng.uniform(0.4, 1.5) * width)
    fy = float(rng.uniform(0.4, 1.5) * height)
    cx = float(rng.uniform(0.35, 0.65) * width)
    cy = float(rng.uniform(0.35, 0.65) * height)
    intr = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])

    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    eye = direction * rng.uniform(5.0, 9.0)
    fwd = -direction + rng.normal(scale=0.05, size=3)
    fwd /= np.linalg.norm(fwd)
    helper = rng.normal(size=3)
    helper -= fwd * (helper @ fwd)
    helper /= np.linalg.norm(helper)
    x_c = helper
    y_c = np.cross(fwd, x_c)
    rot = np.stack([x_c, y_c, fwd])
    if np.linalg.det(rot) < 0:
        rot[1] = -rot[1]
    trans = -rot @ eye
    return CameraModel(
        intrinsics=intr,
        extrinsics=np.concatenate([rot, trans[:, None]], axis=1),
        image_width=width,
        image_height=height,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
