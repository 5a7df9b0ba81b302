"""Pinhole camera model, 3D->2D projection, and pixel/point association.

Coordinate conventions:
  - World frame: right-handed, meters.
  - Camera frame: x right, y down, z forward (optical axis); extrinsics
    are a 3x4 world->camera rigid transform [R | t].
  - Image frame: continuous pixel coordinates, u right, v down. Pixel
    (i, j) has its center at (u, v) = (i, j) exactly; the visible window
    is [0, width) x [0, height).

Projection stays in continuous coordinates; rasterization to integer
pixels happens only when building the pixel->point index.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

# Camera-frame depths at or below this are culled (behind / on the camera
# plane); avoids division blow-up near z = 0.
MIN_DEPTH = 1e-9

ORTHONORMAL_TOL = 1e-9

DEFAULT_SEARCH_RADIUS_PX = 1.5


def _readonly(a: np.ndarray, dtype, shape=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    if shape is not None and out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: 3x3 intrinsics, 3x4 world->camera extrinsics, raster size."""

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    image_width: int
    image_height: int

    def __post_init__(self):
        k = _readonly(self.intrinsics, np.float64, (3, 3))
        e = _readonly(self.extrinsics, np.float64, (3, 4))
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "extrinsics", e)
        if not (np.isfinite(k).all() and np.isfinite(e).all()):
            raise ValueError("camera parameters must be finite")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise ValueError(f"focal lengths must be positive, got fx={k[0, 0]}, fy={k[1, 1]}")
        r = e[:, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > ORTHONORMAL_TOL:
            raise ValueError("extrinsic rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ORTHONORMAL_TOL:
            raise ValueError("extrinsic rotation must have determinant +1")
        if self.image_width < 1 or self.image_height < 1:
            raise ValueError("image dimensions must be >= 1")

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:, 3]

    def center_world(self) -> np.ndarray:
        """Camera optical center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(frozen=True)
class PointCloud:
    """Ordered (N, 3) float64 point set in meters. Empty is legal."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class PixelPointIndex:
    """Per-pixel owning point index and camera depth.

    owner[v, u] is the index of the owning point or -1; depth[v, u] is its
    camera-frame depth in meters or NaN. Entries are set together.
    """

    width: int
    height: int
    owner: np.ndarray
    depth: np.ndarray

    def __post_init__(self):
        owner = _readonly(self.owner, np.int64, (self.height, self.width))
        depth = _readonly(self.depth, np.float64, (self.height, self.width))
        object.__setattr__(self, "owner", owner)
        object.__setattr__(self, "depth", depth)
        assigned = owner >= 0
        if bool((assigned != np.isfinite(depth)).any()):
            raise ValueError("owner and depth must be assigned together")
        if assigned.any() and not bool((depth[assigned] > 0).all()):
            raise ValueError("assigned depths must be positive")

    @property
    def assigned_count(self) -> int:
        return int((self.owner >= 0).sum())


def project_points(cloud: PointCloud, cam: CameraModel):
    """Project points to the image plane.

    Returns (uv, depth, visible): continuous pixel coordinates (N, 2),
    camera-frame depth (N,), and a visibility flag. A point is visible
    when its depth exceeds MIN_DEPTH and its projection falls inside
    [0, width) x [0, height). uv/depth are NaN where culled.
    """
    pts = cloud.points
    n = pts.shape[0]
    uv = np.full((n, 2), np.nan)
    depth = np.full(n, np.nan)
    visible = np.zeros(n, dtype=bool)
    if n == 0:
        return uv, depth, visible

    pc = pts @ cam.rotation.T + cam.translation
    z = pc[:, 2]
    front = z > MIN_DEPTH
    if front.any():
        proj = pc[front] @ cam.intrinsics.T
        w = proj[:, 2]
        u = proj[:, 0] / w
        v = proj[:, 1] / w
        inside = (u >= 0) & (u < cam.image_width) & (v >= 0) & (v < cam.image_height)
        front_idx = np.nonzero(front)[0][inside]
        uv[front_idx, 0] = u[inside]
        uv[front_idx, 1] = v[inside]
        depth[front_idx] = z[front_idx]
        visible[front_idx] = True
    return uv, depth, visible


def back_project(uv: np.ndarray, depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Closed-form inverse of project_points for (u, v, z) triples."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    ones = np.ones((uv.shape[0], 1))
    homo = np.concatenate([uv, ones], axis=1)
    rays = homo @ np.linalg.inv(cam.intrinsics).T
    pc = rays * depth[:, None]
    return (pc - cam.translation) @ cam.rotation


def build_pixel_point_index(
    cloud: PointCloud,
    cam: CameraModel,
    search_radius_px: float = DEFAULT_SEARCH_RADIUS_PX,
) -> PixelPointIndex:
    """Assign each pixel its nearest visible projection within a radius.

    Candidates are visible points whose projection lies within
    ``search_radius_px`` (closed disk) of the pixel center; the nearest
    wins, ties broken by smaller depth then smaller point index. Pixels
    with no candidate stay unassigned.
    """
    if search_radius_px < 0:
        raise ValueError("search_radius_px must be non-negative")
    uv, depth, visible = project_points(cloud, cam)
    vis = np.nonzero(visible)[0]
    owner_flat, depth_flat = kernels.nearest_pixel_index(
        np.ascontiguousarray(uv[vis, 0]),
        np.ascontiguousarray(uv[vis, 1]),
        np.ascontiguousarray(depth[vis]),
        vis.astype(np.int64),
        cam.image_width,
        cam.image_height,
        float(search_radius_px),
    )
    return PixelPointIndex(
        width=cam.image_width,
        height=cam.image_height,
        owner=owner_flat.reshape(cam.image_height, cam.image_width),
        depth=depth_flat.reshape(cam.image_height, cam.image_width),
    )


def pixel_distance_3d(a, b, index: PixelPointIndex, cloud: PointCloud):
    """Euclidean distance between the owning points of pixels a and b.

    a, b are (x, y) integer pixels inside the raster. Returns None when
    either pixel is unassigned.
    """
    ax, ay = a
    bx, by = b
    for (x, y) in ((ax, ay), (bx, by)):
        if not (0 <= x < index.width and 0 <= y < index.height):
            raise ValueError(f"pixel ({x}, {y}) outside {index.width}x{index.height} raster")
    ia = index.owner[ay, ax]
    ib = index.owner[by, bx]
    if ia < 0 or ib < 0:
        return None
    pa = cloud.points[ia]
    pb = cloud.points[ib]
    dx = pa[0] - pb[0]
    dy = pa[1] - pb[1]
    dz = pa[2] - pb[2]
    return math.sqrt(dx * dx + dy * dy + dz * dz)
