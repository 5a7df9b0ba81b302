"""Axis-aligned 2D/3D box algebra: IoU, greedy NMS, containment."""

from dataclasses import dataclass

import numpy as np

from .geometry import CameraModel, PointCloud, project_points


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel-space box, closed boundaries."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: float = 0.0

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max, self.score)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("box fields must be finite")
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box ordering: {self}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)


@dataclass(frozen=True)
class Box3D:
    """Axis-aligned world-space box: center and strictly positive size, meters."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    score: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must have 3 components")
        if not all(np.isfinite(v) for v in center + size + (self.score,)):
            raise ValueError("box fields must be finite")
        if not all(s > 0 for s in size):
            raise ValueError(f"box sizes must be strictly positive, got {size}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def min_corner(self) -> tuple[float, float, float]:
        return tuple(c - s / 2.0 for c, s in zip(self.center, self.size))

    def max_corner(self) -> tuple[float, float, float]:
        return tuple(c + s / 2.0 for c, s in zip(self.center, self.size))

    def volume(self) -> float:
        sx, sy, sz = self.size
        return sx * sy * sz

    @staticmethod
    def from_corners(lo, hi, score: float = 0.0) -> "Box3D":
        center = tuple((float(a) + float(b)) / 2.0 for a, b in zip(lo, hi))
        size = tuple(float(b) - float(a) for a, b in zip(lo, hi))
        return Box3D(center=center, size=size, score=score)


def iou_2d(a: Box2D, b: Box2D) -> float:
    """Intersection-over-union of two 2D boxes; 0 when disjoint or both empty."""
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Intersection-over-union of two axis-aligned 3D boxes."""
    alo, ahi = a.min_corner(), a.max_corner()
    blo, bhi = b.min_corner(), b.max_corner()
    inter = 1.0
    vol_a = 1.0
    vol_b = 1.0
    for k in range(3):
        overlap = min(ahi[k], bhi[k]) - max(alo[k], blo[k])
        if overlap <= 0.0:
            return 0.0
        inter *= overlap
        # volumes from the same corner arithmetic so iou(a, a) is exactly 1
        vol_a *= ahi[k] - alo[k]
        vol_b *= bhi[k] - blo[k]
    union = vol_a + vol_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms_indices(boxes, iou_threshold: float, metric: str = "3d") -> list[int]:
    """Greedy NMS; returns kept indices in descending-score order.

    Score ties keep the earlier input index. A box is kept iff its IoU
    with every already-kept box is < iou_threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    if metric == "2d":
        iou = iou_2d
    elif metric == "3d":
        iou = iou_3d
    else:
        raise ValueError(f"metric must be '2d' or '3d', got {metric!r}")
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept: list[int] = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) < iou_threshold for j in kept):
            kept.append(i)
    return kept


def nms(boxes, iou_threshold: float, metric: str = "3d") -> list:
    """Greedy NMS; returns the kept boxes in descending-score order."""
    return [boxes[i] for i in nms_indices(boxes, iou_threshold, metric)]


def points_in_box_2d(cloud: PointCloud, cam: CameraModel, box: Box2D) -> np.ndarray:
    """Indices of visible points whose projection lies inside the closed box."""
    uv, _, visible = project_points(cloud, cam)
    if not visible.any():
        return np.zeros(0, dtype=np.int64)
    u, v = uv[:, 0], uv[:, 1]
    inside = (
        visible
        & (u >= box.x_min)
        & (u <= box.x_max)
        & (v >= box.y_min)
        & (v <= box.y_max)
    )
    return np.nonzero(inside)[0].astype(np.int64)
