import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ow3d.boxes import Box2D, Box3D, iou_2d, iou_3d, nms, nms_indices, points_in_box_2d
from ow3d.geometry import PointCloud

from conftest import random_camera
from test_geometry import identity_camera


def rand_box3d(rng, score=None):
    center = rng.uniform(-2, 2, size=3)
    size = rng.uniform(0.2, 2.0, size=3)
    s = float(rng.uniform(0, 1)) if score is None else score
    return Box3D(center=tuple(center), size=tuple(size), score=s)


box3d_strategy = st.builds(
    lambda cx, cy, cz, sx, sy, sz: Box3D(center=(cx, cy, cz), size=(sx, sy, sz)),
    *(st.floats(-5, 5) for _ in range(3)),
    *(st.floats(0.1, 4.0) for _ in range(3)),
)


class TestIoU:
    def test_identity(self, rng):
        for _ in range(20):
            b = rand_box3d(rng)
            assert iou_3d(b, b) == 1.0

    def test_offset_unit_cubes(self):
        a = Box3D(center=(0, 0, 0), size=(1, 1, 1))
        b = Box3D(center=(0.5, 0, 0), size=(1, 1, 1))
        assert iou_3d(a, b) == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_disjoint_zero(self):
        a = Box3D(center=(0, 0, 0), size=(1, 1, 1))
        b = Box3D(center=(5, 0, 0), size=(1, 1, 1))
        assert iou_3d(a, b) == 0.0

    @given(box3d_strategy, box3d_strategy)
    @settings(max_examples=200, deadline=None)
    def test_symmetry_and_bounds(self, a, b):
        v = iou_3d(a, b)
        assert v == iou_3d(b, a)
        assert 0.0 <= v <= 1.0

    def test_random_pairs_against_independent_formula(self, rng):
        # oracle: same quantity via clip-based vector arithmetic
        for _ in range(10000):
            a = rand_box3d(rng)
            b = rand_box3d(rng)
            alo, ahi = np.array(a.min_corner()), np.array(a.max_corner())
            blo, bhi = np.array(b.min_corner()), np.array(b.max_corner())
            overlap = np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)
            inter = float(overlap[0] * overlap[1] * overlap[2])
            expected = 0.0
            if inter > 0.0:
                union = a.volume() + b.volume() - inter
                expected = inter / union
            assert iou_3d(a, b) == pytest.approx(expected, abs=1e-12)

    def test_monte_carlo_volume(self, rng):
        # oracle: sample in box a, fraction landing in b estimates intersection
        n = 1_000_000
        for _ in range(10):
            a = rand_box3d(rng)
            b = Box3D(
                center=tuple(np.array(a.center) + rng.uniform(-0.5, 0.5, size=3)),
                size=tuple(rng.uniform(0.3, 2.0, size=3)),
            )
            alo, ahi = np.array(a.min_corner()), np.array(a.max_corner())
            blo, bhi = np.array(b.min_corner()), np.array(b.max_corner())
            samples = rng.uniform(alo, ahi, size=(n, 3))
            inside = np.all((samples >= blo) & (samples <= bhi), axis=1)
            p = inside.mean()
            inter_mc = p * a.volume()
            sigma = a.volume() * np.sqrt(max(p * (1 - p), 1e-12) / n)
            overlap = np.clip(np.minimum(ahi, bhi) - np.maximum(alo, blo), 0.0, None)
            inter_true = float(np.prod(overlap))
            assert abs(inter_mc - inter_true) <= 3 * sigma + 1e-12

    def test_iou_2d_basic(self):
        a = Box2D(0, 0, 2, 2)
        b = Box2D(1, 0, 3, 2)
        assert iou_2d(a, b) == pytest.approx((1 * 2) / (4 + 4 - 2), abs=1e-15)
        assert iou_2d(a, a) == 1.0


def reference_nms(boxes, threshold, iou):
    order = sorted(range(len(boxes)), key=lambda i: -boxes[i].score)
    kept = []
    for i in order:
        if all(iou(boxes[i], boxes[j]) < threshold for j in kept):
            kept.append(i)
    return kept


class TestNMS:
    def test_empty_and_single(self):
        assert nms([], 0.5) == []
        b = Box3D(center=(0, 0, 0), size=(1, 1, 1), score=0.7)
        assert nms([b], 0.5) == [b]

    def test_identical_boxes_keep_higher_score(self):
        hi = Box3D(center=(0, 0, 0), size=(1, 1, 1), score=0.9)
        lo = Box3D(center=(0, 0, 0), size=(1, 1, 1), score=0.4)
        assert nms([lo, hi], 0.5) == [hi]

    def test_score_tie_keeps_earlier_index(self):
        a = Box3D(center=(0, 0, 0), size=(1, 1, 1), score=0.5)
        b = Box3D(center=(0, 0, 0), size=(1, 1, 1), score=0.5)
        assert nms_indices([a, b], 0.5) == [0]

    def test_random_against_reference(self, rng):
        for _ in range(20):
            boxes = [rand_box3d(rng) for _ in range(50)]
            thr = float(rng.uniform(0.05, 0.95))
            assert nms_indices(boxes, thr) == reference_nms(boxes, thr, iou_3d)

    def test_pairwise_below_threshold(self, rng):
        boxes = [rand_box3d(rng) for _ in range(60)]
        kept = nms(boxes, 0.3)
        for i, a in enumerate(kept):
            for b in kept[:i]:
                assert iou_3d(a, b) < 0.3

    def test_threshold_monotonicity(self, rng):
        boxes = [rand_box3d(rng) for _ in range(40)]
        for _ in range(10):
            t1, t2 = sorted(rng.uniform(0.05, 0.95, size=2))
            k1 = set(nms_indices(boxes, t1))
            k2 = set(nms_indices(boxes, t2))
            assert k1 <= k2


class TestPointsInBox2D:
    def test_whole_image_gets_all_visible(self, rng):
        pts = rng.uniform(-2, 2, size=(200, 3))
        cam = random_camera(rng, width=60, height=50)
        cloud = PointCloud(points=pts)
        from ow3d.geometry import project_points

        _, _, visible = project_points(cloud, cam)
        box = Box2D(0, 0, cam.image_width - 1, cam.image_height - 1)
        got = set(points_in_box_2d(cloud, cam, box).tolist())
        # boundary: points with u in (w-1, w) are visible but outside the box
        uv, _, _ = project_points(cloud, cam)
        expected = {
            int(i)
            for i in np.nonzero(visible)[0]
            if uv[i, 0] <= cam.image_width - 1 and uv[i, 1] <= cam.image_height - 1
        }
        assert got == expected

    def test_degenerate_line_box(self):
        cam = identity_camera(width=64, height=64, fx=32, fy=32, cx=16, cy=16)
        cloud = PointCloud(points=[[0.0, 0.0, 1.0], [0.25, 0.25, 1.0]])
        # second point projects to exactly (24, 24)
        box = Box2D(24.0, 0.0, 24.0, 63.0)
        assert points_in_box_2d(cloud, cam, box).tolist() == [1]

    def test_random_against_linear_scan(self, rng):
        pts = rng.uniform(-2, 2, size=(300, 3))
        cam = random_camera(rng, width=50, height=50)
        cloud = PointCloud(points=pts)
        from ow3d.geometry import project_points

        uv, _, visible = project_points(cloud, cam)
        for _ in range(25):
            x0, x1 = sorted(rng.uniform(0, cam.image_width - 1, size=2))
            y0, y1 = sorted(rng.uniform(0, cam.image_height - 1, size=2))
            box = Box2D(x0, y0, x1, y1)
            expected = [
                int(i)
                for i in range(len(pts))
                if visible[i] and x0 <= uv[i, 0] <= x1 and y0 <= uv[i, 1] <= y1
            ]
            assert points_in_box_2d(cloud, cam, box).tolist() == expected


class TestBoxValidation:
    def test_box3d_rejects_zero_size(self):
        with pytest.raises(ValueError, match="positive"):
            Box3D(center=(0, 0, 0), size=(1, 0, 1))

    def test_box2d_rejects_inverted(self):
        with pytest.raises(ValueError, match="degenerate"):
            Box2D(1, 0, 0, 1)

    def test_score_range(self):
        with pytest.raises(ValueError, match="score"):
            Box3D(center=(0, 0, 0), size=(1, 1, 1), score=1.5)
