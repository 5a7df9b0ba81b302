import math

import numpy as np
import pytest

from ow3d.geometry import (
    CameraModel,
    PixelPointIndex,
    PointCloud,
    back_project,
    build_pixel_point_index,
    pixel_distance_3d,
    project_points,
)

from conftest import random_camera


def identity_camera(width=100, height=100, fx=1.0, fy=1.0, cx=0.0, cy=0.0):
    intr = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    extr = np.concatenate([np.eye(3), np.zeros((3, 1))], axis=1)
    return CameraModel(intrinsics=intr, extrinsics=extr, image_width=width, image_height=height)


class TestCameraModel:
    def test_rejects_nonpositive_focal(self):
        with pytest.raises(ValueError, match="focal"):
            identity_camera(fx=0.0)

    def test_rejects_non_orthonormal_rotation(self):
        extr = np.concatenate([np.eye(3) * 1.001, np.zeros((3, 1))], axis=1)
        with pytest.raises(ValueError, match="orthonormal"):
            CameraModel(
                intrinsics=np.eye(3), extrinsics=extr, image_width=10, image_height=10
            )

    def test_rejects_reflection(self):
        rot = np.diag([1.0, 1.0, -1.0])
        extr = np.concatenate([rot, np.zeros((3, 1))], axis=1)
        with pytest.raises(ValueError, match="determinant"):
            CameraModel(
                intrinsics=np.eye(3), extrinsics=extr, image_width=10, image_height=10
            )

    def test_rejects_empty_raster(self):
        with pytest.raises(ValueError, match="dimensions"):
            identity_camera(width=0)


class TestProjection:
    def test_identity_point_on_axis(self):
        cam = identity_camera()
        uv, depth, visible = project_points(PointCloud(points=[[0.0, 0.0, 1.0]]), cam)
        assert visible[0]
        assert uv[0, 0] == 0.0 and uv[0, 1] == 0.0 and depth[0] == 1.0

    def test_analytic_pinhole(self):
        cam = identity_camera(width=200, height=200, fx=100, fy=100, cx=50, cy=50)
        uv, depth, visible = project_points(PointCloud(points=[[0.5, 0.0, 1.0]]), cam)
        assert visible[0]
        assert uv[0, 0] == pytest.approx(100.0) and uv[0, 1] == pytest.approx(50.0)
        assert depth[0] == 1.0

    def test_behind_camera_culled(self):
        cam = identity_camera()
        _, _, visible = project_points(PointCloud(points=[[0.0, 0.0, -1.0], [0, 0, 0]]), cam)
        assert not visible.any()

    def test_round_trip_random(self, rng):
        pts = rng.uniform(-3.0, 3.0, size=(1000, 3))
        cam = random_camera(rng)
        cloud = PointCloud(points=pts)
        uv, depth, visible = project_points(cloud, cam)
        vis = np.nonzero(visible)[0]
        if vis.size == 0:
            pytest.skip("camera saw nothing; adjust seed")
        rec = back_project(uv[vis], depth[vis], cam)
        assert np.abs(rec - pts[vis]).max() < 1e-9

    def test_monotone_culling(self, rng):
        pts = rng.uniform(-3.0, 3.0, size=(500, 3))
        cam = random_camera(rng, width=120, height=90)
        small = CameraModel(
            intrinsics=cam.intrinsics,
            extrinsics=cam.extrinsics,
            image_width=60,
            image_height=45,
        )
        _, _, vis_big = project_points(PointCloud(points=pts), cam)
        _, _, vis_small = project_points(PointCloud(points=pts), small)
        assert not np.any(vis_small & ~vis_big)


class TestPixelPointIndex:
    def test_single_point_radius_half(self):
        cam = identity_camera(width=30, height=30, fx=20, fy=20, cx=10, cy=10)
        cloud = PointCloud(points=[[0.0, 0.0, 1.0]])  # projects to (10, 10) exactly
        index = build_pixel_point_index(cloud, cam, search_radius_px=0.5)
        assert index.owner[10, 10] == 0
        assert index.assigned_count == 1

    def test_empty_cloud_all_unassigned(self):
        cam = identity_camera(width=8, height=8)
        index = build_pixel_point_index(PointCloud(points=np.zeros((0, 3))), cam)
        assert index.assigned_count == 0
        assert np.isnan(index.depth).all()

    def test_matches_bruteforce(self, rng):
        # oracle: exhaustive per-pixel scan over all visible projections
        pts = rng.uniform(-2.0, 2.0, size=(500, 3))
        cam = random_camera(rng, width=48, height=40)
        cloud = PointCloud(points=pts)
        radius = 1.5
        index = build_pixel_point_index(cloud, cam, radius)

        uv, depth, visible = project_points(cloud, cam)
        for py in range(cam.image_height):
            for px in range(cam.image_width):
                best = None
                for i in range(len(pts)):
                    if not visible[i]:
                        continue
                    du = uv[i, 0] - px
                    dv = uv[i, 1] - py
                    d2 = du * du + dv * dv
                    if d2 > radius * radius:
                        continue
                    key = (d2, depth[i], i)
                    if best is None or key < best:
                        best = key
                if best is None:
                    assert index.owner[py, px] == -1
                else:
                    assert index.owner[py, px] == best[2]
                    assert index.depth[py, px] == best[1]

    def test_owner_depth_consistency_invariant(self):
        with pytest.raises(ValueError, match="together"):
            PixelPointIndex(
                width=2,
                height=1,
                owner=np.array([[0, -1]]),
                depth=np.array([[np.nan, 1.0]]),
            )


class TestPixelDistance3D:
    def _index_for(self, pts, width=30, height=30):
        cam = identity_camera(width=width, height=height, fx=20, fy=20, cx=10, cy=10)
        cloud = PointCloud(points=pts)
        return cloud, build_pixel_point_index(cloud, cam, 0.6), cam

    def test_same_pixel_zero(self):
        cloud, index, _ = self._index_for([[0.0, 0.0, 1.0]])
        assert pixel_distance_3d((10, 10), (10, 10), index, cloud) == 0.0

    def test_3_4_5_triangle(self):
        # two points at depth 1m and 3-4 offsets -> distance 5
        cloud, index, cam = self._index_for([[0.0, 0.0, 1.0], [0.15, 0.2, 1.0]])
        a = (10, 10)
        b = (13, 14)  # u = 20*0.15+10 = 13, v = 20*0.2+10 = 14
        assert index.owner[b[1], b[0]] == 1
        d = pixel_distance_3d(a, b, index, cloud)
        assert d == pytest.approx(math.sqrt(0.15**2 + 0.2**2), abs=0)

    def test_unassigned_is_none(self):
        cloud, index, _ = self._index_for([[0.0, 0.0, 1.0]])
        assert pixel_distance_3d((10, 10), (0, 0), index, cloud) is None

    def test_random_pairs_match_owner_distance(self, rng):
        pts = rng.uniform(-1.5, 1.5, size=(300, 3))
        cam = random_camera(rng, width=40, height=40)
        cloud = PointCloud(points=pts)
        index = build_pixel_point_index(cloud, cam, 1.5)
        assigned = np.argwhere(index.owner >= 0)
        if assigned.shape[0] < 2:
            pytest.skip("too few assigned pixels")
        for _ in range(100):
            ay, ax = assigned[rng.integers(assigned.shape[0])]
            by, bx = assigned[rng.integers(assigned.shape[0])]
            d = pixel_distance_3d((ax, ay), (bx, by), index, cloud)
            pa = cloud.points[index.owner[ay, ax]]
            pb = cloud.points[index.owner[by, bx]]
            dx, dy, dz = pa[0] - pb[0], pa[1] - pb[1], pa[2] - pb[2]
            assert d == math.sqrt(dx * dx + dy * dy + dz * dz)

    def test_symmetry_and_triangle_inequality(self, rng):
        pts = rng.uniform(-1.5, 1.5, size=(200, 3))
        cam = random_camera(rng, width=32, height=32)
        cloud = PointCloud(points=pts)
        index = build_pixel_point_index(cloud, cam, 1.5)
        assigned = [tuple(p[::-1]) for p in np.argwhere(index.owner >= 0)]
        if len(assigned) < 3:
            pytest.skip("too few assigned pixels")
        for _ in range(60):
            a, b, c = (assigned[rng.integers(len(assigned))] for _ in range(3))
            dab = pixel_distance_3d(a, b, index, cloud)
            dba = pixel_distance_3d(b, a, index, cloud)
            dac = pixel_distance_3d(a, c, index, cloud)
            dcb = pixel_distance_3d(c, b, index, cloud)
            assert dab == dba
            assert dab <= dac + dcb + 1e-12

    def test_outside_raster_rejected(self):
        cloud, index, _ = self._index_for([[0.0, 0.0, 1.0]])
        with pytest.raises(ValueError, match="outside"):
            pixel_distance_3d((-1, 0), (10, 10), index, cloud)
