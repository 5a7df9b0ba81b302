import os
import struct

import numpy as np
import pytest

from ow3d.boxes import Box2D, Box3D
from ow3d.formats import (
    FeatureRaster,
    FormatError,
    LabelRaster,
    MaskProposal,
    PriorRaster,
    format_records,
    load_scene,
    parse_records,
    read_boxes,
    read_labels,
    read_point_cloud,
    read_proposals,
    read_raster,
    write_boxes,
    write_labels,
    write_manifest,
    write_point_cloud,
    write_proposals,
    write_raster,
)
from ow3d.geometry import PointCloud
from ow3d.synth import SynthSpec, generate, save_synth_scene

VECTORS = os.path.join(os.path.dirname(__file__), "vectors")


class TestRasterFormat:
    def test_zero_2x2_layout(self):
        # 16-byte header (magic, w, h, channels) + 16 payload bytes
        data = open(os.path.join(VECTORS, "zero_2x2.owrf"), "rb").read()
        assert len(data) == 32
        assert data[:4] == b"OWRF"
        assert struct.unpack("<III", data[4:16]) == (2, 2, 1)
        assert data[16:] == b"\x00" * 16

    def test_pinned_vectors_parse(self):
        r = read_raster(os.path.join(VECTORS, "gradient_3x2.owrf"))
        assert isinstance(r, PriorRaster)
        assert r.values.tolist() == [[0.0, 0.25, 0.5], [0.75, 1.0, 0.125]]

        m = read_raster(os.path.join(VECTORS, "multi_2x2x2.owrf"))
        assert isinstance(m, FeatureRaster)
        assert m.channels == 2
        assert m.values[1].tolist() == [[1.0, 0.0], [0.125, 0.75]]

    def test_pinned_vectors_write_back(self, tmp_path):
        for name in ("zero_2x2.owrf", "gradient_3x2.owrf", "multi_2x2x2.owrf"):
            src = os.path.join(VECTORS, name)
            out = tmp_path / name
            write_raster(read_raster(src), out)
            assert out.read_bytes() == open(src, "rb").read()

    def test_random_round_trips_bitwise(self, tmp_path, rng):
        for i in range(100):
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            r = PriorRaster(values=rng.uniform(0, 1, size=(h, w)).astype(np.float32))
            p1 = tmp_path / f"a{i}.owrf"
            p2 = tmp_path / f"b{i}.owrf"
            write_raster(r, p1)
            write_raster(read_raster(p1), p2)
            assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.owrf"
        p.write_bytes(b"NOPE" + b"\x00" * 28)
        with pytest.raises(FormatError, match="bad magic"):
            read_raster(p)

    def test_truncated_payload(self, tmp_path):
        p = tmp_path / "short.owrf"
        p.write_bytes(b"OWRF" + struct.pack("<III", 2, 2, 1) + b"\x00" * 8)
        with pytest.raises(FormatError, match="truncated.*offset 16"):
            read_raster(p)

    def test_out_of_range_prior_names_offset(self, tmp_path):
        p = tmp_path / "range.owrf"
        vals = struct.pack("<4f", 0.0, 0.5, 1.5, 1.0)  # bad value at index 2
        p.write_bytes(b"OWRF" + struct.pack("<III", 2, 2, 1) + vals)
        with pytest.raises(FormatError, match=r"out of range.*offset 24"):
            read_raster(p)

    def test_non_finite_float(self, tmp_path):
        p = tmp_path / "nan.owrf"
        vals = struct.pack("<4f", 0.0, float("nan"), 0.5, 1.0)
        p.write_bytes(b"OWRF" + struct.pack("<III", 2, 2, 1) + vals)
        with pytest.raises(FormatError, match="non-finite.*offset 20"):
            read_raster(p)

    def test_trailing_bytes_rejected(self, tmp_path):
        p = tmp_path / "trail.owrf"
        p.write_bytes(b"OWRF" + struct.pack("<III", 1, 1, 1) + b"\x00" * 5)
        with pytest.raises(FormatError, match="trailing"):
            read_raster(p)


class TestLabelAndCloudFormats:
    def test_labels_pinned_vector(self):
        labels = read_labels(os.path.join(VECTORS, "labels_3x2.owrm"))
        assert labels.values.tolist() == [[0, 1, 2], [2, 0, 65535]]

    def test_cloud_pinned_vector(self):
        cloud = read_point_cloud(os.path.join(VECTORS, "points_2.owpc"))
        assert cloud.points.tolist() == [[1.0, -2.0, 3.0], [0.5, 0.25, 8.0]]

    def test_labels_round_trip(self, tmp_path, rng):
        labels = LabelRaster(values=rng.integers(0, 9, size=(5, 7)).astype(np.uint16))
        p1 = tmp_path / "l1.owrm"
        p2 = tmp_path / "l2.owrm"
        write_labels(labels, p1)
        write_labels(read_labels(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_cloud_round_trip(self, tmp_path, rng):
        cloud = PointCloud(
            points=rng.uniform(-5, 5, size=(33, 3)).astype(np.float32).astype(np.float64)
        )
        p1 = tmp_path / "c1.owpc"
        p2 = tmp_path / "c2.owpc"
        write_point_cloud(cloud, p1)
        write_point_cloud(read_point_cloud(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_cloud_bad_magic(self, tmp_path):
        p = tmp_path / "bad.owpc"
        p.write_bytes(b"XXXX" + struct.pack("<I", 0))
        with pytest.raises(FormatError, match="bad magic"):
            read_point_cloud(p)


class TestRecords:
    def test_round_trip(self):
        records = [("camera", {"b": "2", "a": "1"}), ("note", {"x": "hello world"})]
        text = format_records(records)
        parsed = parse_records(text)
        assert parsed == [("camera", {"a": "1", "b": "2"}), ("note", {"x": "hello world"})]
        # keys serialize sorted
        assert text.index("a: 1") < text.index("b: 2")

    def test_comments_and_blanks_ignored(self):
        text = "# header\n\n[thing]\nkey: v\n\n# trailing\n"
        assert parse_records(text) == [("thing", {"key": "v"})]

    def test_field_outside_record(self):
        with pytest.raises(FormatError, match="outside"):
            parse_records("key: value\n")

    def test_duplicate_key(self):
        with pytest.raises(FormatError, match="duplicate"):
            parse_records("[r]\nk: 1\nk: 2\n")

    def test_missing_colon(self):
        with pytest.raises(FormatError, match="key: value"):
            parse_records("[r]\nnonsense\n")


class TestProposalsAndBoxes:
    def test_proposals_round_trip(self, tmp_path):
        props = [
            MaskProposal(label_id=1, sam_iou=0.9, objectness_2d=0.8, box2d=Box2D(1, 2, 3, 4)),
            MaskProposal(label_id=2, sam_iou=0.75, objectness_2d=1.0, box2d=Box2D(0, 0, 5, 5)),
        ]
        p = tmp_path / "props.owtx"
        write_proposals(props, p)
        assert read_proposals(p) == props

    def test_boxes_round_trip_with_config(self, tmp_path):
        boxes = [
            Box3D(center=(1, 2, 3), size=(0.5, 0.5, 0.5), score=0.9),
            Box3D(center=(0, 0, 0), size=(2, 1, 1), score=0.25),
        ]
        p = tmp_path / "boxes.owtx"
        write_boxes(p, {"tool": "ow3d test", "thr": "0.6"}, boxes)
        config, parsed = read_boxes(p)
        assert config == {"tool": "ow3d test", "thr": "0.6"}
        assert parsed == boxes

    def test_invalid_score_rejected(self, tmp_path):
        p = tmp_path / "bad.owtx"
        p.write_text("[box3d]\ncenter: 0 0 0\nscore: 2.0\nsize: 1 1 1\n")
        with pytest.raises(FormatError, match="invalid box3d"):
            read_boxes(p)


def minimal_scene_files(tmp_path, width=1, height=1):
    cam_w, cam_h = width, height
    write_point_cloud(PointCloud(points=np.zeros((0, 3))), tmp_path / "cloud.owpc")
    raster = PriorRaster(values=np.zeros((cam_h, cam_w), dtype=np.float32))
    write_raster(raster, tmp_path / "iou.owrf")
    write_raster(raster, tmp_path / "attention.owrf")
    write_labels(LabelRaster(values=np.zeros((cam_h, cam_w), dtype=np.uint16)), tmp_path / "labels.owrm")
    write_proposals([], tmp_path / "proposals.owtx")
    from test_geometry import identity_camera

    cam = identity_camera(width=cam_w, height=cam_h)
    files = {
        "point_cloud": "cloud.owpc",
        "iou_prior": "iou.owrf",
        "attention_prior": "attention.owrf",
        "labels": "labels.owrm",
        "proposals": "proposals.owtx",
    }
    write_manifest(tmp_path / "manifest.owtx", cam, files, [])
    return tmp_path / "manifest.owtx"


class TestSceneLoading:
    def test_minimal_empty_scene(self, tmp_path):
        manifest = minimal_scene_files(tmp_path)
        scene = load_scene(manifest)
        assert len(scene.cloud) == 0
        assert scene.proposals == ()
        assert scene.annotations == ()

    def test_dimension_mismatch_named(self, tmp_path):
        manifest = minimal_scene_files(tmp_path)
        # replace the iou raster with a larger one
        write_raster(
            PriorRaster(values=np.zeros((2, 2), dtype=np.float32)), tmp_path / "iou.owrf"
        )
        with pytest.raises(FormatError, match="dimension mismatch: iou_prior"):
            load_scene(manifest)

    def test_missing_file_named(self, tmp_path):
        manifest = minimal_scene_files(tmp_path)
        os.remove(tmp_path / "labels.owrm")
        with pytest.raises(FormatError, match="missing file: labels"):
            load_scene(manifest)

    def test_proposal_label_must_exist(self, tmp_path):
        manifest = minimal_scene_files(tmp_path)
        write_proposals(
            [MaskProposal(label_id=3, sam_iou=0.9, objectness_2d=0.9, box2d=Box2D(0, 0, 0, 0))],
            tmp_path / "proposals.owtx",
        )
        with pytest.raises(FormatError, match="label_id 3 absent"):
            load_scene(manifest)

    def test_bad_split_tag(self, tmp_path):
        manifest = minimal_scene_files(tmp_path)
        extra = "\n[annotation]\ncenter: 0 0 0\nobjectness: 1\nsize: 1 1 1\nsplit: weird\n"
        with open(manifest, "a") as fh:
            fh.write(extra)
        with pytest.raises(FormatError, match="split"):
            load_scene(manifest)

    def test_synth_scene_round_trip(self, tmp_path):
        # oracle: saved synthetic scene loads and re-serializes byte-identically
        synth = generate(SynthSpec(seed=12, n_objects=3, raster_width=64, raster_height=64))
        d1 = tmp_path / "one"
        d2 = tmp_path / "two"
        manifest = save_synth_scene(synth, d1)
        scene = load_scene(manifest)

        os.makedirs(d2)
        write_point_cloud(scene.cloud, d2 / "cloud.owpc")
        write_raster(scene.prior_iou, d2 / "iou.owrf")
        write_raster(scene.prior_attention, d2 / "attention.owrf")
        write_labels(scene.labels, d2 / "labels.owrm")
        write_proposals(scene.proposals, d2 / "proposals.owtx")
        files = {
            "point_cloud": "cloud.owpc",
            "iou_prior": "iou.owrf",
            "attention_prior": "attention.owrf",
            "labels": "labels.owrm",
            "proposals": "proposals.owtx",
        }
        write_manifest(d2 / "manifest.owtx", scene.camera, files, scene.annotations)
        for name in ("cloud.owpc", "iou.owrf", "attention.owrf", "labels.owrm",
                     "proposals.owtx", "manifest.owtx"):
            assert (d1 / name).read_bytes() == (d2 / name).read_bytes(), name

    def test_two_loads_equal(self, tmp_path):
        synth = generate(SynthSpec(seed=5, n_objects=2, raster_width=48, raster_height=48))
        manifest = save_synth_scene(synth, tmp_path / "s")
        a = load_scene(manifest)
        b = load_scene(manifest)
        assert np.array_equal(a.cloud.points, b.cloud.points)
        assert np.array_equal(a.labels.values, b.labels.values)
        assert a.proposals == b.proposals
        assert a.annotations == b.annotations
