"""File formats and the scene manifest.

Binary formats (all little-endian, versioned by 4-byte magic):

  OWRF  score raster   magic, u32 width, u32 height, u32 channels,
                       then channels planes of height*width float32
                       (row-major). Values must be finite and in [0, 1].
  OWRM  label raster   magic, u32 width, u32 height, then height*width
                       uint16 (0 = background).
  OWPC  point cloud    magic, u32 count, then count records of three
                       float32 (x, y, z meters).

Text files (.owtx) are line-oriented records: a ``[type]`` header line
followed by ``key: value`` lines with keys in sorted order, records
separated by a blank line. ``#`` lines are comments. Serialization is
deterministic: floats use shortest round-trip repr, keys are sorted.

The scene manifest ties together the point cloud, prior rasters, label
raster, proposal table, camera parameters and ground-truth annotations
(with a base/novel split tag per annotation).
"""

import os
import struct
from dataclasses import dataclass

import numpy as np

from .boxes import Box2D, Box3D
from .geometry import CameraModel, PointCloud

_U32 = struct.Struct("<I")

RASTER_MAGIC = b"OWRF"
LABEL_MAGIC = b"OWRM"
CLOUD_MAGIC = b"OWPC"

SPLIT_TAGS = ("base", "novel")


class FormatError(ValueError):
    """Parse/validation failure; carries the source path and byte offset."""

    def __init__(self, message: str, *, path=None, offset: int | None = None):
        detail = message
        if offset is not None:
            detail += f" (byte offset {offset})"
        if path is not None:
            detail += f" [{path}]"
        super().__init__(detail)
        self.path = path
        self.offset = offset


# ---------------------------------------------------------------------------
# raster / cloud payload types


@dataclass(frozen=True)
class PriorRaster:
    """Single-channel per-pixel score raster, float32 in [0, 1]."""

    values: np.ndarray  # (height, width) float32

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"prior raster must be 2D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("prior raster values must be finite")
        if v.size and (float(v.min()) < 0.0 or float(v.max()) > 1.0):
            raise ValueError("prior raster values must be in [0, 1]")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureRaster:
    """Multi-channel raster, float32 in [0, 1], plane-major layout."""

    values: np.ndarray  # (channels, height, width) float32

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"feature raster must be 3D, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("feature raster values must be finite")
        if v.size and (float(v.min()) < 0.0 or float(v.max()) > 1.0):
            raise ValueError("feature raster values must be in [0, 1]")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class LabelRaster:
    """Per-pixel uint16 segment labels; 0 is background."""

    values: np.ndarray  # (height, width) uint16

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError(f"label raster must be 2D, got shape {v.shape}")
        if v.dtype != np.uint16:
            if v.size and (v.min() < 0 or v.max() > np.iinfo(np.uint16).max):
                raise ValueError("labels must fit in uint16")
            v = v.astype(np.uint16)
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def label_set(self) -> set[int]:
        return {int(v) for v in np.unique(self.values) if v != 0}


# ---------------------------------------------------------------------------
# binary readers / writers


def _need(buf: bytes, offset: int, size: int, path, what: str) -> bytes:
    if offset + size > len(buf):
        raise FormatError(
            f"truncated payload: need {size} bytes for {what}",
            path=path,
            offset=offset,
        )
    return buf[offset : offset + size]


def _check_unit_floats(vals: np.ndarray, base_offset: int, path) -> None:
    bad_finite = ~np.isfinite(vals)
    if bad_finite.any():
        idx = int(np.argmax(bad_finite))
        raise FormatError("non-finite float", path=path, offset=base_offset + 4 * idx)
    out_of_range = (vals < 0.0) | (vals > 1.0)
    if out_of_range.any():
        idx = int(np.argmax(out_of_range))
        raise FormatError(
            "prior value out of range [0, 1]", path=path, offset=base_offset + 4 * idx
        )


def read_raster(path):
    """Read an OWRF raster; PriorRaster for one channel, FeatureRaster otherwise."""
    buf = open(path, "rb").read()
    magic = _need(buf, 0, 4, path, "magic")
    if magic != RASTER_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {RASTER_MAGIC!r}", path=path, offset=0)
    width = _U32.unpack(_need(buf, 4, 4, path, "width"))[0]
    height = _U32.unpack(_need(buf, 8, 4, path, "height"))[0]
    channels = _U32.unpack(_need(buf, 12, 4, path, "channels"))[0]
    if width < 1 or height < 1 or channels < 1:
        raise FormatError(
            f"invalid dimensions {width}x{height}x{channels}", path=path, offset=4
        )
    count = width * height * channels
    payload = _need(buf, 16, 4 * count, path, f"{count} float32 values")
    if len(buf) != 16 + 4 * count:
        raise FormatError("trailing bytes after payload", path=path, offset=16 + 4 * count)
    vals = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    _check_unit_floats(vals, 16, path)
    grid = vals.reshape(channels, height, width)
    if channels == 1:
        return PriorRaster(values=grid[0])
    return FeatureRaster(values=grid)


def write_raster(raster, path) -> None:
    if isinstance(raster, PriorRaster):
        grid = raster.values[None, :, :]
    elif isinstance(raster, FeatureRaster):
        grid = raster.values
    else:
        raise TypeError(f"expected PriorRaster or FeatureRaster, got {type(raster)}")
    channels, height, width = grid.shape
    with open(path, "wb") as fh:
        fh.write(RASTER_MAGIC)
        fh.write(_U32.pack(width))
        fh.write(_U32.pack(height))
        fh.write(_U32.pack(channels))
        fh.write(np.ascontiguousarray(grid, dtype="<f4").tobytes())


def read_labels(path) -> LabelRaster:
    buf = open(path, "rb").read()
    magic = _need(buf, 0, 4, path, "magic")
    if magic != LABEL_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LABEL_MAGIC!r}", path=path, offset=0)
    width = _U32.unpack(_need(buf, 4, 4, path, "width"))[0]
    height = _U32.unpack(_need(buf, 8, 4, path, "height"))[0]
    if width < 1 or height < 1:
        raise FormatError(f"invalid dimensions {width}x{height}", path=path, offset=4)
    count = width * height
    payload = _need(buf, 12, 2 * count, path, f"{count} uint16 labels")
    if len(buf) != 12 + 2 * count:
        raise FormatError("trailing bytes after payload", path=path, offset=12 + 2 * count)
    vals = np.frombuffer(payload, dtype="<u2").reshape(height, width)
    return LabelRaster(values=vals)


def write_labels(labels: LabelRaster, path) -> None:
    with open(path, "wb") as fh:
        fh.write(LABEL_MAGIC)
        fh.write(_U32.pack(labels.width))
        fh.write(_U32.pack(labels.height))
        fh.write(np.ascontiguousarray(labels.values, dtype="<u2").tobytes())


def read_point_cloud(path) -> PointCloud:
    buf = open(path, "rb").read()
    magic = _need(buf, 0, 4, path, "magic")
    if magic != CLOUD_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CLOUD_MAGIC!r}", path=path, offset=0)
    count = _U32.unpack(_need(buf, 4, 4, path, "count"))[0]
    payload = _need(buf, 8, 12 * count, path, f"{count} xyz records")
    if len(buf) != 8 + 12 * count:
        raise FormatError("trailing bytes after payload", path=path, offset=8 + 12 * count)
    vals = np.frombuffer(payload, dtype="<f4")
    bad = ~np.isfinite(vals)
    if bad.any():
        idx = int(np.argmax(bad))
        raise FormatError("non-finite float", path=path, offset=8 + 4 * idx)
    return PointCloud(points=vals.astype(np.float64).reshape(count, 3))


def write_point_cloud(cloud: PointCloud, path) -> None:
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(_U32.pack(len(cloud)))
        fh.write(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# text records


def fmt_float(v) -> str:
    return repr(float(v))


def fmt_floats(vals) -> str:
    return " ".join(fmt_float(v) for v in vals)


def format_records(records) -> str:
    """Serialize [(type, {key: value})] deterministically (keys sorted)."""
    blocks = []
    for rtype, fields in records:
        lines = [f"[{rtype}]"]
        for key in sorted(fields):
            lines.append(f"{key}: {fields[key]}")
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_records(records, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_records(records))


def parse_records(text: str, source=None):
    """Parse record text into [(type, {key: raw string value})]."""
    records = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = (line[1:-1], {})
            records.append(current)
            continue
        if current is None:
            raise FormatError(f"line {lineno}: field outside any record", path=source)
        if ":" not in line:
            raise FormatError(f"line {lineno}: expected 'key: value'", path=source)
        key, value = line.split(":", 1)
        key = key.strip()
        if key in current[1]:
            raise FormatError(f"line {lineno}: duplicate key {key!r}", path=source)
        current[1][key] = value.strip()
    return records


def read_records(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_records(fh.read(), source=path)


class _Fields:
    """Typed access to one record's raw fields with contextual errors."""

    def __init__(self, rtype: str, fields: dict, source=None):
        self.rtype = rtype
        self.fields = fields
        self.source = source

    def _raw(self, key: str) -> str:
        if key not in self.fields:
            raise FormatError(f"[{self.rtype}] missing field {key!r}", path=self.source)
        return self.fields[key]

    def str_(self, key: str) -> str:
        return self._raw(key)

    def int_(self, key: str) -> int:
        raw = self._raw(key)
        try:
            return int(raw)
        except ValueError:
            raise FormatError(
                f"[{self.rtype}] field {key!r}: not an integer: {raw!r}", path=self.source
            ) from None

    def float_(self, key: str) -> float:
        raw = self._raw(key)
        try:
            return float(raw)
        except ValueError:
            raise FormatError(
                f"[{self.rtype}] field {key!r}: not a number: {raw!r}", path=self.source
            ) from None

    def floats(self, key: str, n: int):
        raw = self._raw(key)
        parts = raw.split()
        if len(parts) != n:
            raise FormatError(
                f"[{self.rtype}] field {key!r}: expected {n} numbers, got {len(parts)}",
                path=self.source,
            )
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            raise FormatError(
                f"[{self.rtype}] field {key!r}: not numbers: {raw!r}", path=self.source
            ) from None


# ---------------------------------------------------------------------------
# scene model


@dataclass(frozen=True)
class MaskProposal:
    """One class-agnostic segment candidate.

    label_id indexes the label raster; sam_iou is the mask generator's
    predicted mask quality; objectness_2d is the class-agnostic 2D
    detector score; box2d is the detector-refined 2D box.
    """

    label_id: int
    sam_iou: float
    objectness_2d: float
    box2d: Box2D

    def __post_init__(self):
        if self.label_id <= 0:
            raise ValueError(f"label_id must be positive, got {self.label_id}")
        for name, v in (("sam_iou", self.sam_iou), ("objectness_2d", self.objectness_2d)):
            if not (np.isfinite(v) and 0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {v}")


@dataclass(frozen=True)
class Annotation:
    """Ground-truth 3D box with binary objectness label and split tag."""

    objectness: int
    box: Box3D
    split: str

    def __post_init__(self):
        if self.objectness not in (0, 1):
            raise ValueError(f"objectness must be 0 or 1, got {self.objectness}")
        if self.split not in SPLIT_TAGS:
            raise ValueError(f"split must be one of {SPLIT_TAGS}, got {self.split!r}")


@dataclass(frozen=True)
class Scene:
    """Fully validated scene: the unit of all pipeline I/O."""

    camera: CameraModel
    cloud: PointCloud
    prior_iou: PriorRaster
    prior_attention: PriorRaster
    labels: LabelRaster
    proposals: tuple[MaskProposal, ...]
    annotations: tuple[Annotation, ...]

    def __post_init__(self):
        object.__setattr__(self, "proposals", tuple(self.proposals))
        object.__setattr__(self, "annotations", tuple(self.annotations))
        cam = self.camera
        for name, r in (
            ("iou_prior", self.prior_iou),
            ("attention_prior", self.prior_attention),
            ("labels", self.labels),
        ):
            if r.width != cam.image_width or r.height != cam.image_height:
                raise ValueError(
                    f"dimension mismatch: {name} is {r.width}x{r.height}, "
                    f"camera is {cam.image_width}x{cam.image_height}"
                )
        present = self.labels.label_set()
        for i, prop in enumerate(self.proposals):
            if prop.label_id not in present:
                raise ValueError(
                    f"proposal {i}: label_id {prop.label_id} absent from label raster"
                )


# ---------------------------------------------------------------------------
# proposal table / manifest / boxes / report files


def write_proposals(proposals, path) -> None:
    records = []
    for p in proposals:
        records.append(
            (
                "proposal",
                {
                    "label_id": str(p.label_id),
                    "sam_iou": fmt_float(p.sam_iou),
                    "objectness_2d": fmt_float(p.objectness_2d),
                    "box2d": fmt_floats(
                        (p.box2d.x_min, p.box2d.y_min, p.box2d.x_max, p.box2d.y_max)
                    ),
                },
            )
        )
    write_records(records, path)


def read_proposals(path):
    proposals = []
    for rtype, fields in read_records(path):
        if rtype != "proposal":
            raise FormatError(f"unexpected record [{rtype}] in proposal table", path=path)
        f = _Fields(rtype, fields, path)
        x0, y0, x1, y1 = f.floats("box2d", 4)
        try:
            proposals.append(
                MaskProposal(
                    label_id=f.int_("label_id"),
                    sam_iou=f.float_("sam_iou"),
                    objectness_2d=f.float_("objectness_2d"),
                    box2d=Box2D(x0, y0, x1, y1),
                )
            )
        except ValueError as exc:
            raise FormatError(f"invalid proposal: {exc}", path=path) from None
    return proposals


def camera_record(cam: CameraModel) -> dict:
    k = cam.intrinsics
    return {
        "fx": fmt_float(k[0, 0]),
        "fy": fmt_float(k[1, 1]),
        "cx": fmt_float(k[0, 2]),
        "cy": fmt_float(k[1, 2]),
        "width": str(cam.image_width),
        "height": str(cam.image_height),
        "extrinsics": fmt_floats(cam.extrinsics.reshape(-1)),
    }


def camera_from_fields(f: _Fields) -> CameraModel:
    fx, fy = f.float_("fx"), f.float_("fy")
    cx, cy = f.float_("cx"), f.float_("cy")
    intr = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    extr = np.asarray(f.floats("extrinsics", 12)).reshape(3, 4)
    try:
        return CameraModel(
            intrinsics=intr,
            extrinsics=extr,
            image_width=f.int_("width"),
            image_height=f.int_("height"),
        )
    except ValueError as exc:
        raise FormatError(f"[camera] invalid: {exc}", path=f.source) from None


def annotation_record(ann: Annotation) -> dict:
    return {
        "objectness": str(ann.objectness),
        "center": fmt_floats(ann.box.center),
        "size": fmt_floats(ann.box.size),
        "split": ann.split,
    }


def write_manifest(path, camera: CameraModel, files: dict, annotations) -> None:
    """Write a scene manifest. ``files`` maps role -> relative path."""
    required = {"point_cloud", "iou_prior", "attention_prior", "labels", "proposals"}
    missing = required - set(files)
    if missing:
        raise ValueError(f"manifest files missing roles: {sorted(missing)}")
    records = [("camera", camera_record(camera)), ("files", dict(files))]
    for ann in annotations:
        records.append(("annotation", annotation_record(ann)))
    write_records(records, path)


def load_scene(manifest_path) -> Scene:
    """Load and fully validate a scene from its manifest."""
    records = read_records(manifest_path)
    base = os.path.dirname(os.path.abspath(manifest_path))

    camera = None
    files = None
    annotations = []
    for rtype, fields in records:
        f = _Fields(rtype, fields, manifest_path)
        if rtype == "camera":
            camera = camera_from_fields(f)
        elif rtype == "files":
            files = f
        elif rtype == "annotation":
            center = f.floats("center", 3)
            size = f.floats("size", 3)
            split = f.str_("split")
            try:
                annotations.append(
                    Annotation(
                        objectness=f.int_("objectness"),
                        box=Box3D(center=center, size=size, score=1.0),
                        split=split,
                    )
                )
            except ValueError as exc:
                raise FormatError(f"invalid annotation: {exc}", path=manifest_path) from None
        else:
            raise FormatError(f"unexpected record [{rtype}] in manifest", path=manifest_path)
    if camera is None:
        raise FormatError("manifest has no [camera] record", path=manifest_path)
    if files is None:
        raise FormatError("manifest has no [files] record", path=manifest_path)

    def resolve(role: str) -> str:
        rel = files.str_(role)
        full = os.path.join(base, rel)
        if not os.path.exists(full):
            raise FormatError(f"missing file: {role} -> {rel}", path=manifest_path)
        return full

    cloud = read_point_cloud(resolve("point_cloud"))
    prior_iou = read_raster(resolve("iou_prior"))
    prior_attention = read_raster(resolve("attention_prior"))
    labels = read_labels(resolve("labels"))
    proposals = read_proposals(resolve("proposals"))
    for name, r in (("iou_prior", prior_iou), ("attention_prior", prior_attention)):
        if not isinstance(r, PriorRaster):
            raise FormatError(f"{name} must be single-channel", path=manifest_path)
    try:
        return Scene(
            camera=camera,
            cloud=cloud,
            prior_iou=prior_iou,
            prior_attention=prior_attention,
            labels=labels,
            proposals=tuple(proposals),
            annotations=tuple(annotations),
        )
    except ValueError as exc:
        raise FormatError(str(exc), path=manifest_path) from None


def write_boxes(path, config: dict, boxes, extras=None) -> None:
    """Write a 3D box table with a [config] header record.

    ``extras`` optionally supplies one extra string-field dict per box
    (e.g. provenance).
    """
    records = [("config", {k: str(v) for k, v in config.items()})]
    for i, box in enumerate(boxes):
        fields = {
            "center": fmt_floats(box.center),
            "size": fmt_floats(box.size),
            "score": fmt_float(box.score),
        }
        if extras is not None:
            fields.update({k: str(v) for k, v in extras[i].items()})
        records.append(("box3d", fields))
    write_records(records, path)


def read_boxes(path):
    """Read a 3D box table; returns (config dict, [Box3D])."""
    config: dict = {}
    boxes = []
    for rtype, fields in read_records(path):
        if rtype == "config":
            config = dict(fields)
        elif rtype == "box3d":
            f = _Fields(rtype, fields, path)
            try:
                boxes.append(
                    Box3D(
                        center=f.floats("center", 3),
                        size=f.floats("size", 3),
                        score=f.float_("score"),
                    )
                )
            except ValueError as exc:
                raise FormatError(f"invalid box3d: {exc}", path=path) from None
        else:
            raise FormatError(f"unexpected record [{rtype}] in box table", path=path)
    return config, boxes


def write_report(path, config: dict, fields: dict) -> None:
    records = [
        ("config", {k: str(v) for k, v in config.items()}),
        ("report", {k: str(v) for k, v in fields.items()}),
    ]
    write_records(records, path)


def read_report(path):
    config: dict = {}
    report: dict = {}
    for rtype, fields in read_records(path):
        if rtype == "config":
            config = dict(fields)
        elif rtype == "report":
            report = dict(fields)
        else:
            raise FormatError(f"unexpected record [{rtype}] in report", path=path)
    return config, report
