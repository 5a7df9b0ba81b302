"""Deterministic synthetic RGB-D scene generator.

Places disjoint axis-aligned boxes in a room, ray-casts one depth value
per pixel against them (nearest hit), and derives every pipeline input
from the hits: the point cloud, the per-pixel label raster (clean masks),
the two object-prior rasters (radial bumps peaking inside each mask), and
the proposal table. Ground truth is the placed (amodal) boxes plus the
bounding boxes of each object's visible points.

Determinism: every draw comes from a 64-bit split-mix stream seeded by
the SynthSpec. Draw order: (1) per placement attempt, six uniforms (size xyz,
center xyz); (2) per object with visible pixels, in label order, two
uniforms (mask quality, then 2D objectness); (3) fragmentation uses an
independent stream derived from the seed (one axis draw per bisection,
one drop draw per fragment).

Box corners snap to multiples of 2^-10 m and hit points snap to float32,
with the hit coordinate pinned to the face plane, so every stored cloud
point lies exactly on a face of its generating box even after the
float32 point-cloud format round-trips.

A fragmentation mode mimics the mask generator's failure mode: clean
masks split into pieces that become separate, down-weighted proposals.
"""

import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .boxes import Box2D, Box3D
from .formats import (
    Annotation,
    LabelRaster,
    MaskProposal,
    PriorRaster,
    Scene,
    write_boxes,
    write_labels,
    write_manifest,
    write_point_cloud,
    write_proposals,
    write_raster,
)
from .geometry import MIN_DEPTH, CameraModel, PointCloud

_MASK64 = (1 << 64) - 1
_FRAG_SALT = 0x4652414747454E  # fragmentation stream
_OBJECT_COUNT_SALT = 0x4F424A45435453  # per-scene object-count stream
_SNAP = 1024.0  # box corners snap to 1/1024 m (exact in float32)

# Clean proposals draw sam_iou uniform in [0.7, 1.0]; the second score is
# drawn in [max(0.7, 0.62/sam_iou), 1.0] so both stay in [0.7, 1.0] while
# their product clears the default 0.6 fused-score filter. Fragments get
# area-scaled sam_iou and fall below it.
_SCORE_LO = 0.7
_PRODUCT_FLOOR = 0.62


class GenerationError(RuntimeError):
    pass


class SplitMix64:
    """64-bit split-mix generator; reproducible across platforms."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + 0x9E3779B97F4A7C15) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return (z ^ (z >> 31)) & _MASK64

    def next_float(self) -> float:
        # 53-bit mantissa in [0, 1)
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi] (modulo bias is irrelevant here)."""
        if hi < lo:
            raise ValueError("empty range")
        return lo + self.next_u64() % (hi - lo + 1)


@dataclass(frozen=True)
class FragmentSpec:
    enabled: bool = False
    fragments: int = 1
    drop: float = 0.0

    def __post_init__(self):
        if self.fragments < 1:
            raise ValueError("fragments must be >= 1")
        if not 0.0 <= self.drop < 1.0:
            raise ValueError("drop probability must be in [0, 1)")


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_objects: int = 5
    room_min: tuple[float, float, float] = (0.0, 0.0, 0.0)
    room_max: tuple[float, float, float] = (5.0, 5.0, 2.2)
    size_min: float = 0.4
    size_max: float = 1.1
    raster_width: int = 160
    raster_height: int = 160
    camera: CameraModel | None = None
    fragmentation: FragmentSpec = field(default_factory=FragmentSpec)
    min_gap: float = 0.25  # face-to-face separation between placed boxes

    def __post_init__(self):
        if self.n_objects < 0:
            raise ValueError("n_objects must be >= 0")
        if self.raster_width < 8 or self.raster_height < 8:
            raise ValueError("raster dims must be at least 8x8")
        span = [b - a for a, b in zip(self.room_min, self.room_max)]
        if any(s <= 0 for s in span):
            raise ValueError("room bounds must be non-degenerate")
        if not 0 < self.size_min <= self.size_max:
            raise ValueError("object size range must be positive and ordered")
        if any(self.size_max >= s for s in span):
            raise ValueError("size_max must fit inside the room on every axis")
        if self.min_gap < 0:
            raise ValueError("min_gap must be non-negative")


@dataclass(frozen=True)
class SynthScene:
    """Generated scene plus the ground truth the scene files do not carry."""

    scene: Scene
    amodal_boxes: tuple[Box3D, ...]
    visible_boxes: tuple  # Box3D or None per object (None: no visible pixel)
    splits: tuple[str, ...]
    clean_labels: LabelRaster
    clean_proposals: tuple[MaskProposal, ...]
    fragment_parents: tuple[int, ...] = ()  # per active proposal: 1-based object id

    @property
    def fragmented(self) -> bool:
        return self.scene.labels is not self.clean_labels


def derive_scene_specs(
    seed: int,
    count: int,
    objects: tuple[int, int] = (3, 8),
    raster_width: int = 160,
    raster_height: int = 160,
    fragmentation: FragmentSpec | None = None,
) -> list[SynthSpec]:
    """Derive per-scene specs from one master seed.

    The master split-mix stream yields one seed per scene; each scene's
    object count comes from a salted stream of its own seed. This is the
    derivation the CLI uses, exposed so tests can reproduce it.
    """
    lo, hi = objects
    master = SplitMix64(seed)
    specs = []
    for _ in range(count):
        scene_seed = master.next_u64()
        n = SplitMix64(scene_seed ^ _OBJECT_COUNT_SALT).randint(lo, hi)
        specs.append(
            SynthSpec(
                seed=scene_seed,
                n_objects=n,
                raster_width=raster_width,
                raster_height=raster_height,
                fragmentation=fragmentation or FragmentSpec(),
            )
        )
    return specs


def default_camera(spec: SynthSpec) -> CameraModel:
    """Elevated front view looking down into the room.

    The placement balances two needs: every box stays inside the frustum,
    and both the top and front face families sample densely enough that
    adjacent-pixel hit points stay within the default 0.1 m clustering
    radius. The bounding box of an unoccluded object's visible points
    then recovers nearly its full extent.
    """
    lo = np.asarray(spec.room_min)
    hi = np.asarray(spec.room_max)
    center = (lo + hi) / 2.0
    eye = np.array(
        [center[0], lo[1] - 0.65 * (hi[1] - lo[1]), hi[2] + 1.85 * (hi[2] - lo[2])]
    )
    target = np.array([center[0], center[1], lo[2] + 0.25 * (hi[2] - lo[2])])

    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    x_c = np.cross(fwd, up)
    x_c = x_c / np.linalg.norm(x_c)
    y_c = np.cross(fwd, x_c)
    rot = np.stack([x_c, y_c, fwd])
    trans = -rot @ eye

    w, h = spec.raster_width, spec.raster_height
    f = 1.2 * w
    intr = np.array(
        [[f, 0.0, (w - 1) / 2.0], [0.0, f, (h - 1) / 2.0], [0.0, 0.0, 1.0]]
    )
    return CameraModel(
        intrinsics=intr,
        extrinsics=np.concatenate([rot, trans[:, None]], axis=1),
        image_width=w,
        image_height=h,
    )


def _snap(v: float) -> float:
    return round(v * _SNAP) / _SNAP


def _place_boxes(spec: SynthSpec, rng: SplitMix64):
    """Rejection-sample disjoint boxes; returns (lo, hi) corner arrays."""
    lo_list: list[np.ndarray] = []
    hi_list: list[np.ndarray] = []
    cap = 200 * max(spec.n_objects, 1)
    attempts = 0
    while len(lo_list) < spec.n_objects:
        if attempts >= cap:
            raise GenerationError(
                f"box placement exceeded the rejection cap of {cap} attempts"
            )
        attempts += 1
        size = np.array([rng.uniform(spec.size_min, spec.size_max) for _ in range(3)])
        center = np.array(
            [
                rng.uniform(spec.room_min[k] + size[k] / 2.0, spec.room_max[k] - size[k] / 2.0)
                for k in range(3)
            ]
        )
        lo = np.array([_snap(v) for v in center - size / 2.0])
        hi = np.array([_snap(v) for v in center + size / 2.0])
        if any(hi[k] - lo[k] < spec.size_min / 2.0 for k in range(3)):
            continue
        if any(lo[k] < spec.room_min[k] or hi[k] > spec.room_max[k] for k in range(3)):
            continue
        ok = True
        for plo, phi in zip(lo_list, hi_list):
            separation = max(
                max(lo[k] - phi[k], plo[k] - hi[k]) for k in range(3)
            )
            if separation < spec.min_gap:
                ok = False
                break
        if ok:
            lo_list.append(lo)
            hi_list.append(hi)
    if not lo_list:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return np.stack(lo_list), np.stack(hi_list)


def _raycast_scene(cam: CameraModel, bmin: np.ndarray, bmax: np.ndarray):
    """Per-pixel nearest box hit; returns (labels HxW, points, pixel ids).

    Hit points are pinned to the hit face plane, rounded to float32, and
    clamped into the box so every stored point lies exactly on a face.
    """
    w, h = cam.image_width, cam.image_height
    ys, xs = np.mgrid[0:h, 0:w]
    homo = np.stack(
        [xs.reshape(-1).astype(np.float64), ys.reshape(-1).astype(np.float64), np.ones(w * h)],
        axis=1,
    )
    dirs_cam = homo @ np.linalg.inv(cam.intrinsics).T
    dirs = dirs_cam @ cam.rotation
    origin = cam.center_world()

    t, hit, axis, side = kernels.raycast_aabbs(
        np.ascontiguousarray(origin),
        np.ascontiguousarray(dirs),
        np.ascontiguousarray(bmin),
        np.ascontiguousarray(bmax),
        MIN_DEPTH,
    )
    labels = np.zeros(w * h, dtype=np.uint16)
    hit_pix = np.nonzero(hit >= 0)[0]
    labels[hit_pix] = (hit[hit_pix] + 1).astype(np.uint16)

    pts = origin[None, :] + t[hit_pix, None] * dirs[hit_pix]
    if hit_pix.size:
        b = hit[hit_pix]
        a = axis[hit_pix]
        face = np.where(side[hit_pix] == 1, bmax[b, a], bmin[b, a])
        pts[np.arange(hit_pix.size), a] = face
        pts = pts.astype(np.float32).astype(np.float64)
        pts = np.minimum(np.maximum(pts, bmin[b]), bmax[b])
    return labels.reshape(h, w), pts, hit_pix


def _bump_rasters(labels: np.ndarray, w: int, h: int):
    """Radial prior bumps per mask: value 1 at the peak pixel, linear falloff.

    The peak is the mask pixel nearest the mask centroid (ties row-major),
    so the maximum of each object's bump lies inside its mask. The second
    raster uses doubled falloff radius, standing in for a coarser
    attention map.
    """
    iou_r = np.zeros((h, w), dtype=np.float64)
    attn_r = np.zeros((h, w), dtype=np.float64)
    ys, xs = np.mgrid[0:h, 0:w]
    for label in sorted(int(v) for v in np.unique(labels) if v != 0):
        mask = labels == label
        my, mx = np.nonzero(mask)
        cx = mx.mean()
        cy = my.mean()
        d2 = (mx - cx) ** 2 + (my - cy) ** 2
        order = np.lexsort((mx, my, d2))
        px, py = int(mx[order[0]]), int(my[order[0]])
        radius = math.sqrt(float(((mx - px) ** 2 + (my - py) ** 2).max())) + 1.0
        dist = np.sqrt((xs - px) ** 2.0 + (ys - py) ** 2.0)
        iou_r = np.maximum(iou_r, np.clip(1.0 - dist / radius, 0.0, 1.0))
        attn_r = np.maximum(attn_r, np.clip(1.0 - dist / (2.0 * radius), 0.0, 1.0))
    return (
        PriorRaster(values=iou_r.astype(np.float32)),
        PriorRaster(values=attn_r.astype(np.float32)),
    )


def _mask_box2d(labels: np.ndarray, label: int) -> Box2D:
    my, mx = np.nonzero(labels == label)
    return Box2D(float(mx.min()), float(my.min()), float(mx.max()), float(my.max()))


def _splits_by_volume(boxes) -> tuple[str, ...]:
    # largest 30% by volume (ceil) are "base", the rest "novel"
    n = len(boxes)
    if n == 0:
        return ()
    order = sorted(range(n), key=lambda i: (-boxes[i].volume(), i))
    n_base = (3 * n + 9) // 10
    tags = ["novel"] * n
    for i in order[:n_base]:
        tags[i] = "base"
    return tuple(tags)


def generate(spec: SynthSpec) -> SynthScene:
    """Generate a full synthetic scene (fragmented when spec.fragmentation says so)."""
    rng = SplitMix64(spec.seed)
    bmin, bmax = _place_boxes(spec, rng)
    cam = spec.camera if spec.camera is not None else default_camera(spec)

    labels_grid, pts, hit_pix = _raycast_scene(cam, bmin, bmax)
    cloud = PointCloud(points=pts)
    labels = LabelRaster(values=labels_grid)
    prior_iou, prior_attn = _bump_rasters(labels_grid, cam.image_width, cam.image_height)

    amodal = tuple(
        Box3D.from_corners(bmin[i], bmax[i], score=1.0) for i in range(spec.n_objects)
    )
    flat_labels = labels_grid.reshape(-1)
    visible: list = []
    for i in range(spec.n_objects):
        rows = np.nonzero(flat_labels[hit_pix] == i + 1)[0]
        if rows.size == 0:
            visible.append(None)
            continue
        sub = pts[rows]
        lo = sub.min(axis=0)
        hi = sub.max(axis=0)
        visible.append(
            Box3D.from_corners(lo, np.maximum(hi, lo + 1e-6), score=1.0)
        )

    proposals = []
    for label in range(1, spec.n_objects + 1):
        if not (labels_grid == label).any():
            continue
        sam_iou = rng.uniform(_SCORE_LO, 1.0)
        lo2 = max(_SCORE_LO, _PRODUCT_FLOOR / sam_iou)
        objectness = rng.uniform(lo2, 1.0)
        proposals.append(
            MaskProposal(
                label_id=label,
                sam_iou=sam_iou,
                objectness_2d=objectness,
                box2d=_mask_box2d(labels_grid, label),
            )
        )

    splits = _splits_by_volume(amodal)
    annotations = tuple(
        Annotation(objectness=1, box=amodal[i], split=splits[i])
        for i in range(spec.n_objects)
    )
    scene = Scene(
        camera=cam,
        cloud=cloud,
        prior_iou=prior_iou,
        prior_attention=prior_attn,
        labels=labels,
        proposals=tuple(proposals),
        annotations=annotations,
    )
    synth = SynthScene(
        scene=scene,
        amodal_boxes=amodal,
        visible_boxes=tuple(visible),
        splits=splits,
        clean_labels=labels,
        clean_proposals=tuple(proposals),
        fragment_parents=tuple(p.label_id for p in proposals),
    )
    if spec.fragmentation.enabled:
        synth = fragment_masks(synth, spec)
    return synth


def fragment_masks(synth: SynthScene, spec: SynthSpec) -> SynthScene:
    """Split each clean mask into pieces that become separate proposals.

    Pieces come from repeated bisections of the mask's pixel set: each
    step halves the currently largest piece (ties: earliest) across a
    randomly drawn axis at the median rank. Fragment proposals inherit
    the parent's 2D objectness, scale sam_iou by their area fraction,
    and are deleted with probability ``drop``.
    """
    frag = spec.fragmentation
    if frag.fragments <= 1 and frag.drop <= 0.0:
        return synth
    rng = SplitMix64(spec.seed ^ _FRAG_SALT)
    clean = synth.clean_labels.values
    h, w = clean.shape
    parent_by_label = {p.label_id: p for p in synth.clean_proposals}

    new_labels = np.zeros((h, w), dtype=np.uint16)
    new_props: list[MaskProposal] = []
    parents: list[int] = []
    next_label = 1
    for label in sorted(parent_by_label):
        parent = parent_by_label[label]
        my, mx = np.nonzero(clean == label)
        pixels = list(zip(mx.tolist(), my.tolist()))
        pixels.sort(key=lambda p: (p[1], p[0]))  # row-major
        total = len(pixels)

        pieces = [pixels]
        while len(pieces) < frag.fragments:
            li = max(range(len(pieces)), key=lambda i: (len(pieces[i]), -i))
            piece = pieces[li]
            if len(piece) < 2:
                break
            axis = rng.next_u64() & 1
            key = (lambda p: (p[0], p[1])) if axis == 0 else (lambda p: (p[1], p[0]))
            ordered = sorted(piece, key=key)
            half = len(ordered) // 2
            pieces[li : li + 1] = [ordered[:half], ordered[half:]]

        for piece in pieces:
            u = rng.next_float()
            if u < frag.drop:
                continue
            xs = [p[0] for p in piece]
            ys = [p[1] for p in piece]
            for x, y in piece:
                new_labels[y, x] = next_label
            new_props.append(
                MaskProposal(
                    label_id=next_label,
                    sam_iou=parent.sam_iou * (len(piece) / total),
                    objectness_2d=parent.objectness_2d,
                    box2d=Box2D(float(min(xs)), float(min(ys)), float(max(xs)), float(max(ys))),
                )
            )
            parents.append(label)
            next_label += 1

    scene = Scene(
        camera=synth.scene.camera,
        cloud=synth.scene.cloud,
        prior_iou=synth.scene.prior_iou,
        prior_attention=synth.scene.prior_attention,
        labels=LabelRaster(values=new_labels),
        proposals=tuple(new_props),
        annotations=synth.scene.annotations,
    )
    return SynthScene(
        scene=scene,
        amodal_boxes=synth.amodal_boxes,
        visible_boxes=synth.visible_boxes,
        splits=synth.splits,
        clean_labels=synth.clean_labels,
        clean_proposals=synth.clean_proposals,
        fragment_parents=tuple(parents),
    )


def save_synth_scene(synth: SynthScene, out_dir) -> str:
    """Write all scene files plus ground-truth extras; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    scene = synth.scene

    write_point_cloud(scene.cloud, os.path.join(out_dir, "cloud.owpc"))
    write_raster(scene.prior_iou, os.path.join(out_dir, "iou.owrf"))
    write_raster(scene.prior_attention, os.path.join(out_dir, "attention.owrf"))
    write_labels(scene.labels, os.path.join(out_dir, "labels.owrm"))
    write_proposals(scene.proposals, os.path.join(out_dir, "proposals.owtx"))
    files = {
        "point_cloud": "cloud.owpc",
        "iou_prior": "iou.owrf",
        "attention_prior": "attention.owrf",
        "labels": "labels.owrm",
        "proposals": "proposals.owtx",
    }
    if synth.fragmented:
        write_labels(synth.clean_labels, os.path.join(out_dir, "labels_clean.owrm"))
        write_proposals(synth.clean_proposals, os.path.join(out_dir, "proposals_clean.owtx"))

    vis_boxes = [b for b in synth.visible_boxes if b is not None]
    vis_ids = [i + 1 for i, b in enumerate(synth.visible_boxes) if b is not None]
    write_boxes(
        os.path.join(out_dir, "visible_gt.owtx"),
        {"content": "visible-point ground truth"},
        vis_boxes,
        extras=[{"object": oid} for oid in vis_ids],
    )

    manifest = os.path.join(out_dir, "manifest.owtx")
    write_manifest(manifest, scene.camera, files, scene.annotations)
    return manifest
