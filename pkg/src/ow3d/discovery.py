"""Prompt-free 3D object discovery.

Pipeline: combine the two object-prior rasters, greedily sample prior
peaks per suppression radius with 3D-distance suppression, deduplicate
across radii with 2D NMS, retrieve the mask proposals hit by the sampled
pixels, fuse and filter their scores, lift each surviving 2D box to a 3D
box by clustering the points inside it, and finish with a 3D NMS.

Everything here is a pure function of its inputs; repeated runs produce
identical output.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .boxes import Box2D, Box3D, iou_2d, nms_indices, points_in_box_2d
from .formats import LabelRaster, MaskProposal, PriorRaster, Scene
from .geometry import (
    DEFAULT_SEARCH_RADIUS_PX,
    CameraModel,
    PixelPointIndex,
    PointCloud,
    build_pixel_point_index,
)

# Flat clusters (e.g. all points on one face) are padded to this extent so
# the resulting box satisfies the strictly-positive-size invariant.
MIN_BOX_EXTENT = 1e-6


@dataclass(frozen=True)
class ScaleSchedule:
    """Ascending list of suppression radii in meters."""

    deltas: tuple[float, ...]

    def __post_init__(self):
        deltas = tuple(float(d) for d in self.deltas)
        object.__setattr__(self, "deltas", deltas)
        if not deltas:
            raise ValueError("schedule must be non-empty")
        if any(d <= 0 for d in deltas):
            raise ValueError(f"suppression radii must be positive, got {deltas}")
        if any(b <= a for a, b in zip(deltas, deltas[1:])):
            raise ValueError(f"suppression radii must be strictly ascending, got {deltas}")


@dataclass(frozen=True)
class SamplingBudget:
    """Cap on selected points per scale.

    ``n_point=None`` applies the default rule: half the number of assigned
    pixels, rounded up.
    """

    n_point: int | None = None

    def __post_init__(self):
        if self.n_point is not None and self.n_point <= 0:
            raise ValueError(f"n_point must be positive, got {self.n_point}")

    def resolve(self, assigned_pixels: int) -> int:
        if self.n_point is not None:
            return self.n_point
        return (assigned_pixels + 1) // 2


class Selection(NamedTuple):
    x: int
    y: int
    value: float


@dataclass(frozen=True)
class SelectionSet:
    """Per-scale ordered selections surviving cross-scale NMS."""

    deltas: tuple[float, ...]
    picks: tuple[tuple[Selection, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "deltas", tuple(self.deltas))
        object.__setattr__(self, "picks", tuple(tuple(p) for p in self.picks))
        if len(self.deltas) != len(self.picks):
            raise ValueError("one selection list per scale required")


@dataclass(frozen=True)
class ProposalHit:
    """A mask proposal retrieved by at least one selected pixel."""

    index: int
    proposal: MaskProposal
    scales: tuple[int, ...]


@dataclass(frozen=True)
class DiscoveredBox:
    """Final discovery output: a scored 3D box with provenance."""

    box: Box3D
    score: float
    proposal_index: int
    scales: tuple[int, ...]


@dataclass(frozen=True)
class DiscoveryConfig:
    deltas: tuple[float, ...] = (0.2, 0.5, 1.0, 2.0)
    n_point: int | None = None
    search_radius_px: float = DEFAULT_SEARCH_RADIUS_PX
    nms_iou_2d: float = 0.5
    nms_iou_3d: float = 0.5
    score_threshold: float = 0.6
    cluster_eps: float = 0.1
    cluster_min_pts: int = 5
    cluster_min_points: int = 20


def combine_priors(iou_map: PriorRaster, attention_map: PriorRaster) -> PriorRaster:
    """Elementwise product of independently min-max normalized priors.

    Constant inputs normalize to all ones, so a flat map acts as the
    multiplicative identity.
    """
    if (iou_map.width, iou_map.height) != (attention_map.width, attention_map.height):
        raise ValueError(
            f"dimension mismatch: {iou_map.width}x{iou_map.height} vs "
            f"{attention_map.width}x{attention_map.height}"
        )

    def normalized(values: np.ndarray) -> np.ndarray:
        v = values.astype(np.float64)
        lo = float(v.min())
        hi = float(v.max())
        if hi == lo:
            return np.ones_like(v)
        return (v - lo) / (hi - lo)

    out = normalized(iou_map.values) * normalized(attention_map.values)
    return PriorRaster(values=out.astype(np.float32))


def sample_single_scale(
    prior: PriorRaster,
    index: PixelPointIndex,
    cloud: PointCloud,
    delta: float,
    budget: SamplingBudget,
) -> list[Selection]:
    """Greedy selection at one suppression radius.

    Repeatedly selects the assigned pixel with the maximal current prior
    (ties: row-major first), then zeroes the prior at every assigned pixel
    whose owning point lies within ``delta`` meters of the selected
    pixel's owning point (the selection itself included). Stops at the
    budget or when no positive prior remains. Unassigned pixels are never
    selectable and never suppress anything.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if (prior.width, prior.height) != (index.width, index.height):
        raise ValueError(
            f"prior is {prior.width}x{prior.height}, index is {index.width}x{index.height}"
        )
    limit = budget.resolve(index.assigned_count)
    work = prior.values.astype(np.float64).reshape(-1)
    sel, vals = kernels.greedy_select(
        work,
        index.owner.reshape(-1),
        cloud.points,
        float(delta),
        int(limit),
    )
    width = prior.width
    return [
        Selection(x=int(p % width), y=int(p // width), value=float(v))
        for p, v in zip(sel, vals)
    ]


def _proposal_by_label(proposals) -> dict[int, tuple[int, MaskProposal]]:
    table: dict[int, tuple[int, MaskProposal]] = {}
    for i, prop in enumerate(proposals):
        table.setdefault(prop.label_id, (i, prop))
    return table


def sample_multi_scale(
    prior: PriorRaster,
    index: PixelPointIndex,
    cloud: PointCloud,
    schedule: ScaleSchedule,
    budget: SamplingBudget,
    labels: LabelRaster,
    proposals,
    nms_iou: float,
) -> SelectionSet:
    """Run the greedy sampler per radius and deduplicate across radii.

    Each radius samples from a fresh copy of the prior. The union of all
    selections is deduplicated by greedy NMS over the proposal boxes the
    selected pixels land on, ordered by prior value at selection time
    (ties: radius order, then selection order). Selections on background
    or unproposed labels carry no box: they survive NMS and suppress
    nothing.
    """
    per_scale = [
        sample_single_scale(prior, index, cloud, delta, budget)
        for delta in schedule.deltas
    ]
    table = _proposal_by_label(proposals)

    cands: list[tuple[int, int, Selection, Box2D | None]] = []
    for si, picks in enumerate(per_scale):
        for oi, sel in enumerate(picks):
            label = int(labels.values[sel.y, sel.x])
            entry = table.get(label) if label > 0 else None
            box = entry[1].box2d if entry is not None else None
            cands.append((si, oi, sel, box))

    order = sorted(range(len(cands)), key=lambda i: -cands[i][2].value)
    keep = [False] * len(cands)
    kept_boxes: list[Box2D] = []
    for i in order:
        box = cands[i][3]
        if box is None:
            keep[i] = True
            continue
        if all(iou_2d(box, kb) < nms_iou for kb in kept_boxes):
            keep[i] = True
            kept_boxes.append(box)

    picks_out: list[tuple[Selection, ...]] = []
    ci = 0
    for picks in per_scale:
        survivors = []
        for _ in picks:
            if keep[ci]:
                survivors.append(cands[ci][2])
            ci += 1
        picks_out.append(tuple(survivors))
    return SelectionSet(deltas=schedule.deltas, picks=tuple(picks_out))


def propose_boxes(
    selection: SelectionSet, labels: LabelRaster, proposals
) -> list[ProposalHit]:
    """Retrieve the proposals owning the selected pixels' labels.

    Proposals hit by multiple selections appear once (first-hit order);
    proposals never hit are dropped. Selections on background (label 0)
    or on labels without a proposal are skipped.
    """
    table = _proposal_by_label(proposals)
    order: list[int] = []
    scales: dict[int, list[int]] = {}
    for si, picks in enumerate(selection.picks):
        for sel in picks:
            label = int(labels.values[sel.y, sel.x])
            if label <= 0 or label not in table:
                continue
            pi, _ = table[label]
            if pi not in scales:
                order.append(pi)
                scales[pi] = []
            if si not in scales[pi]:
                scales[pi].append(si)
    return [
        ProposalHit(index=pi, proposal=proposals[pi], scales=tuple(scales[pi]))
        for pi in order
    ]


def fuse_score(proposal: MaskProposal) -> float:
    """Fused objectness: mask quality times 2D detector objectness."""
    return proposal.sam_iou * proposal.objectness_2d


def filter_proposals(proposals, threshold: float) -> list:
    """Keep proposals whose fused score is >= threshold."""
    return [p for p in proposals if fuse_score(p) >= threshold]


def dbscan(points: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering; returns per-point cluster id, -1 for noise.

    A point is a core point when its closed eps-ball contains at least
    ``min_pts`` points, itself included. Cluster ids are assigned in
    point-index scan order, so labeling is deterministic.
    """
    n = points.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return labels
    indptr, indices = kernels.radius_neighbors(
        np.ascontiguousarray(points, dtype=np.float64), float(eps)
    )
    visited = np.zeros(n, dtype=bool)
    cluster = 0
    for start in range(n):
        if visited[start]:
            continue
        visited[start] = True
        neigh = indices[indptr[start] : indptr[start + 1]]
        if neigh.size + 1 < min_pts:
            continue
        labels[start] = cluster
        queue = list(neigh)
        qi = 0
        while qi < len(queue):
            j = int(queue[qi])
            qi += 1
            if labels[j] == -1:
                labels[j] = cluster
            if not visited[j]:
                visited[j] = True
                jn = indices[indptr[j] : indptr[j + 1]]
                if jn.size + 1 >= min_pts:
                    queue.extend(jn)
        cluster += 1
    return labels


def lift_box_2d_to_3d(
    box2d: Box2D,
    cloud: PointCloud,
    cam: CameraModel,
    eps: float = 0.1,
    min_pts: int = 5,
    min_cluster: int = 20,
    score: float = 0.0,
):
    """Lift a 2D box to a 3D box by clustering the points inside it.

    Gathers visible points projecting inside the (image-clamped) box,
    density-clusters them, and returns the axis-aligned bounding box of
    the largest cluster (ties: earliest cluster id). Returns None when the
    largest cluster has fewer than ``min_cluster`` points.
    """
    w, h = cam.image_width, cam.image_height
    x0 = min(max(box2d.x_min, 0.0), w - 1.0)
    x1 = min(max(box2d.x_max, 0.0), w - 1.0)
    y0 = min(max(box2d.y_min, 0.0), h - 1.0)
    y1 = min(max(box2d.y_max, 0.0), h - 1.0)
    clamped = Box2D(x0, y0, x1, y1, score=box2d.score)
    inside = points_in_box_2d(cloud, cam, clamped)
    if inside.size < min_cluster:
        return None
    pts = cloud.points[inside]
    labels = dbscan(pts, eps, min_pts)
    n_clusters = int(labels.max()) + 1 if labels.size else 0
    if n_clusters == 0:
        return None
    sizes = np.bincount(labels[labels >= 0], minlength=n_clusters)
    best = int(np.argmax(sizes))
    if int(sizes[best]) < min_cluster:
        return None
    sub = pts[labels == best]
    lo = sub.min(axis=0)
    hi = sub.max(axis=0)
    size = np.maximum(hi - lo, MIN_BOX_EXTENT)
    center = (lo + hi) / 2.0
    return Box3D(center=tuple(center), size=tuple(size), score=score)


def discover(scene: Scene, config: DiscoveryConfig = DiscoveryConfig()) -> list[DiscoveredBox]:
    """End-to-end discovery on one scene; output sorted by descending score."""
    combined = combine_priors(scene.prior_iou, scene.prior_attention)
    index = build_pixel_point_index(scene.cloud, scene.camera, config.search_radius_px)
    selection = sample_multi_scale(
        combined,
        index,
        scene.cloud,
        ScaleSchedule(config.deltas),
        SamplingBudget(config.n_point),
        scene.labels,
        scene.proposals,
        config.nms_iou_2d,
    )
    hits = propose_boxes(selection, scene.labels, scene.proposals)
    hits = [h for h in hits if fuse_score(h.proposal) >= config.score_threshold]

    lifted: list[tuple[Box3D, ProposalHit]] = []
    for hit in hits:
        box = lift_box_2d_to_3d(
            hit.proposal.box2d,
            scene.cloud,
            scene.camera,
            eps=config.cluster_eps,
            min_pts=config.cluster_min_pts,
            min_cluster=config.cluster_min_points,
            score=fuse_score(hit.proposal),
        )
        if box is not None:
            lifted.append((box, hit))

    keep = nms_indices([box for box, _ in lifted], config.nms_iou_3d, metric="3d")
    return [
        DiscoveredBox(
            box=lifted[i][0],
            score=lifted[i][0].score,
            proposal_index=lifted[i][1].index,
            scales=lifted[i][1].scales,
        )
        for i in keep
    ]
