"""Deterministic top-down SVG rendering of a scene and its boxes.

Orthographic projection onto the world x/y plane: point cloud as dots,
ground-truth boxes and predicted boxes as rectangles with scores.
Element order and float formatting are fixed, so identical inputs render
byte-identical files.
"""

from .formats import Scene

_CANVAS = 640
_MARGIN = 40

_STYLE = (
    "text { font-family: monospace; font-size: 11px; }"
    " .gt { fill: none; stroke: #1a7f37; stroke-width: 1.5; }"
    " .pred { fill: none; stroke: #c62828; stroke-width: 1.5; stroke-dasharray: 4 2; }"
    " .pt { fill: #4a6da7; }"
)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render(scene: Scene, pred_boxes, out_path) -> None:
    """Write an SVG plot of the scene's cloud, GT boxes, and predictions."""
    pts = scene.cloud.points
    gt = [ann.box for ann in scene.annotations if ann.objectness == 1]

    xs: list[float] = []
    ys: list[float] = []
    if len(pts):
        xs += [float(pts[:, 0].min()), float(pts[:, 0].max())]
        ys += [float(pts[:, 1].min()), float(pts[:, 1].max())]
    for box in list(gt) + list(pred_boxes):
        lo, hi = box.min_corner(), box.max_corner()
        xs += [lo[0], hi[0]]
        ys += [lo[1], hi[1]]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x0, x1 = min(xs) - 0.5, max(xs) + 0.5
    y0, y1 = min(ys) - 0.5, max(ys) + 0.5
    span = max(x1 - x0, y1 - y0)
    scale = (_CANVAS - 2 * _MARGIN) / span

    def sx(x: float) -> float:
        return _MARGIN + (x - x0) * scale

    def sy(y: float) -> float:
        # world +y points up; svg +y points down
        return _CANVAS - _MARGIN - (y - y0) * scale

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_CANVAS}" height="{_CANVAS}" '
        f'viewBox="0 0 {_CANVAS} {_CANVAS}">',
        f"<style>{_STYLE}</style>",
        f'<rect x="0" y="0" width="{_CANVAS}" height="{_CANVAS}" fill="#ffffff"/>',
        f'<rect x="{_MARGIN}" y="{_MARGIN}" width="{_CANVAS - 2 * _MARGIN}" '
        f'height="{_CANVAS - 2 * _MARGIN}" fill="none" stroke="#888888"/>',
        f'<text x="{_MARGIN}" y="{_CANVAS - _MARGIN + 16}">x: {_fmt(x0)} .. {_fmt(x0 + span)} m</text>',
        f'<text x="8" y="{_MARGIN - 8}">y: {_fmt(y0)} .. {_fmt(y0 + span)} m</text>',
    ]

    for i in range(len(pts)):
        lines.append(
            f'<circle class="pt" cx="{_fmt(sx(float(pts[i, 0])))}" '
            f'cy="{_fmt(sy(float(pts[i, 1])))}" r="1.2"/>'
        )

    def rect(box, cls: str) -> str:
        lo, hi = box.min_corner(), box.max_corner()
        return (
            f'<rect class="{cls}" x="{_fmt(sx(lo[0]))}" y="{_fmt(sy(hi[1]))}" '
            f'width="{_fmt((hi[0] - lo[0]) * scale)}" height="{_fmt((hi[1] - lo[1]) * scale)}"/>'
        )

    for box in gt:
        lines.append(rect(box, "gt"))
    for box in pred_boxes:
        lines.append(rect(box, "pred"))
        lo, hi = box.min_corner(), box.max_corner()
        lines.append(
            f'<text x="{_fmt(sx(lo[0]))}" y="{_fmt(sy(hi[1]) - 3)}" '
            f'fill="#c62828">{box.score:.3f}</text>'
        )

    legend_y = _MARGIN + 14
    lines.append(f'<rect class="gt" x="{_CANVAS - 150}" y="{legend_y - 10}" width="18" height="10"/>')
    lines.append(f'<text x="{_CANVAS - 126}" y="{legend_y}">gt</text>')
    lines.append(
        f'<rect class="pred" x="{_CANVAS - 150}" y="{legend_y + 10}" width="18" height="10"/>'
    )
    lines.append(f'<text x="{_CANVAS - 126}" y="{legend_y + 20}">pred</text>')
    lines.append("</svg>")

    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
