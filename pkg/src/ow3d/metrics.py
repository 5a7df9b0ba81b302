"""Class-agnostic detection metrics: average recall and average precision.

Matching is greedy: predictions are processed in descending score order
and each takes the unmatched ground-truth box with the highest IoU at or
above the threshold. Metrics micro-average over scenes (pooled counts).
The base/novel split restricts which ground truth is counted; predictions
are class-agnostic and never split-filtered.
"""

from dataclasses import dataclass

from .boxes import iou_3d


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching one scene's predictions against its ground truth.

    gt_match[g] is the matched prediction index or None. pred_tp[p] marks
    true positives; pred_ignored[p] marks predictions absorbed by ignored
    ground truth (excluded from precision/recall); pred_iou[p] is the IoU
    at match (0.0 for unmatched).
    """

    gt_match: tuple
    pred_tp: tuple
    pred_ignored: tuple
    pred_iou: tuple


def match_greedy(preds, gts, iou_threshold: float, ignore=None) -> MatchResult:
    """Greedily match predictions to ground truth at an IoU threshold.

    Predictions are processed in descending score order (ties: input
    order). Each matches the unmatched, non-ignored ground-truth box with
    the highest IoU >= threshold (ties: lower index). A prediction that
    matches nothing but overlaps an ignored ground-truth box at IoU >=
    threshold is flagged ignored instead of false positive.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if ignore is None:
        ignore = [False] * len(gts)
    if len(ignore) != len(gts):
        raise ValueError("ignore mask length must equal ground-truth count")

    gt_match: list = [None] * len(gts)
    pred_tp = [False] * len(preds)
    pred_ignored = [False] * len(preds)
    pred_iou = [0.0] * len(preds)

    order = sorted(range(len(preds)), key=lambda i: -preds[i].score)
    for pi in order:
        best_gt = -1
        best_iou = 0.0
        ignored_overlap = False
        for gi, gt in enumerate(gts):
            iou = iou_3d(preds[pi], gt)
            if iou < iou_threshold:
                continue
            if ignore[gi]:
                ignored_overlap = True
                continue
            if gt_match[gi] is not None:
                continue
            if iou > best_iou:
                best_iou = iou
                best_gt = gi
        if best_gt >= 0:
            gt_match[best_gt] = pi
            pred_tp[pi] = True
            pred_iou[pi] = best_iou
        elif ignored_overlap:
            pred_ignored[pi] = True
    return MatchResult(
        gt_match=tuple(gt_match),
        pred_tp=tuple(pred_tp),
        pred_ignored=tuple(pred_ignored),
        pred_iou=tuple(pred_iou),
    )


def average_recall(scenes, iou_threshold: float, split: str = "all"):
    """Matched fraction of ground truth, pooled over scenes.

    ``scenes`` is a list of (preds, gts, split_tags). Returns None when
    the split contains no ground truth (absent rather than 0).
    """
    total = 0
    matched = 0
    for preds, gts, tags in scenes:
        if len(tags) != len(gts):
            raise ValueError("one split tag per ground-truth box required")
        result = match_greedy(preds, gts, iou_threshold)
        for gi in range(len(gts)):
            if split != "all" and tags[gi] != split:
                continue
            total += 1
            if result.gt_match[gi] is not None:
                matched += 1
    if total == 0:
        return None
    return matched / total


def _ap_envelope(recalls, precisions) -> float:
    """Area under the precision envelope (all-point interpolation)."""
    mrec = [0.0] + list(recalls) + [1.0]
    mpre = [0.0] + list(precisions) + [0.0]
    for i in range(len(mpre) - 2, -1, -1):
        if mpre[i] < mpre[i + 1]:
            mpre[i] = mpre[i + 1]
    ap = 0.0
    for i in range(len(mrec) - 1):
        if mrec[i + 1] != mrec[i]:
            ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1]
    return ap


def average_precision(scenes, iou_threshold: float, split: str = "all"):
    """Pooled average precision at one IoU threshold.

    For a base/novel split, ground truth outside the split is ignored:
    it cannot be matched, and predictions overlapping it at IoU >=
    threshold are excluded from the precision/recall pool entirely.
    Returns None when no countable ground truth exists.
    """
    entries = []  # (score, scene index, pred index, tp)
    n_gt = 0
    for si, (preds, gts, tags) in enumerate(scenes):
        if len(tags) != len(gts):
            raise ValueError("one split tag per ground-truth box required")
        if split == "all":
            ignore = [False] * len(gts)
        else:
            ignore = [tag != split for tag in tags]
        n_gt += sum(1 for ig in ignore if not ig)
        result = match_greedy(preds, gts, iou_threshold, ignore=ignore)
        for pi, pred in enumerate(preds):
            if result.pred_ignored[pi]:
                continue
            entries.append((pred.score, si, pi, result.pred_tp[pi]))
    if n_gt == 0:
        return None
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    recalls = []
    precisions = []
    tp = 0
    fp = 0
    for score, si, pi, is_tp in entries:
        if is_tp:
            tp += 1
        else:
            fp += 1
        recalls.append(tp / n_gt)
        precisions.append(tp / (tp + fp))
    return _ap_envelope(recalls, precisions)


@dataclass(frozen=True)
class EvalReport:
    """Metric bundle for one evaluation run; absent metrics are None."""

    iou_threshold: float
    ar_all: float | None
    ar_base: float | None
    ar_novel: float | None
    ap_all: float | None
    ap_base: float | None
    ap_novel: float | None
    gt_total: int
    gt_base: int
    gt_novel: int
    pred_total: int

    def fields(self) -> dict:
        """Serializable report fields; absent metrics are omitted."""
        out = {
            "iou_threshold": repr(float(self.iou_threshold)),
            "gt_total": str(self.gt_total),
            "gt_base": str(self.gt_base),
            "gt_novel": str(self.gt_novel),
            "pred_total": str(self.pred_total),
        }
        for key in ("ar_all", "ar_base", "ar_novel", "ap_all", "ap_base", "ap_novel"):
            value = getattr(self, key)
            if value is not None:
                out[key] = repr(float(value))
        return out


def evaluate(scenes, iou_threshold: float, split_ap: bool = False) -> EvalReport:
    """Compute the full metric bundle over a list of scenes."""
    gt_total = sum(len(gts) for _, gts, _ in scenes)
    gt_base = sum(sum(1 for t in tags if t == "base") for _, _, tags in scenes)
    gt_novel = sum(sum(1 for t in tags if t == "novel") for _, _, tags in scenes)
    pred_total = sum(len(preds) for preds, _, _ in scenes)
    return EvalReport(
        iou_threshold=iou_threshold,
        ar_all=average_recall(scenes, iou_threshold, "all"),
        ar_base=average_recall(scenes, iou_threshold, "base"),
        ar_novel=average_recall(scenes, iou_threshold, "novel"),
        ap_all=average_precision(scenes, iou_threshold, "all"),
        ap_base=average_precision(scenes, iou_threshold, "base") if split_ap else None,
        ap_novel=average_precision(scenes, iou_threshold, "novel") if split_ap else None,
        gt_total=gt_total,
        gt_base=gt_base,
        gt_novel=gt_novel,
        pred_total=pred_total,
    )
