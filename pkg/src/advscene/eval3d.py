"""3D detection scoring: rotated 3D IoU, KITTI difficulty tiers, greedy
score-ordered matching and average precision over 40 recall positions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import kernels
from .kitti_io import DONTCARE, ObjectLabel3D

DIFFICULTIES = ("easy", "moderate", "hard")
# min 2D box height (px), max occlusion level, max truncation
TIER_LIMITS = {"easy": (40.0, 0, 0.15), "moderate": (25.0, 1, 0.30), "hard": (25.0, 2, 0.50)}
# ground truth of these classes is neither a target nor a false-positive source
NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}
N_RECALL_POSITIONS = 40


@dataclass(frozen=True)
class Box3D:
    center: tuple  # (x, y, z); y is the bottom face in KITTI camera frame
    dims: tuple  # (h, w, l)
    rotation_y: float

    def __post_init__(self):
        if not all(d > 0 for d in self.dims):
            raise ValueError(f"box dimensions must be positive, got {self.dims}")

    @classmethod
    def from_label(cls, label: ObjectLabel3D) -> "Box3D":
        return cls(tuple(label.location), tuple(label.dims), label.rotation_y)

    @property
    def volume(self) -> float:
        h, w, l = self.dims
        return h * w * l


def _corners(x, z, l, w, ry):
    # local CCW footprint in (x, z): length along x, width along z
    lx = np.array([0.5, 0.5, -0.5, -0.5])[None, :] * np.asarray(l)[:, None]
    lz = np.array([-0.5, 0.5, 0.5, -0.5])[None, :] * np.asarray(w)[:, None]
    c = np.cos(ry)[:, None]
    s = np.sin(ry)[:, None]
    gx = c * lx + s * lz + np.asarray(x)[:, None]
    gz = -s * lx + c * lz + np.asarray(z)[:, None]
    return np.stack([gx, gz], axis=-1)


def bev_corners(boxes) -> np.ndarray:
    """(N, 4, 2) counter-clockwise bird's-eye footprints in the (x, z) plane."""
    if not boxes:
        return np.zeros((0, 4, 2))
    arr = np.array([(b.center[0], b.center[2], b.dims[2], b.dims[1], b.rotation_y) for b in boxes],
                   dtype=np.float64)
    return _corners(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4])


def bev_polygon(box: Box3D) -> np.ndarray:
    """Four CCW (x, z) vertices of the box footprint rotated by rotation_y."""
    return bev_corners([box])[0]


def polygon_area(poly) -> float:
    """Signed shoelace area; positive for counter-clockwise order."""
    p = np.asarray(poly, dtype=np.float64)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def convex_intersection_area(p, q) -> float:
    """Area of the intersection of two convex CCW polygons."""
    return float(kernels.convex_clip_area(p, q))


def iou_matrix(a: Sequence[Box3D], b: Sequence[Box3D]) -> np.ndarray:
    """Pairwise 3D IoU; rows index ``a``."""
    if not a or not b:
        return np.zeros((len(a), len(b)))
    inter_bev = kernels.quad_overlap_matrix(bev_corners(a), bev_corners(b))
    ya = np.array([bx.center[1] for bx in a])
    ha = np.array([bx.dims[0] for bx in a])
    yb = np.array([bx.center[1] for bx in b])
    hb = np.array([bx.dims[0] for bx in b])
    bottom = np.minimum(ya[:, None], yb[None, :])
    top = np.maximum((ya - ha)[:, None], (yb - hb)[None, :])
    vertical = np.maximum(bottom - top, 0.0)
    inter = inter_bev * vertical
    vol_a = np.array([bx.volume for bx in a])
    vol_b = np.array([bx.volume for bx in b])
    union = vol_a[:, None] + vol_b[None, :] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return np.clip(iou, 0.0, 1.0)


def iou_3d(a: Box3D, b: Box3D) -> float:
    return float(iou_matrix([a], [b])[0, 0])


def assign_difficulty(label: ObjectLabel3D) -> frozenset:
    """Tiers the object counts toward; empty means ignored everywhere."""
    height = label.bbox_height
    return frozenset(
        tier for tier, (min_h, max_occ, max_trunc) in TIER_LIMITS.items()
        if height >= min_h and label.occlusion <= max_occ and label.truncation <= max_trunc
    )


@dataclass(frozen=True)
class EvalConfig:
    class_name: str = "Car"
    iou_threshold: float = 0.7
    difficulties: tuple = DIFFICULTIES
    dontcare_overlap: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        unknown = set(self.difficulties) - set(DIFFICULTIES)
        if unknown:
            raise ValueError(f"unknown difficulties: {sorted(unknown)}")


@dataclass
class PRSample:
    threshold: float
    recall: float
    precision: float


@dataclass
class EvalReport:
    config: EvalConfig
    ap: dict = field(default_factory=dict)  # difficulty -> AP3D_R40 percent, None if no GT
    num_gt: dict = field(default_factory=dict)
    pr: dict = field(default_factory=dict)  # difficulty -> list[PRSample]

    def items(self) -> list:
        out = [("class", self.config.class_name), ("iou_threshold", float(self.config.iou_threshold)),
               ("metric", "AP3D_R40")]
        for diff in self.config.difficulties:
            ap = self.ap.get(diff)
            out.append((f"ap3d_r40.{diff}", "nan" if ap is None else f"{ap:.4f}"))
            out.append((f"num_gt.{diff}", self.num_gt.get(diff, 0)))
        for diff in self.config.difficulties:
            for i, s in enumerate(self.pr.get(diff, [])):
                out.append((f"pr.{diff}.{i + 1:02d}",
                            f"{s.threshold:.6f} {s.recall:.6f} {s.precision:.6f}"))
        return out

    def table(self) -> str:
        head = f"AP3D_R40  class={self.config.class_name}  IoU>={self.config.iou_threshold:g}"
        cols = "  ".join(f"{d:>9}" for d in self.config.difficulties)
        vals = "  ".join(f"{'n/a':>9}" if self.ap.get(d) is None else f"{self.ap[d]:9.2f}"
                         for d in self.config.difficulties)
        return f"{head}\n{cols}\n{vals}\n"


class FrameMismatchError(ValueError):
    pass


TP, FP, IGNORED = 1, 0, -1


def _pred_order_key(label: ObjectLabel3D):
    score = 1.0 if label.score is None else label.score
    return (-score, label.bbox2d, label.location, label.dims, label.rotation_y, label.alpha,
            label.truncation, label.occlusion)


def _box2d_overlap_fraction(pred_box, region) -> float:
    # fraction of the prediction's 2D box covered by the region
    l1, t1, r1, b1 = pred_box
    l2, t2, r2, b2 = region
    area = (r1 - l1) * (b1 - t1)
    if area <= 0:
        return 0.0
    iw = min(r1, r2) - max(l1, l2)
    ih = min(b1, b2) - max(t1, t2)
    if iw <= 0 or ih <= 0:
        return 0.0
    return iw * ih / area


def match_frame(gt: Sequence[ObjectLabel3D], pred: Sequence[ObjectLabel3D], config: EvalConfig,
                difficulty: str) -> tuple:
    """Classify one frame's predictions for a difficulty tier.

    Predictions are visited in descending score order and each takes the
    unmatched target ground truth with the highest IoU at or above the
    threshold. Because higher-scored predictions never depend on lower-scored
    ones, the result at any score threshold is the prefix of this pass.

    Returns (list of (score, status), number of target ground truths).
    """
    cls = config.class_name
    neighbors = NEIGHBOR_CLASSES.get(cls, ())
    targets, ignored, dontcare = [], [], []
    for g in gt:
        if g.class_name == cls:
            (targets if difficulty in assign_difficulty(g) else ignored).append(g)
        elif g.class_name in neighbors:
            ignored.append(g)
        elif g.class_name == DONTCARE:
            dontcare.append(g)
    preds = sorted((p for p in pred if p.class_name == cls), key=_pred_order_key)
    if not preds:
        return [], len(targets)

    pred_boxes = [Box3D.from_label(p) for p in preds]
    iou_t = iou_matrix(pred_boxes, [Box3D.from_label(g) for g in targets])
    iou_i = iou_matrix(pred_boxes, [Box3D.from_label(g) for g in ignored])
    thr = config.iou_threshold
    min_height = TIER_LIMITS[difficulty][0]
    used_t = np.zeros(len(targets), dtype=bool)
    used_i = np.zeros(len(ignored), dtype=bool)
    out = []
    for j, p in enumerate(preds):
        score = 1.0 if p.score is None else p.score
        if len(targets):
            cand = np.where(~used_t & (iou_t[j] >= thr), iou_t[j], -1.0)
            k = int(np.argmax(cand))
            if cand[k] >= 0:
                used_t[k] = True
                out.append((score, TP))
                continue
        if len(ignored):
            cand = np.where(~used_i & (iou_i[j] >= thr), iou_i[j], -1.0)
            k = int(np.argmax(cand))
            if cand[k] >= 0:
                used_i[k] = True
                out.append((score, IGNORED))
                continue
        if any(_box2d_overlap_fraction(p.bbox2d, d.bbox2d) >= config.dontcare_overlap for d in dontcare):
            out.append((score, IGNORED))
            continue
        if p.bbox_height < min_height:
            out.append((score, IGNORED))
            continue
        out.append((score, FP))
    return out, len(targets)


def average_precision_r40(tp_scores, fp_scores, num_gt: int) -> tuple:
    """AP over recall positions 1/40 .. 40/40 with right-max interpolation.

    Returns (AP percent or None when there is no ground truth, PR samples).
    """
    if num_gt == 0:
        return None, []
    tp = np.sort(np.asarray(tp_scores, dtype=np.float64))[::-1]
    fp = np.sort(np.asarray(fp_scores, dtype=np.float64))
    precision = np.zeros(N_RECALL_POSITIONS)
    samples = []
    for k in range(1, N_RECALL_POSITIONS + 1):
        need = -(-k * num_gt // N_RECALL_POSITIONS)  # ceil(k * n / 40)
        if need > len(tp):
            break
        thresh = tp[need - 1]
        n_tp = int(np.count_nonzero(tp >= thresh))
        n_fp = len(fp) - int(np.searchsorted(fp, thresh, side="left"))
        precision[k - 1] = n_tp / (n_tp + n_fp)
        samples.append(PRSample(float(thresh), n_tp / num_gt, float(precision[k - 1])))
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    return 100.0 * float(np.sum(interp)) / N_RECALL_POSITIONS, samples


def evaluate(gt: Mapping[str, Sequence[ObjectLabel3D]], pred: Mapping[str, Sequence[ObjectLabel3D]],
             config: Optional[EvalConfig] = None) -> EvalReport:
    config = config or EvalConfig()
    missing_pred = sorted(set(gt) - set(pred))
    missing_gt = sorted(set(pred) - set(gt))
    if missing_pred or missing_gt:
        parts = []
        if missing_pred:
            parts.append(f"no predictions for frames {', '.join(missing_pred)}")
        if missing_gt:
            parts.append(f"no ground truth for frames {', '.join(missing_gt)}")
        raise FrameMismatchError("; ".join(parts))

    report = EvalReport(config)
    for diff in config.difficulties:
        tp_scores, fp_scores, n_gt = [], [], 0
        for fid in sorted(gt):
            statuses, n = match_frame(gt[fid], pred[fid], config, diff)
            n_gt += n
            for score, status in statuses:
                if status == TP:
                    tp_scores.append(score)
                elif status == FP:
                    fp_scores.append(score)
        ap, samples = average_precision_r40(tp_scores, fp_scores, n_gt)
        report.ap[diff] = ap
        report.num_gt[diff] = n_gt
        report.pr[diff] = samples
    return report
