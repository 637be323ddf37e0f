"""Panoptic assembly and quality metrics.

Queries become a per-point panoptic labeling by confidence-modulated mask
scoring; predictions are scored with the standard panoptic quality family
(PQ / SQ / RQ plus the stuff-IoU variant) and thing / stuff breakdowns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

VOID_CLASS = 0
DEFAULT_CONFIDENCE_THRESHOLD = 0.25
IOU_MATCH_THRESHOLD = 0.5
MAX_CLASS_ID = 0xFFFF


@dataclass(frozen=True)
class ClassSplit:
    """Thing/stuff partition of the semantic ids plus evaluation knobs."""

    things: frozenset[int]
    stuff: frozenset[int]
    void_id: int = VOID_CLASS
    min_points: int = 0

    def __post_init__(self):
        things = frozenset(int(c) for c in self.things)
        stuff = frozenset(int(c) for c in self.stuff)
        if things & stuff:
            raise ValueError(f"thing/stuff overlap: {sorted(things & stuff)}")
        if self.void_id in things or self.void_id in stuff:
            raise ValueError("void id cannot be a thing or stuff class")
        if self.min_points < 0:
            raise ValueError("min_points must be >= 0")
        for c in things | stuff:
            if not (0 <= c <= MAX_CLASS_ID):
                raise ValueError(f"class id {c} outside 16-bit range")
        object.__setattr__(self, "things", things)
        object.__setattr__(self, "stuff", stuff)

    @property
    def known(self) -> frozenset[int]:
        return self.things | self.stuff


def save_class_split(split: ClassSplit, path) -> None:
    payload = {
        "things": sorted(split.things),
        "stuff": sorted(split.stuff),
        "void": split.void_id,
        "min_points": split.min_points,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_class_split(path) -> ClassSplit:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return ClassSplit(
        things=frozenset(payload["things"]),
        stuff=frozenset(payload["stuff"]),
        void_id=int(payload.get("void", VOID_CLASS)),
        min_points=int(payload.get("min_points", 0)),
    )


@dataclass(frozen=True)
class PanopticLabel:
    """Per-point semantic class (16-bit) and instance id (16-bit).

    Stuff and void points carry instance 0; thing points of one instance
    share a nonzero id.
    """

    semantic: np.ndarray
    instance: np.ndarray

    def __post_init__(self):
        sem = np.asarray(self.semantic, dtype=np.int64)
        inst = np.asarray(self.instance, dtype=np.int64)
        if sem.ndim != 1 or sem.shape != inst.shape:
            raise ValueError("semantic/instance must be equal-length 1-d arrays")
        for name, arr in (("semantic", sem), ("instance", inst)):
            if arr.size and (arr.min() < 0 or arr.max() > MAX_CLASS_ID):
                raise ValueError(f"{name} ids must fit in 16 bits")
        object.__setattr__(self, "semantic", sem)
        object.__setattr__(self, "instance", inst)

    def __len__(self) -> int:
        return self.semantic.shape[0]


# ---------------------------------------------------------------------------
# Inference.


def panoptic_inference(
    class_logits: np.ndarray,
    m3d: np.ndarray,
    split: ClassSplit,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    class_ids: np.ndarray | None = None,
) -> PanopticLabel:
    """Assemble a per-point panoptic labeling from query predictions.

    Each query takes its argmax class under the full softmax (last column =
    no-object).  Queries predicting no-object or below the confidence
    threshold are dropped.  Every point goes to the kept query maximizing
    confidence * sigmoid(mask logit); ties break toward the lowest query
    index.  Stuff queries merge into one region per class, thing queries
    mint distinct instance ids, and thing segments under the min-point
    filter are voided.

    ``class_ids`` maps real logit columns to semantic ids; defaults to the
    split's known classes in ascending order.
    """
    class_logits = np.asarray(class_logits, dtype=np.float64)
    m3d = np.asarray(m3d, dtype=np.float64)
    if class_logits.shape[0] != m3d.shape[0]:
        raise ValueError("query counts disagree between class and mask logits")
    if class_ids is None:
        class_ids = np.array(sorted(split.known), dtype=np.int64)
    else:
        class_ids = np.asarray(class_ids, dtype=np.int64)
    if class_ids.shape != (class_logits.shape[1] - 1,):
        raise ValueError(
            f"need {class_logits.shape[1] - 1} semantic ids for the real logit "
            f"columns, got {class_ids.shape}"
        )
    n_points = m3d.shape[1]
    shifted = class_logits - class_logits.max(axis=1, keepdims=True)
    probs = np.exp(shifted)
    probs /= probs.sum(axis=1, keepdims=True)
    no_object = class_logits.shape[1] - 1
    top = np.argmax(probs, axis=1)
    conf = probs[np.arange(class_logits.shape[0]), top]
    keep = (top != no_object) & (conf >= threshold)
    kept = np.flatnonzero(keep)

    semantic = np.full(n_points, split.void_id, dtype=np.int64)
    instance = np.zeros(n_points, dtype=np.int64)
    if kept.size == 0 or n_points == 0:
        return PanopticLabel(semantic, instance)

    scores = conf[kept, None] / (1.0 + np.exp(-m3d[kept]))
    owner = kept[np.argmax(scores, axis=0)]  # argmax ties -> lowest index

    next_instance = 1
    for q in kept:
        pts = owner == q
        if not np.any(pts):
            continue
        cls = int(class_ids[top[q]])
        semantic[pts] = cls
        if cls in split.things:
            instance[pts] = next_instance
            next_instance += 1
    label = PanopticLabel(semantic, instance)
    if split.min_points > 0:
        label = min_points_filter(label, split.min_points, split)
    return label


def min_points_filter(label: PanopticLabel, threshold: int, split: ClassSplit) -> PanopticLabel:
    """Void thing instances with fewer than ``threshold`` points (strict)."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    if threshold == 0:
        return label
    semantic = label.semantic.copy()
    instance = label.instance.copy()
    thing_mask = np.isin(semantic, sorted(split.things))
    keys = semantic[thing_mask] * (MAX_CLASS_ID + 1) + instance[thing_mask]
    uniq, counts = np.unique(keys, return_counts=True)
    small = set(uniq[counts < threshold].tolist())
    if small:
        doomed = thing_mask.copy()
        doomed[thing_mask] = np.isin(keys, sorted(small))
        semantic[doomed] = split.void_id
        instance[doomed] = 0
    return PanopticLabel(semantic, instance)


# ---------------------------------------------------------------------------
# Metrics.


@dataclass
class ClassStats:
    """Additive per-class accumulators; mergeable across frames by summing."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    iou_sum: float = 0.0
    stuff_iou_sum: float = 0.0  # same-class overlap IoUs, no 0.5 gate
    stuff_pairs: int = 0

    @property
    def denom(self) -> float:
        return self.tp + 0.5 * self.fp + 0.5 * self.fn

    @property
    def pq(self) -> float:
        return self.iou_sum / self.denom if self.denom > 0 else 0.0

    @property
    def sq(self) -> float:
        return self.iou_sum / self.tp if self.tp > 0 else 0.0

    @property
    def rq(self) -> float:
        return self.tp / self.denom if self.denom > 0 else 0.0

    @property
    def stuff_iou(self) -> float:
        return self.stuff_iou_sum / self.stuff_pairs if self.stuff_pairs > 0 else 0.0

    def merged(self, other: "ClassStats") -> "ClassStats":
        return ClassStats(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            iou_sum=self.iou_sum + other.iou_sum,
            stuff_iou_sum=self.stuff_iou_sum + other.stuff_iou_sum,
            stuff_pairs=self.stuff_pairs + other.stuff_pairs,
        )


@dataclass(frozen=True)
class MetricReport:
    """Per-class stats plus unweighted aggregate means over gt-present classes."""

    per_class: dict[int, ClassStats]
    split: ClassSplit
    pq: float = field(init=False)
    pq_dagger: float = field(init=False)
    sq: float = field(init=False)
    rq: float = field(init=False)
    pq_things: float = field(init=False)
    pq_stuff: float = field(init=False)

    def __post_init__(self):
        present = self.present_classes
        def mean(vals):
            return float(np.mean(vals)) if vals else 0.0

        object.__setattr__(self, "pq", mean([self.per_class[c].pq for c in present]))
        object.__setattr__(self, "sq", mean([self.per_class[c].sq for c in present]))
        object.__setattr__(self, "rq", mean([self.per_class[c].rq for c in present]))
        dagger = [
            self.per_class[c].stuff_iou if c in self.split.stuff else self.per_class[c].pq
            for c in present
        ]
        object.__setattr__(self, "pq_dagger", mean(dagger))
        things = [self.per_class[c].pq for c in present if c in self.split.things]
        stuff = [self.per_class[c].pq for c in present if c in self.split.stuff]
        object.__setattr__(self, "pq_things", mean(things))
        object.__setattr__(self, "pq_stuff", mean(stuff))

    @property
    def present_classes(self) -> list[int]:
        # a class enters the aggregates iff ground truth contains it
        return sorted(c for c, s in self.per_class.items() if s.tp + s.fn > 0)

    def as_dict(self) -> dict:
        return {
            "aggregates": {
                "PQ": self.pq,
                "PQ_dagger": self.pq_dagger,
                "SQ": self.sq,
                "RQ": self.rq,
                "PQ_things": self.pq_things,
                "PQ_stuff": self.pq_stuff,
            },
            "per_class": {
                str(c): {
                    "PQ": s.pq,
                    "SQ": s.sq,
                    "RQ": s.rq,
                    "TP": s.tp,
                    "FP": s.fp,
                    "FN": s.fn,
                    "mean_iou": s.sq,
                }
                for c, s in sorted(self.per_class.items())
            },
        }


def _canonical_keys(label: PanopticLabel, split: ClassSplit) -> np.ndarray:
    """Segment key per point: class * 2^16 + instance, stuff collapsed, void -1."""
    sem = label.semantic
    inst = np.where(np.isin(sem, sorted(split.stuff)), 0, label.instance)
    keys = sem * (MAX_CLASS_ID + 1) + inst
    return np.where(sem == split.void_id, -1, keys)


def accumulate_stats(
    pred: PanopticLabel, gt: PanopticLabel, split: ClassSplit
) -> dict[int, ClassStats]:
    """Match segments at IoU > 0.5 and tally per-class TP/FP/FN/IoU.

    Void gt points are subtracted from unions; unmatched predictions that
    are mostly void in gt do not count as false positives.  Segment
    matching at the 0.5 gate is unique; this is asserted, not assumed.
    """
    if len(pred) != len(gt):
        raise ValueError(f"point counts differ: {len(pred)} vs {len(gt)}")
    pk = _canonical_keys(pred, split)
    gk = _canonical_keys(gt, split)

    pred_ids, pred_sizes = np.unique(pk[pk >= 0], return_counts=True)
    gt_ids, gt_sizes = np.unique(gk[gk >= 0], return_counts=True)
    pred_size = dict(zip(pred_ids.tolist(), pred_sizes.tolist()))
    gt_size = dict(zip(gt_ids.tolist(), gt_sizes.tolist()))

    # pred segment overlap with void gt
    void_overlap: dict[int, int] = {}
    void_pts = gk < 0
    if np.any(void_pts):
        ids, counts = np.unique(pk[void_pts & (pk >= 0)], return_counts=True)
        void_overlap = dict(zip(ids.tolist(), counts.tolist()))

    # pack (pred segment, gt segment) pairs via compact indices: the raw
    # 32-bit keys would overflow int64 when combined directly
    both = (pk >= 0) & (gk >= 0)
    n_g = max(gt_ids.size, 1)
    p_compact = np.searchsorted(pred_ids, pk[both])
    g_compact = np.searchsorted(gt_ids, gk[both])
    pairs, inters = np.unique(p_compact * n_g + g_compact, return_counts=True)

    stats: dict[int, ClassStats] = {}

    def get(cls: int) -> ClassStats:
        return stats.setdefault(cls, ClassStats())

    matched_pred: set[int] = set()
    matched_gt: set[int] = set()
    for key, inter in zip(pairs.tolist(), inters.tolist()):
        p_id = int(pred_ids[key // n_g])
        g_id = int(gt_ids[key % n_g])
        p_cls = p_id >> 16
        g_cls = g_id >> 16
        if p_cls != g_cls:
            continue
        union = pred_size[p_id] + gt_size[g_id] - inter - void_overlap.get(p_id, 0)
        iou = inter / union if union > 0 else 0.0
        if g_cls in split.stuff:
            s = get(g_cls)
            s.stuff_iou_sum += iou
            s.stuff_pairs += 1
        if iou > IOU_MATCH_THRESHOLD:
            assert p_id not in matched_pred and g_id not in matched_gt
            matched_pred.add(p_id)
            matched_gt.add(g_id)
            s = get(g_cls)
            s.tp += 1
            s.iou_sum += iou

    for g_id in gt_ids.tolist():
        if g_id not in matched_gt:
            get(g_id >> 16).fn += 1
    for p_id in pred_ids.tolist():
        if p_id in matched_pred:
            continue
        if void_overlap.get(p_id, 0) / pred_size[p_id] > 0.5:
            continue  # mostly unlabeled region: not penalized
        get(p_id >> 16).fp += 1
    return stats


def merge_stats(*stat_dicts: dict[int, ClassStats]) -> dict[int, ClassStats]:
    """Order-independent merge of per-frame accumulators."""
    out: dict[int, ClassStats] = {}
    for stats in stat_dicts:
        for cls, s in stats.items():
            out[cls] = out[cls].merged(s) if cls in out else replace(s)
    return out


def pq_metrics(pred: PanopticLabel, gt: PanopticLabel, split: ClassSplit) -> MetricReport:
    """Score a prediction against ground truth; see accumulate_stats."""
    return MetricReport(per_class=accumulate_stats(pred, gt, split), split=split)
