"""3D-aware mask decoding: range-consistent aggregation, heads, matching, loss.

Per-point features are aggregated from the pixels of a small range-view
window whose stored ranges best match the point's true range, which keeps
points separated that collide in 2D but lie at different depths.  Query
embeddings (from a pluggable provider) turn into class logits and mask
embeddings; per-point mask logits are plain inner products.  Supervision is
set-based: optimal bipartite matching followed by class / mask-BCE / dice
terms on a mixed importance-plus-uniform point sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

MASK_CHANNELS = 256  # full-scale mask feature width
DEFAULT_NUM_QUERIES = 300
NEIGHBOR_K = 5
DEFAULT_SAMPLED_POINTS = {"nuscenes": 12544, "waymo": 25088, "semantickitti": 25088}


@dataclass(frozen=True)
class LossWeights:
    """Term weights for matching and the panoptic loss."""

    cls: float
    dice: float
    mask: float


LOSS_WEIGHT_PRESETS = {
    "nuscenes": LossWeights(cls=5.0, dice=5.0, mask=100.0),
    "waymo": LossWeights(cls=2.0, dice=5.0, mask=50.0),
    "semantickitti": LossWeights(cls=2.0, dice=5.0, mask=50.0),
}


# ---------------------------------------------------------------------------
# Range-consistent neighbor selection.


def select_3d_neighbors(
    ranges: np.ndarray,
    valid: np.ndarray,
    row: int,
    col: int,
    r_true: float,
    k: int = NEIGHBOR_K,
    window: int = NEIGHBOR_K,
) -> np.ndarray:
    """K window pixels whose stored range is closest to the point's range.

    Returns (k, 2) int64 (row, col) pairs in ascending |range difference|
    order; ties break by row-major pixel order.  Invalid pixels count as
    infinitely distant.  When fewer than k valid candidates exist the best
    ones repeat cyclically; a window with no valid pixel is an error.
    """
    height, width = ranges.shape
    if not (0 <= row < height and 0 <= col < width):
        raise IndexError(f"pixel ({row}, {col}) outside {height}x{width} grid")
    if k < 1:
        raise ValueError("k must be >= 1")
    half = window // 2
    r0, r1 = max(0, row - half), min(height, row + half + 1)
    c0, c1 = max(0, col - half), min(width, col + half + 1)
    sub_r = ranges[r0:r1, c0:c1]
    sub_v = valid[r0:r1, c0:c1]
    diffs = np.where(sub_v, np.abs(sub_r - r_true), np.inf).ravel()
    rows_g, cols_g = np.mgrid[r0:r1, c0:c1]
    order_key = (rows_g * width + cols_g).ravel()  # row-major tie-break
    order = np.lexsort((order_key, diffs))
    n_valid = int(np.count_nonzero(np.isfinite(diffs)))
    if n_valid == 0:
        raise ValueError(f"no valid range pixels in the window around ({row}, {col})")
    picks = order[np.arange(k) % min(n_valid, k)]
    return np.stack([rows_g.ravel()[picks], cols_g.ravel()[picks]], axis=1)


# ---------------------------------------------------------------------------
# Neighbor aggregation MLP (K*D -> 2D -> D).


@dataclass(frozen=True)
class Mlp2Params:
    w1: np.ndarray  # (K*D, 2D)
    b1: np.ndarray  # (2D,)
    w2: np.ndarray  # (2D, D)
    b2: np.ndarray  # (D,)

    def __post_init__(self):
        hidden = self.w1.shape[1]
        dim = hidden // 2
        expected = {
            "w1": (self.w1.shape[0], hidden),
            "b1": (hidden,),
            "w2": (hidden, dim),
            "b2": (dim,),
        }
        if self.w1.shape[0] % dim != 0:
            raise ValueError("first-layer input width must be a multiple of the feature dim")
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.w1.shape[1] // 2

    @property
    def k(self) -> int:
        return self.w1.shape[0] // self.dim


def init_mlp2(k: int, dim: int, seed: int = 0) -> Mlp2Params:
    rng = np.random.default_rng(seed)

    def xavier(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    return Mlp2Params(
        w1=xavier(k * dim, 2 * dim),
        b1=np.zeros(2 * dim),
        w2=xavier(2 * dim, dim),
        b2=np.zeros(dim),
    )


def aggregate_point_feature(
    f_mask: np.ndarray, neighbors: np.ndarray, mlp2: Mlp2Params
) -> np.ndarray:
    """Fuse K neighbor features into one vector.

    ``neighbors`` holds full-resolution (row, col) pairs; the stride-4 mask
    grid is indexed by floor division.
    """
    neighbors = np.asarray(neighbors)
    concat = f_mask[neighbors[:, 0] // 4, neighbors[:, 1] // 4].reshape(-1)
    if concat.shape[0] != mlp2.w1.shape[0]:
        raise ValueError(
            f"concatenated width {concat.shape[0]} does not match MLP input "
            f"{mlp2.w1.shape[0]}"
        )
    hidden = np.maximum(concat @ mlp2.w1 + mlp2.b1, 0.0)
    return hidden @ mlp2.w2 + mlp2.b2


def point_features(
    f_mask: np.ndarray,
    ranges: np.ndarray,
    valid: np.ndarray,
    points_rc: np.ndarray,
    r_true: np.ndarray,
    mlp2: Mlp2Params,
    k: int = NEIGHBOR_K,
    window: int = NEIGHBOR_K,
) -> np.ndarray:
    """Per-point feature matrix (D, N) via neighbor selection + aggregation."""
    points_rc = np.asarray(points_rc)
    n = points_rc.shape[0]
    dim = mlp2.dim
    gathered = np.empty((n, k * dim), dtype=np.float64)
    for j in range(n):
        nbrs = select_3d_neighbors(
            ranges, valid, int(points_rc[j, 0]), int(points_rc[j, 1]), float(r_true[j]), k, window
        )
        gathered[j] = f_mask[nbrs[:, 0] // 4, nbrs[:, 1] // 4].reshape(-1)
    hidden = np.maximum(gathered @ mlp2.w1 + mlp2.b1, 0.0)
    return (hidden @ mlp2.w2 + mlp2.b2).T


# ---------------------------------------------------------------------------
# Class and mask heads.


def class_head(queries: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Linear projection of query embeddings to (C_th + C_st + 1) logits."""
    queries = np.asarray(queries, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if queries.shape[1] != weights.shape[0] or weights.shape[1] != bias.shape[0]:
        raise ValueError("class head shapes disagree")
    return queries @ weights + bias


@dataclass(frozen=True)
class MaskEmbedParams:
    """3-layer rectified MLP D -> D -> D -> D producing mask embeddings."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        dim = self.w1.shape[0]
        for name in ("w1", "w2", "w3"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (dim, dim):
                raise ValueError(f"{name}: expected ({dim}, {dim}), got {arr.shape}")
            object.__setattr__(self, name, arr)
        for name in ("b1", "b2", "b3"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (dim,):
                raise ValueError(f"{name}: expected ({dim},), got {arr.shape}")
            object.__setattr__(self, name, arr)


def init_mask_embed(dim: int, seed: int = 0) -> MaskEmbedParams:
    rng = np.random.default_rng(seed)
    limit = math.sqrt(6.0 / (dim + dim))
    return MaskEmbedParams(
        w1=rng.uniform(-limit, limit, (dim, dim)),
        b1=np.zeros(dim),
        w2=rng.uniform(-limit, limit, (dim, dim)),
        b2=np.zeros(dim),
        w3=rng.uniform(-limit, limit, (dim, dim)),
        b3=np.zeros(dim),
    )


def mask_embed(queries: np.ndarray, params: MaskEmbedParams) -> np.ndarray:
    h1 = np.maximum(queries @ params.w1 + params.b1, 0.0)
    h2 = np.maximum(h1 @ params.w2 + params.b2, 0.0)
    return h2 @ params.w3 + params.b3


def mask_logits(e_mask: np.ndarray, f_point: np.ndarray) -> np.ndarray:
    """Inner-product mask logits: (N_q, D) x (D, N) -> (N_q, N)."""
    e_mask = np.asarray(e_mask, dtype=np.float64)
    f_point = np.asarray(f_point, dtype=np.float64)
    if e_mask.shape[1] != f_point.shape[0]:
        raise ValueError(f"inner dims disagree: {e_mask.shape} vs {f_point.shape}")
    return e_mask @ f_point


def mask_logits_2d(e_mask: np.ndarray, f_mask: np.ndarray) -> np.ndarray:
    """Grid variant against the stride-4 mask features: (N_q, H/4, W/4)."""
    if e_mask.shape[1] != f_mask.shape[2]:
        raise ValueError("channel widths disagree")
    return np.einsum("qd,hwd->qhw", e_mask, f_mask)


# ---------------------------------------------------------------------------
# Mixed point sampling.


def sample_points(
    m3d: np.ndarray, n_p: int, importance_ratio: float, rng: np.random.Generator
) -> np.ndarray:
    """Importance-plus-uniform point subset of size n_p.

    Decision uncertainty per point is the smallest |logit| over queries;
    ceil(ratio * n_p) points with the smallest values are taken, the rest
    drawn uniformly without replacement from the remainder.
    """
    m3d = np.asarray(m3d, dtype=np.float64)
    n = m3d.shape[1]
    if n_p > n:
        raise ValueError(f"requested {n_p} points from {n}")
    if not (0.0 <= importance_ratio <= 1.0):
        raise ValueError("importance ratio must lie in [0, 1]")
    closeness = np.min(np.abs(m3d), axis=0)
    n_imp = min(math.ceil(importance_ratio * n_p), n_p)
    order = np.lexsort((np.arange(n), closeness))
    importance = order[:n_imp]
    remainder = order[n_imp:]
    n_rand = n_p - n_imp
    if n_rand > 0:
        drawn = rng.choice(remainder.size, size=n_rand, replace=False)
        random_part = remainder[np.sort(drawn)]
    else:
        random_part = np.empty(0, dtype=np.int64)
    return np.concatenate([importance, random_part])


# ---------------------------------------------------------------------------
# Matching and loss.


def _sigmoid_bce(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Stable elementwise BCE-with-logits."""
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def _dice_loss(probs: np.ndarray, targets: np.ndarray, axis=-1) -> np.ndarray:
    num = 2.0 * np.sum(probs * targets, axis=axis) + 1.0
    den = np.sum(probs, axis=axis) + np.sum(targets, axis=axis) + 1.0
    return 1.0 - num / den


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def match_costs(
    class_logits: np.ndarray,
    m3d: np.ndarray,
    gt_classes: np.ndarray,
    gt_masks: np.ndarray,
    weights: LossWeights,
) -> np.ndarray:
    """(N_gt, N_q) assignment costs on the sampled point set.

    cost = cls_w * (-p(class)) + mask_w * meanBCE + dice_w * dice, mirroring
    the loss terms.
    """
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    gt_masks = np.asarray(gt_masks, dtype=np.float64)
    n_gt = gt_classes.shape[0]
    n_q = class_logits.shape[0]
    if n_gt == 0:
        return np.zeros((0, n_q))
    if gt_masks.shape != (n_gt, m3d.shape[1]):
        raise ValueError("ground-truth masks must be (N_gt, N_sampled)")
    probs = _softmax(np.asarray(class_logits, dtype=np.float64))
    cost_cls = -probs[:, gt_classes].T  # (N_gt, N_q)

    bce_all = _sigmoid_bce(m3d[None, :, :], gt_masks[:, None, :]).mean(axis=2)
    sig = 1.0 / (1.0 + np.exp(-m3d))
    dice_all = _dice_loss(sig[None, :, :], gt_masks[:, None, :], axis=2)
    return weights.cls * cost_cls + weights.mask * bce_all + weights.dice * dice_all


@dataclass(frozen=True)
class MatchResult:
    """Injective ground-truth -> query assignment of minimal total cost."""

    gt_to_query: np.ndarray  # (N_gt,) int64
    pair_costs: np.ndarray  # (N_gt,) float64
    total_cost: float

    def __post_init__(self):
        assigned = np.asarray(self.gt_to_query, dtype=np.int64)
        if assigned.size != np.unique(assigned).size:
            raise ValueError("assignment is not injective")
        object.__setattr__(self, "gt_to_query", assigned)
        object.__setattr__(
            self, "pair_costs", np.asarray(self.pair_costs, dtype=np.float64)
        )


def hungarian(costs: np.ndarray) -> MatchResult:
    """Optimal assignment of every ground-truth row to a distinct query."""
    costs = np.asarray(costs, dtype=np.float64)
    n_gt, n_q = costs.shape
    if n_gt > n_q:
        raise ValueError(f"{n_gt} ground-truth segments exceed {n_q} queries")
    if costs.size and not np.all(np.isfinite(costs)):
        raise ValueError("costs must be finite")
    if n_gt == 0:
        return MatchResult(np.empty(0, dtype=np.int64), np.empty(0), 0.0)
    rows, cols = linear_sum_assignment(costs)
    order = np.argsort(rows)
    cols = cols[order]
    pair = costs[np.arange(n_gt), cols]
    return MatchResult(cols.astype(np.int64), pair, float(pair.sum()))


def panoptic_loss(
    class_logits: np.ndarray,
    m3d: np.ndarray,
    gt_classes: np.ndarray,
    gt_masks: np.ndarray,
    match: MatchResult,
    weights: LossWeights,
) -> tuple[float, dict[str, float]]:
    """Weighted set loss; returns (total, unweighted per-term breakdown).

    Classes: cross-entropy over every query, the unmatched ones supervised
    to the last (no-object) class.  Mask BCE and dice: matched pairs only,
    averaged over pairs, on the sampled points.
    """
    class_logits = np.asarray(class_logits, dtype=np.float64)
    m3d = np.asarray(m3d, dtype=np.float64)
    gt_classes = np.asarray(gt_classes, dtype=np.int64)
    gt_masks = np.asarray(gt_masks, dtype=np.float64)
    n_q, n_classes = class_logits.shape
    no_object = n_classes - 1

    targets = np.full(n_q, no_object, dtype=np.int64)
    targets[match.gt_to_query] = gt_classes
    shifted = class_logits - class_logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss_cls = float(-log_probs[np.arange(n_q), targets].mean())

    if match.gt_to_query.size:
        matched_logits = m3d[match.gt_to_query]
        loss_mask = float(_sigmoid_bce(matched_logits, gt_masks).mean(axis=1).mean())
        sig = 1.0 / (1.0 + np.exp(-matched_logits))
        loss_dice = float(_dice_loss(sig, gt_masks, axis=1).mean())
    else:
        loss_mask = 0.0
        loss_dice = 0.0

    breakdown = {"cls": loss_cls, "mask": loss_mask, "dice": loss_dice}
    total = weights.cls * loss_cls + weights.mask * loss_mask + weights.dice * loss_dice
    return total, breakdown
