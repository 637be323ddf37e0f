"""Uncertainty-guided deformable fusion of LiDAR and camera features.

Camera features are first scaled down by their predicted unreliability,
then gathered by a single-level, 4-point deformable attention whose
offsets and weights are predicted from the LiDAR query features alone.
The fused output is the elementwise sum F_F = F_L + F_A.  With full
uncertainty (U = 1 everywhere) the camera branch vanishes exactly and
F_F bit-equals F_L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio

NUM_LEVELS = 1  # single attention level
NUM_POINTS = 4  # sampling points per query

# Default offset-bias initialization: 4-point star of radius 1 pixel,
# (du, dv) pairs in query order.
STAR_OFFSETS = np.array([1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0])


@dataclass(frozen=True)
class DeformableParams:
    """Query projectors for one scale.

    The value projector is bias-free by contract: a zero camera field must
    map to a zero attention output.
    """

    w_offset: np.ndarray  # (D, 2P)
    b_offset: np.ndarray  # (2P,)
    w_weight: np.ndarray  # (D, P)
    b_weight: np.ndarray  # (P,)
    w_value: np.ndarray  # (D, D), no bias

    def __post_init__(self):
        dim = np.asarray(self.w_offset).shape[0]
        expected = {
            "w_offset": (dim, 2 * NUM_POINTS),
            "b_offset": (2 * NUM_POINTS,),
            "w_weight": (dim, NUM_POINTS),
            "b_weight": (NUM_POINTS,),
            "w_value": (dim, dim),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def dim(self) -> int:
        return self.w_offset.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            n: getattr(self, n)
            for n in ("w_offset", "b_offset", "w_weight", "b_weight", "w_value")
        }


def init_deformable(dim: int) -> DeformableParams:
    """Deterministic start: star-pattern offsets, uniform weights, identity values."""
    return DeformableParams(
        w_offset=np.zeros((dim, 2 * NUM_POINTS)),
        b_offset=STAR_OFFSETS.copy(),
        w_weight=np.zeros((dim, NUM_POINTS)),
        b_weight=np.zeros(NUM_POINTS),
        w_value=np.eye(dim),
    )


def modulate(f_c: np.ndarray, uncertainty: np.ndarray) -> np.ndarray:
    """Scale camera features by reliability: (1 - U) elementwise."""
    f_c = np.asarray(f_c, dtype=np.float64)
    u = np.asarray(uncertainty, dtype=np.float64)
    if u.shape != f_c.shape[:-1]:
        raise ValueError(f"uncertainty {u.shape} does not match features {f_c.shape[:-1]}")
    return (1.0 - u)[..., None] * f_c


def bilinear_sample(
    feat: np.ndarray, u: float, v: float, covered: np.ndarray | None = None
) -> np.ndarray:
    """Channel vector at continuous location (u=col, v=row).

    The four surrounding cells are blended; cells outside the grid or
    outside the coverage mask contribute zeros.
    """
    out = bilinear_sample_many(feat, np.array([u]), np.array([v]), covered)
    return out[0]


def bilinear_sample_many(
    feat: np.ndarray, us: np.ndarray, vs: np.ndarray, covered: np.ndarray | None = None
) -> np.ndarray:
    """Vectorized bilinear sampling; (N,) locations -> (N, D) vectors."""
    feat = np.asarray(feat, dtype=np.float64)
    height, width = feat.shape[:2]
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    u0 = np.floor(us).astype(np.int64)
    v0 = np.floor(vs).astype(np.int64)
    fu = us - u0
    fv = vs - v0

    out = np.zeros(us.shape + (feat.shape[2],), dtype=np.float64)
    for dv, du, w in (
        (0, 0, (1.0 - fu) * (1.0 - fv)),
        (0, 1, fu * (1.0 - fv)),
        (1, 0, (1.0 - fu) * fv),
        (1, 1, fu * fv),
    ):
        rows = v0 + dv
        cols = u0 + du
        inside = (rows >= 0) & (rows < height) & (cols >= 0) & (cols < width)
        if covered is not None:
            valid = inside.copy()
            valid[inside] &= covered[rows[inside], cols[inside]]
        else:
            valid = inside
        contrib = np.where(valid, w, 0.0)
        safe_r = np.clip(rows, 0, height - 1)
        safe_c = np.clip(cols, 0, width - 1)
        out += contrib[..., None] * feat[safe_r, safe_c]
    return out


def query_offsets_and_weights(
    f_l: np.ndarray, params: DeformableParams
) -> tuple[np.ndarray, np.ndarray]:
    """Per-query sampling offsets (H, W, P, 2) and softmax weights (H, W, P).

    Both are functions of the LiDAR features only, so sampling geometry
    never depends on the (possibly degraded) camera input.
    """
    f_l = np.asarray(f_l, dtype=np.float64)
    if f_l.shape[-1] != params.dim:
        raise ValueError(f"expected {params.dim} channels, got {f_l.shape[-1]}")
    offsets = (f_l @ params.w_offset + params.b_offset).reshape(
        f_l.shape[:-1] + (NUM_POINTS, 2)
    )
    logits = f_l @ params.w_weight + params.b_weight
    logits = logits - logits.max(axis=-1, keepdims=True)
    expl = np.exp(logits)
    weights = expl / expl.sum(axis=-1, keepdims=True)
    return offsets, weights


def deformable_attend(
    f_l: np.ndarray,
    f_c_mod: np.ndarray,
    params: DeformableParams,
    covered: np.ndarray | None = None,
) -> np.ndarray:
    """Attention-gathered camera contribution F_A, one level, P=4 points.

    Each query at pixel (r, c) samples the modulated camera grid at
    (c, r) + offset_p, projects each sample through the bias-free value
    map, and blends with its softmax weights.
    """
    f_l = np.asarray(f_l, dtype=np.float64)
    f_c_mod = np.asarray(f_c_mod, dtype=np.float64)
    if f_l.shape != f_c_mod.shape:
        raise ValueError(f"feature grids differ: {f_l.shape} vs {f_c_mod.shape}")
    height, width = f_l.shape[:2]
    offsets, weights = query_offsets_and_weights(f_l, params)

    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    us = cc[..., None] + offsets[..., 0]  # (H, W, P)
    vs = rr[..., None] + offsets[..., 1]
    samples = bilinear_sample_many(f_c_mod, us.reshape(-1), vs.reshape(-1), covered)
    samples = samples.reshape(height, width, NUM_POINTS, -1) @ params.w_value
    return np.einsum("hwp,hwpd->hwd", weights, samples)


def fuse(f_l: np.ndarray, f_a: np.ndarray) -> np.ndarray:
    """Elementwise sum of LiDAR features and attention output."""
    f_l = np.asarray(f_l, dtype=np.float64)
    f_a = np.asarray(f_a, dtype=np.float64)
    if f_l.shape != f_a.shape:
        raise ValueError(f"shapes differ: {f_l.shape} vs {f_a.shape}")
    return f_l + f_a


def fused_features(
    f_l: np.ndarray,
    f_c: np.ndarray,
    uncertainty: np.ndarray,
    params: DeformableParams,
    covered: np.ndarray | None = None,
) -> np.ndarray:
    """Full chain: modulate, attend, sum."""
    f_a = deformable_attend(f_l, modulate(f_c, uncertainty), params, covered)
    return fuse(f_l, f_a)


def save_deformable(directory, params_per_scale: dict[int, DeformableParams]) -> None:
    tensors = {}
    for scale, params in params_per_scale.items():
        for name, arr in params.arrays().items():
            tensors[f"s{scale}_{name}"] = arr
    meta = {
        "scales": sorted(params_per_scale),
        "dims": {str(s): params_per_scale[s].dim for s in sorted(params_per_scale)},
    }
    tensorio.write_tensor_dir(directory, tensors, meta=meta)


def load_deformable(directory) -> dict[int, DeformableParams]:
    tensors, meta = tensorio.read_tensor_dir(directory)
    out = {}
    for scale in meta["scales"]:
        out[int(scale)] = DeformableParams(
            **{
                name: tensors[f"s{scale}_{name}"]
                for name in ("w_offset", "b_offset", "w_weight", "b_weight", "w_value")
            }
        )
    return out
