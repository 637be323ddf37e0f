"""Procedural scenes and desk-scale training data.

Everything here is seed-deterministic and small enough for tests: noise
feature pairs for uncertainty training, terrain-plus-boxes scenes, camera
rigs, and procedural textures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxlabels import BOX_CLASSES, SEMANTIC_CLASSES, Box3D
from .decoder import MaskEmbedParams, Mlp2Params
from .panoptic import ClassSplit, PanopticLabel
from .rangeview import PointCloud, RangeImage
from .viewtransform import CameraModel

DEFAULT_SEVERITIES = (0.5, 1.0, 1.5, 2.0, 2.5)


def uncertainty_pairs(
    n: int,
    dim: int = 8,
    severities=DEFAULT_SEVERITIES,
    base_scale: float = 0.1,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Noise features whose corruption magnitude is the regression target.

    Clean features are small Gaussian noise; each sample adds a perturbation
    drawn at one of the severity levels.  Returns (augmented features,
    exact perturbation norms, severity index per sample).
    """
    rng = np.random.default_rng(seed)
    severities = np.asarray(severities, dtype=np.float64)
    clean = rng.normal(0.0, base_scale, size=(n, dim))
    levels = rng.integers(0, len(severities), size=n)
    noise = rng.normal(0.0, 1.0, size=(n, dim))
    noise *= (severities[levels] / np.sqrt(dim))[:, None]
    d_gt = np.linalg.norm(noise, axis=1)
    return clean + noise, d_gt, levels


# ---------------------------------------------------------------------------
# Terrain-plus-objects scene.

CAR = SEMANTIC_CLASSES["car"]
PEDESTRIAN = SEMANTIC_CLASSES["pedestrian"]
ROAD = SEMANTIC_CLASSES["road"]

# per-class LiDAR reflectivity: identical within a class so twin objects
# stay geometrically ambiguous without the camera signal
CLASS_INTENSITY = {CAR: 0.8, PEDESTRIAN: 0.5, ROAD: 0.2}


def synthetic_class_split(min_points: int = 10) -> ClassSplit:
    return ClassSplit(
        things=frozenset({CAR, PEDESTRIAN}),
        stuff=frozenset({ROAD}),
        min_points=min_points,
    )


@dataclass(frozen=True)
class SyntheticScene:
    """Ground plane plus boxed objects with per-point class and albedo."""

    cloud: PointCloud
    semantics: np.ndarray  # (N,) class ids
    colors: np.ndarray  # (N, 3) albedo in [0, 1]
    boxes: list

    def __len__(self) -> int:
        return len(self.cloud)


def _box_surface_points(box: Box3D, n: int, rng) -> np.ndarray:
    l, w, h = box.size
    areas = np.array([w * h, w * h, l * h, l * h, l * w])  # +-x, +-y, top
    faces = rng.choice(5, size=n, p=areas / areas.sum())
    a = rng.uniform(-0.5, 0.5, n)
    b = rng.uniform(-0.5, 0.5, n)
    local = np.empty((n, 3))
    for f in range(5):
        m = faces == f
        if f < 2:
            local[m] = np.c_[np.full(m.sum(), (0.5 if f == 0 else -0.5) * l),
                             a[m] * w, b[m] * h]
        elif f < 4:
            local[m] = np.c_[a[m] * l,
                             np.full(m.sum(), (0.5 if f == 2 else -0.5) * w), b[m] * h]
        else:
            local[m] = np.c_[a[m] * l, b[m] * w, np.full(m.sum(), 0.5 * h)]
    # nudged inward so translation round-off cannot push face points outside
    local *= 1.0 - 1e-9
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(box.center)


def terrain_scene(seed: int = 0, n_ground: int = 6500) -> SyntheticScene:
    """Undulating road with two twin cars and two nearby pedestrians.

    The twins share size, yaw, intensity, and elevation, so range-view
    geometry alone barely separates them; their albedos differ strongly.
    """
    rng = np.random.default_rng(seed)
    ground_z = -1.8

    gx = rng.uniform(3.0, 22.0, n_ground)
    gy = rng.uniform(-14.0, 14.0, n_ground)
    # trough near x ~= 20 keeps under-object road below the box silhouettes
    gz = ground_z + 0.25 * np.sin(0.4 * (gx - 8.2)) * np.cos(0.3 * gy)
    ground = np.c_[gx, gy, gz]

    car_size = (4.4, 1.9, 1.6)
    ped_size = (0.9, 0.9, 1.9)
    boxes = [
        Box3D(center=(20.0, -2.5, ground_z + 0.8), size=car_size, yaw=0.0,
              class_id=BOX_CLASSES["vehicle"], track_id=1),
        Box3D(center=(20.0, 2.5, ground_z + 0.8), size=car_size, yaw=0.0,
              class_id=BOX_CLASSES["vehicle"], track_id=2),
        Box3D(center=(17.0, -1.2, ground_z + 0.95), size=ped_size, yaw=0.0,
              class_id=BOX_CLASSES["pedestrian"], track_id=3),
        Box3D(center=(17.0, 1.2, ground_z + 0.95), size=ped_size, yaw=0.0,
              class_id=BOX_CLASSES["pedestrian"], track_id=4),
    ]
    box_counts = [900, 900, 380, 380]
    box_classes = [CAR, CAR, PEDESTRIAN, PEDESTRIAN]
    box_colors = [
        (0.90, 0.12, 0.10),  # red car, left
        (0.10, 0.20, 0.92),  # blue car, right
        (0.95, 0.85, 0.10),  # yellow pedestrian, left
        (0.90, 0.10, 0.88),  # magenta pedestrian, right
    ]

    xyz = [ground]
    sem = [np.full(n_ground, ROAD)]
    checker = ((np.floor(gx) + np.floor(gy)) % 2.0)[:, None]
    colors = [0.42 + 0.08 * checker * np.ones((n_ground, 3))]
    for box, count, cls, rgb in zip(boxes, box_counts, box_classes, box_colors):
        pts = _box_surface_points(box, count, rng)
        xyz.append(pts)
        sem.append(np.full(count, cls))
        shade = 0.85 + 0.15 * rng.random((count, 1))  # mild texture
        colors.append(np.asarray(rgb)[None, :] * shade)

    xyz = np.vstack(xyz)
    sem = np.concatenate(sem)
    colors = np.clip(np.vstack(colors), 0.0, 1.0)
    intensity = np.vectorize(CLASS_INTENSITY.get)(sem)
    cloud = PointCloud(np.c_[xyz, intensity])
    return SyntheticScene(cloud=cloud, semantics=sem, colors=colors, boxes=boxes)


# ---------------------------------------------------------------------------
# Camera rig and rendering.

# lidar (x fwd, y left, z up) -> camera (x right, y down, z fwd)
_LIDAR_TO_CAM = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])


def demo_rig(
    yaws_deg=(-24.0, 24.0),
    size: tuple[int, int] = (64, 96),
    focal: float = 80.0,
) -> list[CameraModel]:
    """Two forward cameras looking left/right of the travel axis."""
    h, w = size
    k = np.array([[focal, 0.0, w / 2.0], [0.0, focal, h / 2.0], [0.0, 0.0, 1.0]])
    cams = []
    for yaw_deg in yaws_deg:
        psi = math.radians(yaw_deg)
        c, s = math.cos(-psi), math.sin(-psi)
        rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        t = np.eye(4)
        t[:3, :3] = _LIDAR_TO_CAM @ rz
        t[:3, 3] = [0.0, 0.05 if yaw_deg < 0 else -0.05, -0.1]
        cams.append(CameraModel(intrinsics=k, extrinsics=t, size=size))
    return cams


def render_views(scene: SyntheticScene, rig: list[CameraModel]) -> list[np.ndarray]:
    """Z-buffered point splats over a sky gradient, one uint8 image per camera."""
    images = []
    xyz1 = np.c_[scene.cloud.xyz, np.ones(len(scene))]
    for cam in rig:
        h, w = cam.size
        sky = np.linspace(0.65, 0.35, h)[:, None, None] * np.array([0.75, 0.85, 1.0])
        img = np.broadcast_to(sky, (h, w, 3)).copy()
        p_cam = (xyz1 @ cam.extrinsics.T)[:, :3]
        z = p_cam[:, 2]
        vis = z > 1e-9
        u = np.floor(cam.intrinsics[0, 0] * p_cam[vis, 0] / z[vis]
                     + cam.intrinsics[0, 2]).astype(np.int64)
        v = np.floor(cam.intrinsics[1, 1] * p_cam[vis, 1] / z[vis]
                     + cam.intrinsics[1, 2]).astype(np.int64)
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        idx = np.flatnonzero(vis)[ok]
        # paint far to near so the closest point wins each pixel
        order = np.argsort(-z[idx], kind="stable")
        img[v[ok][order], u[ok][order]] = scene.colors[idx[order]]
        images.append(np.round(img * 255.0).astype(np.uint8))
    return images


def night_reference_pool(size: tuple[int, int] = (48, 48)) -> list[np.ndarray]:
    """Dark, blue-tinted reference images for domain-shift matching."""
    h, w = size
    rng = np.random.default_rng(555)
    yy = np.linspace(0.0, 1.0, h)[:, None, None]
    base = np.array([8.0, 10.0, 22.0]) + 20.0 * yy
    pool = []
    for _ in range(3):
        img = base + rng.normal(0.0, 4.0, (h, w, 3))
        pool.append(np.clip(img, 0, 255).astype(np.uint8))
    return pool


# ---------------------------------------------------------------------------
# Feature providers (backbone stand-ins).


def lift_matrix(in_dim: int, out_dim: int, seed: int = 0) -> np.ndarray:
    """Nonnegative random projection; keeps lifted features >= 0."""
    rng = np.random.default_rng(seed)
    m = rng.uniform(0.05, 1.0, size=(in_dim, out_dim))
    return m / m.sum(axis=0, keepdims=True)


def lidar_feature_grid(
    rv: RangeImage, stride: int, dim: int, seed: int = 0
) -> np.ndarray:
    """Stride-pooled (range, height, intensity) channels lifted to dim."""
    h, w, _ = rv.channels.shape
    if h % stride or w % stride:
        raise ValueError("range image dims must be divisible by the stride")
    # geometry compressed relative to intensity so class identity dominates
    chans = rv.channels.copy()
    chans[..., 0] = np.where(rv.valid, chans[..., 0] / 90.0, 0.0)
    chans[..., 1] = np.where(rv.valid, (chans[..., 1] + 3.0) / 18.0, 0.0)
    blocks = chans.reshape(h // stride, stride, w // stride, stride, 3)
    valid = rv.valid.reshape(h // stride, stride, w // stride, stride)
    counts = valid.sum(axis=(1, 3))[..., None]
    sums = (blocks * valid[..., None]).sum(axis=(1, 3))
    mean = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    return mean @ lift_matrix(3, dim, seed)


def camera_feature_maps(
    images: list[np.ndarray], dim: int, stride: int = 1, seed: int = 0
) -> list[np.ndarray]:
    """Stride-pooled per-pixel color features lifted to dim (backbone stand-in)."""
    lift = lift_matrix(3, dim, seed)
    out = []
    for img in images:
        arr = np.asarray(img, dtype=np.float64) / 255.0
        h, w, _ = arr.shape
        if h % stride or w % stride:
            raise ValueError("image dims must be divisible by the stride")
        pooled = arr.reshape(h // stride, stride, w // stride, stride, 3).mean(axis=(1, 3))
        out.append(pooled @ lift)
    return out


def averaging_mlp2(k: int, dim: int) -> Mlp2Params:
    """Neighbor-mean aggregation expressed in the 2-layer MLP parameter space.

    Exact for nonnegative features: the rectifiers never clip.
    """
    w1 = np.zeros((k * dim, 2 * dim))
    for slot in range(k):
        w1[slot * dim:(slot + 1) * dim, :dim] = np.eye(dim) / k
    w2 = np.zeros((2 * dim, dim))
    w2[:dim] = np.eye(dim)
    return Mlp2Params(w1=w1, b1=np.zeros(2 * dim), w2=w2, b2=np.zeros(dim))


def identity_mask_embed(dim: int) -> MaskEmbedParams:
    """Pass-through embedding head (exact for nonnegative queries)."""
    eye = np.eye(dim)
    zero = np.zeros(dim)
    return MaskEmbedParams(w1=eye, b1=zero, w2=eye, b2=zero, w3=eye, b3=zero)


def prototype_queries(
    f_point: np.ndarray,
    labels: PanopticLabel,
    split: ClassSplit,
    decoded: np.ndarray,
    seed: int = 0,
    n_seed: int = 40,
    mask_scale: float = 6.0,
    class_logit: float = 8.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment prototype queries from seed points of the point features.

    Each ground-truth segment contributes one query: its mask embedding is
    the normalized mean feature of up to ``n_seed`` member points (scaled),
    its class logits are one-hot on the segment's class.  ``decoded`` maps
    feature columns to point indices.  Returns (class logits, embeddings).
    """
    rng = np.random.default_rng(seed)
    class_ids = sorted(split.known)
    col = {c: i for i, c in enumerate(class_ids)}
    sem = labels.semantic[decoded]
    inst = labels.instance[decoded]

    segments = []
    for c in class_ids:
        if c in split.stuff:
            members = np.flatnonzero(sem == c)
            if members.size:
                segments.append((c, 0, members))
        else:
            for i in np.unique(inst[(sem == c) & (inst > 0)]):
                segments.append((c, int(i), np.flatnonzero((sem == c) & (inst == i))))

    n_q = len(segments)
    logits = np.zeros((n_q, len(class_ids) + 1))
    e_mask = np.zeros((n_q, f_point.shape[0]))
    for q, (c, _i, members) in enumerate(segments):
        take = members
        if members.size > n_seed:
            take = rng.choice(members, size=n_seed, replace=False)
        proto = f_point[:, take].mean(axis=1)
        norm = np.linalg.norm(proto)
        if norm > 1e-12:
            proto = proto / norm
        e_mask[q] = mask_scale * proto
        logits[q, col[c]] = class_logit
    return logits, e_mask
