"""Panoptic ground truth from semantic labels plus oriented 3D boxes.

Instance ids come from box track ids: a point joins an instance iff it lies
inside the box (closed boundaries) and its semantic class is compatible with
the box category.  Overlaps resolve toward the smaller box, then the nearer
center.  Instances below the min-point cut keep their semantics but lose
the instance id.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .panoptic import MAX_CLASS_ID, PanopticLabel

# semantic schema (void = 0); ids stay stable across configs
SEMANTIC_CLASSES = {
    "void": 0,
    "car": 1,
    "truck": 2,
    "bus": 3,
    "other_vehicle": 4,
    "pedestrian": 5,
    "bicyclist": 6,
    "motorcyclist": 7,
    "road": 8,
    "sidewalk": 9,
    "building": 10,
    "vegetation": 11,
    "terrain": 12,
    "pole": 13,
    "sign": 14,
}

THING_CLASSES = frozenset(
    SEMANTIC_CLASSES[n]
    for n in ("car", "truck", "bus", "other_vehicle", "pedestrian", "bicyclist")
)
# kept in the schema, receives no instances (too few boxes in the source data)
UNUSED_CLASSES = frozenset({SEMANTIC_CLASSES["motorcyclist"]})

BOX_CLASSES = {"vehicle": 1, "pedestrian": 2, "two_wheeler": 3}

DEFAULT_CLASS_MAP: dict[int, frozenset[int]] = {
    BOX_CLASSES["vehicle"]: frozenset(
        SEMANTIC_CLASSES[n] for n in ("car", "truck", "bus", "other_vehicle")
    ),
    BOX_CLASSES["pedestrian"]: frozenset({SEMANTIC_CLASSES["pedestrian"]}),
    BOX_CLASSES["two_wheeler"]: frozenset(
        SEMANTIC_CLASSES[n] for n in ("bicyclist", "motorcyclist")
    ),
}

DEFAULT_MIN_POINTS = 50


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center (x, y, z), size (length, width, height), yaw about +z."""

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    class_id: int
    track_id: int

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        size = tuple(float(s) for s in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must have three components")
        if not all(math.isfinite(v) for v in center + size + (self.yaw,)):
            raise ValueError("box fields must be finite")
        if min(size) <= 0.0:
            raise ValueError(f"box sizes must be positive, got {size}")
        if not (-math.pi < self.yaw <= math.pi):
            raise ValueError(f"yaw must lie in (-pi, pi], got {self.yaw}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(self.yaw))
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "track_id", int(self.track_id))

    @property
    def volume(self) -> float:
        return self.size[0] * self.size[1] * self.size[2]


def _as_xyz(cloud) -> np.ndarray:
    if hasattr(cloud, "xyz"):
        return cloud.xyz
    pts = np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] not in (3, 4):
        raise ValueError(f"expected (N, 3) or (N, 4) points, got {pts.shape}")
    return pts[:, :3]


def points_in_box(cloud, box: Box3D) -> np.ndarray:
    """Boolean mask of points inside the box, boundaries included."""
    xyz = _as_xyz(cloud)
    local = xyz - np.asarray(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = c * local[:, 0] + s * local[:, 1]  # rotate by -yaw
    y = -s * local[:, 0] + c * local[:, 1]
    z = local[:, 2]
    half = np.asarray(box.size) / 2.0
    return (np.abs(x) <= half[0]) & (np.abs(y) <= half[1]) & (np.abs(z) <= half[2])


def generate_panoptic(
    cloud,
    semantics: np.ndarray,
    boxes: list[Box3D],
    class_map: dict[int, frozenset[int]] | None = None,
    min_points: int = DEFAULT_MIN_POINTS,
) -> PanopticLabel:
    """Merge per-point semantics with boxes into a panoptic labeling.

    Instance id = track id of the owning box; ownership requires the point
    inside the box and its semantic class in the box category's fan-out.
    Points claimed by several boxes go to the smallest volume, ties to the
    nearer center, then the earlier box.  Instances with fewer than
    ``min_points`` points are dissolved (instance 0, semantics kept).
    """
    xyz = _as_xyz(cloud)
    semantics = np.asarray(semantics, dtype=np.int64)
    if semantics.shape != (xyz.shape[0],):
        raise ValueError("semantics must be one class id per point")
    if class_map is None:
        class_map = DEFAULT_CLASS_MAP
    if min_points < 0:
        raise ValueError("min_points must be >= 0")

    track_ids = [b.track_id for b in boxes]
    if len(track_ids) != len(set(track_ids)):
        dupes = sorted({t for t in track_ids if track_ids.count(t) > 1})
        raise ValueError(f"duplicate track ids: {dupes}")
    for box in boxes:
        if not (1 <= box.track_id <= MAX_CLASS_ID):
            raise ValueError(f"track id {box.track_id} outside [1, {MAX_CLASS_ID}]")
        if box.class_id not in class_map:
            raise ValueError(f"box class {box.class_id} missing from the class map")

    n = xyz.shape[0]
    instance = np.zeros(n, dtype=np.int64)
    best_vol = np.full(n, np.inf)
    best_dist = np.full(n, np.inf)
    for box in boxes:
        compatible = np.isin(semantics, sorted(class_map[box.class_id]))
        claimed = compatible & points_in_box(xyz, box)
        if not np.any(claimed):
            continue
        dist = np.linalg.norm(xyz[claimed] - np.asarray(box.center), axis=1)
        vol = box.volume
        # smaller box wins, then nearer center; earlier box wins exact ties
        better = (vol < best_vol[claimed]) | (
            (vol == best_vol[claimed]) & (dist < best_dist[claimed])
        )
        idx = np.flatnonzero(claimed)[better]
        instance[idx] = box.track_id
        best_vol[idx] = vol
        best_dist[idx] = dist[better]

    if min_points > 0:
        ids, counts = np.unique(instance[instance > 0], return_counts=True)
        small = ids[counts < min_points]
        if small.size:
            instance[np.isin(instance, small)] = 0
    return PanopticLabel(semantics, instance)


def save_class_map(class_map: dict[int, frozenset[int]], path) -> None:
    payload = {str(k): sorted(v) for k, v in sorted(class_map.items())}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_class_map(path) -> dict[int, frozenset[int]]:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    return {int(k): frozenset(int(c) for c in v) for k, v in payload.items()}
