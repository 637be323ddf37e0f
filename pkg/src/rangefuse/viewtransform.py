"""Camera-to-range-view correspondence.

The LiDAR cloud is splatted into each camera as a sparse depth map, densified
with a classical morphological pipeline, back-projected into a pseudo point
cloud in the LiDAR frame, and re-projected into the range view.  The result
is a dense per-camera-pixel -> RV-pixel map used to warp image feature grids
into RV alignment, averaging colliding contributors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .rangeview import FovConfig, PointCloud, discretize_pixels, project_to_pixel, spherical_angles

# Default channel width per feature stride (full-scale encoder convention).
SCALE_CHANNELS = {4: 128, 8: 256, 16: 512, 32: 1024}

# Depth completion schedule constants.  The pipeline operates on inverted
# depth (offset - d) so max-dilation prefers near surfaces.
DEPTH_INVERT_OFFSET = 100.0
_DIAMOND5 = np.array(
    [
        [0, 0, 1, 0, 0],
        [0, 1, 1, 1, 0],
        [1, 1, 1, 1, 1],
        [0, 1, 1, 1, 0],
        [0, 0, 1, 0, 0],
    ],
    dtype=bool,
)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: 3x3 intrinsics, 4x4 LiDAR->camera rigid transform."""

    intrinsics: np.ndarray  # (3, 3)
    extrinsics: np.ndarray  # (4, 4), LiDAR frame -> camera frame
    size: tuple[int, int]  # (height, width) pixels

    def __post_init__(self):
        k = np.asarray(self.intrinsics, dtype=np.float64)
        t = np.asarray(self.extrinsics, dtype=np.float64)
        if k.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3x3, got {k.shape}")
        if t.shape != (4, 4):
            raise ValueError(f"extrinsics must be 4x4, got {t.shape}")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if np.any(k[2] != np.array([0.0, 0.0, 1.0])) or k[1, 0] != 0.0:
            raise ValueError("intrinsics bottom row must be [0, 0, 1] with zero lower skew")
        rot = t[:3, :3]
        if abs(np.linalg.det(rot) - 1.0) > 1e-6 or not np.allclose(
            rot @ rot.T, np.eye(3), atol=1e-6
        ):
            raise ValueError("extrinsic rotation must be orthonormal with det +1")
        if np.any(t[3] != np.array([0.0, 0.0, 0.0, 1.0])):
            raise ValueError("extrinsics bottom row must be [0, 0, 0, 1]")
        if self.size[0] <= 0 or self.size[1] <= 0:
            raise ValueError("image size must be positive")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "extrinsics", t)
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))


def load_camera_rig(path) -> list[CameraModel]:
    """JSON rig file: per camera row-major 9-float intrinsics, 16-float
    LiDAR->camera extrinsics, and [height, width] size."""
    with open(path) as f:
        doc = json.load(f)
    cams = []
    for entry in doc["cameras"]:
        cams.append(
            CameraModel(
                intrinsics=np.array(entry["intrinsics"], dtype=np.float64).reshape(3, 3),
                extrinsics=np.array(entry["extrinsics"], dtype=np.float64).reshape(4, 4),
                size=(entry["size"][0], entry["size"][1]),
            )
        )
    return cams


def save_camera_rig(path, cameras: list[CameraModel]) -> None:
    doc = {
        "cameras": [
            {
                "intrinsics": [float(x) for x in cam.intrinsics.ravel()],
                "extrinsics": [float(x) for x in cam.extrinsics.ravel()],
                "size": [cam.size[0], cam.size[1]],
            }
            for cam in cameras
        ]
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


@dataclass(frozen=True)
class FeatureMap:
    """Feature grid at one encoder stride.

    ``strict`` enforces the standard channel width for the stride; pass
    False to transport grids with nonstandard widths.
    """

    scale: int
    values: np.ndarray  # (H_s, W_s, D_s)
    covered: np.ndarray | None = None  # (H_s, W_s) bool, RV-aligned maps only
    strict: bool = True

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if self.scale not in SCALE_CHANNELS:
            raise ValueError(f"scale must be one of {sorted(SCALE_CHANNELS)}, got {self.scale}")
        if vals.ndim != 3:
            raise ValueError(f"feature map must be (H, W, D), got {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("feature map contains non-finite values")
        if self.strict and vals.shape[2] != SCALE_CHANNELS[self.scale]:
            raise ValueError(
                f"stride {self.scale} expects {SCALE_CHANNELS[self.scale]} channels, "
                f"got {vals.shape[2]}"
            )
        object.__setattr__(self, "values", vals)
        if self.covered is not None:
            cov = np.asarray(self.covered, dtype=bool)
            if cov.shape != vals.shape[:2]:
                raise ValueError("coverage mask shape must match the feature grid")
            object.__setattr__(self, "covered", cov)


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel metric depth along the optical axis."""

    depth: np.ndarray  # (H, W) float64
    valid: np.ndarray  # (H, W) bool
    dense: bool = False

    def __post_init__(self):
        d = np.asarray(self.depth, dtype=np.float64)
        v = np.asarray(self.valid, dtype=bool)
        if d.shape != v.shape or d.ndim != 2:
            raise ValueError("depth and valid must be matching 2D grids")
        if np.any(~np.isfinite(d[v])) or np.any(d[v] <= 0):
            raise ValueError("valid depths must be positive and finite")
        object.__setattr__(self, "depth", d)
        object.__setattr__(self, "valid", v)


@dataclass(frozen=True)
class CamToRvMap:
    """Dense camera pixel -> RV pixel correspondence, -1 where absent."""

    rv_rows: list[np.ndarray]  # per camera (C_H, C_W) int64
    rv_cols: list[np.ndarray]
    rv_height: int
    rv_width: int

    def __post_init__(self):
        for rows, cols in zip(self.rv_rows, self.rv_cols):
            present = rows >= 0
            if np.any(rows[present] >= self.rv_height) or np.any(cols[present] >= self.rv_width):
                raise ValueError("mapped RV coordinates fall outside the RV grid")


def project_lidar_to_camera(cloud: PointCloud, cam: CameraModel) -> DepthMap:
    """Sparse z-buffered depth map of the cloud seen from one camera.

    Points behind the camera are skipped; pixel collisions keep the nearest
    depth.
    """
    h, w = cam.size
    depth = np.zeros((h, w), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    if len(cloud) == 0:
        return DepthMap(depth=depth, valid=valid, dense=False)

    pts_h = np.hstack([cloud.xyz, np.ones((len(cloud), 1))])
    cam_pts = (cam.extrinsics @ pts_h.T).T[:, :3]
    z = cam_pts[:, 2]
    front = z > 1e-9
    if not np.any(front):
        return DepthMap(depth=depth, valid=valid, dense=False)

    proj = (cam.intrinsics @ cam_pts[front].T).T
    u = proj[:, 0] / proj[:, 2]
    v = proj[:, 1] / proj[:, 2]
    cols = np.floor(u).astype(np.int64)
    rows = np.floor(v).astype(np.int64)
    inside = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)

    zf = z[front][inside]
    flat = rows[inside] * w + cols[inside]
    order = np.lexsort((zf, flat))
    flat_sorted = flat[order]
    first = np.ones(flat_sorted.size, dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    depth.ravel()[flat_sorted[first]] = zf[order][first]
    valid.ravel()[flat_sorted[first]] = True
    return DepthMap(depth=depth, valid=valid, dense=False)


def densify_depth(sparse: DepthMap, invert_offset: float = DEPTH_INVERT_OFFSET) -> DepthMap:
    """Classical morphological depth completion.

    Schedule: invert depth, 5x5 diamond dilation, 5x5 closing, 7x7
    full-kernel extension of remaining holes, masked median then masked
    Gaussian smoothing, invert back.  All-invalid input stays all-invalid.
    """
    if not np.any(sparse.valid):
        return DepthMap(depth=sparse.depth.copy(), valid=sparse.valid.copy(), dense=True)

    inv = np.zeros_like(sparse.depth)
    clipped = np.clip(sparse.depth[sparse.valid], 1e-3, invert_offset - 1e-3)
    inv[sparse.valid] = invert_offset - clipped

    inv = ndimage.grey_dilation(inv, footprint=_DIAMOND5)
    inv = ndimage.grey_closing(inv, size=(5, 5))

    holes = inv <= 0
    if np.any(holes):
        extended = ndimage.grey_dilation(inv, size=(7, 7))
        inv[holes] = extended[holes]

    filled = inv > 0
    med = ndimage.median_filter(inv, size=5)
    inv = np.where(filled & (med > 0), med, inv)

    # Normalized Gaussian keeps constant fields exact on the valid support.
    filled = inv > 0
    weights = ndimage.gaussian_filter(filled.astype(np.float64), sigma=1.0, truncate=2.0)
    blurred = ndimage.gaussian_filter(np.where(filled, inv, 0.0), sigma=1.0, truncate=2.0)
    with np.errstate(invalid="ignore"):
        smoothed = np.where(weights > 0, blurred / np.maximum(weights, 1e-12), 0.0)
    inv = np.where(filled, smoothed, 0.0)

    valid = inv > 0
    depth = np.zeros_like(sparse.depth)
    depth[valid] = invert_offset - inv[valid]
    return DepthMap(depth=depth, valid=valid, dense=True)


def backproject(
    dense: DepthMap, cam: CameraModel
) -> tuple[PointCloud, np.ndarray, np.ndarray]:
    """Pseudo points in the LiDAR frame, one per valid depth pixel.

    Each pixel (row j, col i) lifts to inv(T) @ [d * inv(K) @ [i, j, 1]; 1].
    Returns the cloud plus the originating (rows, cols) arrays.
    """
    if abs(np.linalg.det(cam.intrinsics)) < 1e-12:
        raise ValueError("intrinsics are singular")
    rows, cols = np.nonzero(dense.valid)
    d = dense.depth[rows, cols]
    k_inv = np.linalg.inv(cam.intrinsics)
    rays = (k_inv @ np.stack([cols, rows, np.ones_like(d)], axis=0)).T
    cam_pts = rays * d[:, None]
    t_inv = np.linalg.inv(cam.extrinsics)
    lidar_pts = (t_inv @ np.hstack([cam_pts, np.ones((cam_pts.shape[0], 1))]).T).T[:, :3]
    cloud = PointCloud(np.hstack([lidar_pts, np.zeros((lidar_pts.shape[0], 1))]))
    return cloud, rows, cols


def map_pseudo_to_rv(
    pseudo_xyz: np.ndarray,
    src_rows: np.ndarray,
    src_cols: np.ndarray,
    cam_size: tuple[int, int],
    fov: FovConfig,
    rv_height: int,
    rv_width: int,
) -> tuple[np.ndarray, np.ndarray]:
    """RV coordinates of back-projected pseudo points, keyed by origin pixel.

    Zero-range pseudo points and out-of-fov directions stay -1.
    """
    rows_map = np.full(cam_size, -1, dtype=np.int64)
    cols_map = np.full(cam_size, -1, dtype=np.int64)
    pseudo_xyz = np.atleast_2d(np.asarray(pseudo_xyz, dtype=np.float64))
    rng = np.linalg.norm(pseudo_xyz, axis=1)
    nonzero = rng > 1e-9
    if np.any(nonzero):
        theta, phi, _ = spherical_angles(pseudo_xyz[nonzero])
        u, v = project_to_pixel(theta, phi, fov, rv_height, rv_width)
        rr, cc, keep = discretize_pixels(u, v, rv_height, rv_width)
        src_r = np.asarray(src_rows)[nonzero][keep]
        src_c = np.asarray(src_cols)[nonzero][keep]
        rows_map[src_r, src_c] = rr[keep]
        cols_map[src_r, src_c] = cc[keep]
    return rows_map, cols_map


def build_cam_to_rv_map(
    cameras: list[CameraModel],
    cloud: PointCloud,
    fov: FovConfig,
    rv_height: int,
    rv_width: int,
) -> CamToRvMap:
    """Full-resolution camera pixel -> RV pixel map for every camera.

    Runs the sparse-depth / densify / backproject chain per camera and sends
    the pseudo points through the same RV projection as real points.
    """
    rv_rows, rv_cols = [], []
    for cam in cameras:
        dense = densify_depth(project_lidar_to_camera(cloud, cam))
        if np.any(dense.valid):
            pseudo, p_rows, p_cols = backproject(dense, cam)
            rows_map, cols_map = map_pseudo_to_rv(
                pseudo.xyz, p_rows, p_cols, cam.size, fov, rv_height, rv_width
            )
        else:
            rows_map = np.full(cam.size, -1, dtype=np.int64)
            cols_map = np.full(cam.size, -1, dtype=np.int64)
        rv_rows.append(rows_map)
        rv_cols.append(cols_map)
    return CamToRvMap(rv_rows=rv_rows, rv_cols=rv_cols, rv_height=rv_height, rv_width=rv_width)


def warp_features(
    camera_features: list[np.ndarray],
    cam_map: CamToRvMap,
    stride: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Average camera feature vectors into the RV grid at one stride.

    The full-resolution map is reused at stride s by floor-dividing both
    sides.  Returns the RV-aligned features plus the coverage mask; cells
    with no contributor are zero and uncovered.
    """
    rv_height, rv_width = cam_map.rv_height, cam_map.rv_width
    if rv_height % stride or rv_width % stride:
        raise ValueError(f"RV dims {rv_height}x{rv_width} not divisible by stride {stride}")
    out_h, out_w = rv_height // stride, rv_width // stride
    channels = None
    acc = counts = None
    for cam_idx, feats in enumerate(camera_features):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 3:
            raise ValueError("camera features must be (H_s, W_s, D)")
        if channels is None:
            channels = feats.shape[2]
            acc = np.zeros((out_h, out_w, channels), dtype=np.float64)
            counts = np.zeros((out_h, out_w), dtype=np.int64)
        elif feats.shape[2] != channels:
            raise ValueError("camera feature channel counts disagree")
        rows_map = cam_map.rv_rows[cam_idx]
        cols_map = cam_map.rv_cols[cam_idx]
        cam_h, cam_w = rows_map.shape
        if feats.shape[0] != cam_h // stride or feats.shape[1] != cam_w // stride:
            raise ValueError(
                f"camera {cam_idx} features {feats.shape[:2]} do not match "
                f"{cam_h}x{cam_w} at stride {stride}"
            )
        present = rows_map >= 0
        src_r, src_c = np.nonzero(present)
        dst = (rows_map[present] // stride) * out_w + (cols_map[present] // stride)
        vals = feats[src_r // stride, src_c // stride]
        np.add.at(acc.reshape(-1, channels), dst, vals)
        np.add.at(counts.reshape(-1), dst, 1)
    if channels is None:
        raise ValueError("no camera features given")
    covered = counts > 0
    out = np.zeros_like(acc)
    out[covered] = acc[covered] / counts[covered][:, None]
    return out, covered
