"""Spherical range-view projection of LiDAR point clouds.

A sweep of N points (x, y, z, intensity) is mapped onto a dense H x W grid
indexed by azimuth (columns) and elevation (rows).  Each occupied cell stores
the (range, height, intensity) of the nearest point that landed there; the
full point->pixel and pixel->points correspondence is kept so 2D results can
be lifted back to the original cloud.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INVALID_RANGE = -1.0


class DegeneratePointError(ValueError):
    """A point with zero length cannot be given spherical angles."""


@dataclass(frozen=True)
class PointCloud:
    """N x 4 array of (x, y, z, intensity), LiDAR frame, meters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"point cloud must be (N, 4), got {pts.shape}")
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite values")
        object.__setattr__(self, "points", pts)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class FovConfig:
    """Angular extent of the sensor, degrees.

    ``f_up`` > 0 is the span above the horizon, ``f_down`` <= 0 below;
    ``f_left``/``f_right`` bound the azimuth about the forward axis.
    """

    f_up: float
    f_down: float
    f_left: float
    f_right: float

    def __post_init__(self):
        if self.vertical_span_deg <= 0:
            raise ValueError("vertical field of view must span > 0 degrees")
        if self.horizontal_span_deg <= 0:
            raise ValueError("horizontal field of view must span > 0 degrees")

    @property
    def vertical_span_deg(self) -> float:
        return abs(self.f_up) + abs(self.f_down)

    @property
    def horizontal_span_deg(self) -> float:
        return abs(self.f_left) + abs(self.f_right)

    @property
    def vertical_span_rad(self) -> float:
        return np.deg2rad(self.vertical_span_deg)

    @property
    def horizontal_span_rad(self) -> float:
        return np.deg2rad(self.horizontal_span_deg)


# Per-dataset presets.  All are horizontally full-circle.
FOV_PRESETS = {
    "nuscenes": FovConfig(f_up=10.0, f_down=-30.0, f_left=-180.0, f_right=180.0),
    "semantickitti": FovConfig(f_up=10.0, f_down=-30.0, f_left=-180.0, f_right=180.0),
    "waymo": FovConfig(f_up=2.4, f_down=-17.6, f_left=-180.0, f_right=180.0),
}


@dataclass(frozen=True)
class RangeImage:
    """H x W grid of (range, z, intensity) with a validity mask.

    Unoccupied cells carry the sentinel (range=-1, z=0, intensity=0).
    """

    channels: np.ndarray  # (H, W, 3)
    valid: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]

    @property
    def ranges(self) -> np.ndarray:
        return self.channels[:, :, 0]

    @property
    def heights_z(self) -> np.ndarray:
        return self.channels[:, :, 1]

    @property
    def intensities(self) -> np.ndarray:
        return self.channels[:, :, 2]


@dataclass(frozen=True)
class RvMapping:
    """Invertible point <-> pixel correspondence of one rasterization.

    ``rows``/``cols`` give each point's pixel (-1 where out of fov).  The
    inverse direction is stored CSR-style: ``inverse_points[inverse_starts[f]
    : inverse_starts[f+1]]`` lists the points in flat pixel f, nearest first.
    ``nearest`` holds the retained (minimum-range) point per pixel, -1 where
    empty.
    """

    height: int
    width: int
    rows: np.ndarray  # (N,) int64, -1 = out of fov
    cols: np.ndarray  # (N,) int64
    in_fov: np.ndarray  # (N,) bool
    ranges: np.ndarray  # (N,) float64, spherical range per point
    inverse_starts: np.ndarray  # (H*W + 1,) int64
    inverse_points: np.ndarray  # (n_in_fov,) int64
    nearest: np.ndarray  # (H, W) int64, -1 = empty

    def points_at(self, row: int, col: int) -> np.ndarray:
        """Indices of all points that landed in pixel (row, col)."""
        if not (0 <= row < self.height and 0 <= col < self.width):
            raise IndexError(f"pixel ({row}, {col}) outside {self.height}x{self.width} grid")
        flat = row * self.width + col
        return self.inverse_points[self.inverse_starts[flat] : self.inverse_starts[flat + 1]]


def spherical_angles(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Azimuth, elevation and range of points, LiDAR frame.

    theta = -atan2(y, x) in (-pi, pi], phi = asin(z / r).  Raises
    DegeneratePointError for zero-length points.
    """
    xyz = np.atleast_2d(np.asarray(xyz, dtype=np.float64))
    r = np.sqrt(np.sum(xyz**2, axis=1))
    if np.any(r <= 0.0):
        raise DegeneratePointError("zero-length point has no direction")
    theta = -np.arctan2(xyz[:, 1], xyz[:, 0])
    phi = np.arcsin(np.clip(xyz[:, 2] / r, -1.0, 1.0))
    return theta, phi, r


def project_to_pixel(
    theta: np.ndarray, phi: np.ndarray, fov: FovConfig, height: int, width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Continuous (col, row) image coordinates of angular directions.

    u = (theta + |f_left|) / f_h * W, v = (1 - (phi + |f_down|) / f_v) * H.
    The caller discretizes (see rasterize).
    """
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    u = (theta + np.deg2rad(abs(fov.f_left))) / fov.horizontal_span_rad * width
    v = (1.0 - (phi + np.deg2rad(abs(fov.f_down))) / fov.vertical_span_rad) * height
    return u, v


def pixel_center_angles(
    rows: np.ndarray, cols: np.ndarray, fov: FovConfig, height: int, width: int
) -> tuple[np.ndarray, np.ndarray]:
    """Azimuth/elevation of pixel centers, inverting project_to_pixel."""
    cols = np.asarray(cols, dtype=np.float64)
    rows = np.asarray(rows, dtype=np.float64)
    theta = (cols + 0.5) / width * fov.horizontal_span_rad - np.deg2rad(abs(fov.f_left))
    phi = (1.0 - (rows + 0.5) / height) * fov.vertical_span_rad - np.deg2rad(abs(fov.f_down))
    return theta, phi


def discretize_pixels(
    u: np.ndarray, v: np.ndarray, height: int, width: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Floor-and-clamp continuous coordinates to grid cells.

    A point is kept only while its continuous coordinate stays within one
    pixel pitch of the retained cell center; border points up to half a cell
    outside the grid therefore stay usable, anything farther is out-of-fov.
    """
    cols = np.clip(np.floor(u), 0, width - 1).astype(np.int64)
    rows = np.clip(np.floor(v), 0, height - 1).astype(np.int64)
    keep = (np.abs(u - (cols + 0.5)) < 1.0) & (np.abs(v - (rows + 0.5)) < 1.0)
    return rows, cols, keep


def rasterize(
    cloud: PointCloud, fov: FovConfig, height: int, width: int
) -> tuple[RangeImage, RvMapping]:
    """Project a cloud into the range view, nearest point winning per pixel.

    Ties in range resolve to the lowest point index.  Output is deterministic
    for identical inputs.
    """
    n = len(cloud)
    channels = np.zeros((height, width, 3), dtype=np.float64)
    channels[:, :, 0] = INVALID_RANGE
    valid = np.zeros((height, width), dtype=bool)
    nearest = np.full((height, width), -1, dtype=np.int64)

    if n == 0:
        mapping = RvMapping(
            height=height,
            width=width,
            rows=np.empty(0, dtype=np.int64),
            cols=np.empty(0, dtype=np.int64),
            in_fov=np.empty(0, dtype=bool),
            ranges=np.empty(0, dtype=np.float64),
            inverse_starts=np.zeros(height * width + 1, dtype=np.int64),
            inverse_points=np.empty(0, dtype=np.int64),
            nearest=nearest,
        )
        return RangeImage(channels=channels, valid=valid), mapping

    theta, phi, r = spherical_angles(cloud.xyz)
    u, v = project_to_pixel(theta, phi, fov, height, width)
    rows, cols, in_fov = discretize_pixels(u, v, height, width)
    rows = np.where(in_fov, rows, -1)
    cols = np.where(in_fov, cols, -1)

    idx = np.nonzero(in_fov)[0]
    flat = rows[idx] * width + cols[idx]
    # Ascending (pixel, range, index): group head is the retained point.
    order = np.lexsort((idx, r[idx], flat))
    sorted_flat = flat[order]
    sorted_idx = idx[order]

    counts = np.bincount(sorted_flat, minlength=height * width)
    starts = np.zeros(height * width + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])

    occupied = counts > 0
    head = sorted_idx[starts[:-1][occupied]]
    occ_rows, occ_cols = np.divmod(np.nonzero(occupied)[0], width)
    nearest[occ_rows, occ_cols] = head
    valid[occ_rows, occ_cols] = True
    channels[occ_rows, occ_cols, 0] = r[head]
    channels[occ_rows, occ_cols, 1] = cloud.xyz[head, 2]
    channels[occ_rows, occ_cols, 2] = cloud.intensity[head]

    mapping = RvMapping(
        height=height,
        width=width,
        rows=rows,
        cols=cols,
        in_fov=in_fov,
        ranges=r,
        inverse_starts=starts,
        inverse_points=sorted_idx,
        nearest=nearest,
    )
    return RangeImage(channels=channels, valid=valid), mapping
