"""Non-spatial image corruption catalog.

Synthesizes unreliable camera inputs for uncertainty training and robustness
evaluation.  Every corruption keeps the image dimensions (no geometric
remap), clamps to the declared value range, and is a pure function of
(image, spec) including the spec's seed.

Images are RGB, either uint8 in [0, 255] or floating point in [0, 1]; the
output follows the input convention.  All internal math runs on a float
0..255 working copy.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

# Declared constants for under-specified corruption parameters.
FOG_COLOR = (240.0, 240.0, 240.0)
RAIN_STREAK_COLOR = (200.0, 200.0, 210.0)
RAIN_STREAK_ALPHA = 0.5
RAIN_LENGTH_RANGE = (5, 20)
RAIN_ANGLE_RANGE = (-15.0, 15.0)
BLOOM_THRESHOLD = 180.0
EXPOSURE_GAMMA = 2.2

# Parameter ranges per corruption kind.  Closed intervals for scalars,
# explicit sets for discrete choices, None for free-form parameters.
PARAM_RANGES: dict[str, dict[str, Any]] = {
    "brightness": {"factor": (0.7, 1.3)},
    "contrast": {"factor": (0.7, 1.3)},
    "saturation": {"factor": (0.7, 1.3)},
    "hue": {"degrees": (-18.0, 18.0)},
    "gamma": {"gamma": (0.7, 1.3)},
    "color_jitter": {},
    "gaussian_noise": {"sigma": (5.0, 25.0)},
    "poisson_noise": {},
    "speckle_noise": {"scale": (0.1, 0.3)},
    "jpeg": {"quality": (40, 95)},
    "gaussian_blur": {"kernel": {3, 5, 7}},
    "motion_blur": {"length": (5, 15), "angle": (0.0, 180.0)},
    "exposure": {"factor": (0.5, 1.8)},
    "iso_noise": {"gain": (1.0, 2.5), "noise_std": (10.0, 30.0)},
    "fog": {"alpha": (0.3, 0.7)},
    "rain": {"count": (100, 300)},
    "shadows": {"count": (1, 4), "intensity": (0.3, 0.7)},
    "color_temperature": {"delta": (-50.0, 50.0)},
    "vignette": {"intensity": (0.3, 0.7)},
    "white_balance": {"r": (0.8, 1.2), "g": (0.8, 1.2), "b": (0.8, 1.2)},
    "histogram_match": {"reference": None},
    "dropout": {},
    "bloom": {"kernel": (15, 40), "intensity": (30.0, 80.0)},
}
KINDS = tuple(sorted(PARAM_RANGES))

# Kinds whose parameter sweep has one natural severity axis.
PRIMARY_PARAM = {
    "brightness": "factor",
    "contrast": "factor",
    "saturation": "factor",
    "hue": "degrees",
    "gamma": "gamma",
    "gaussian_noise": "sigma",
    "speckle_noise": "scale",
    "jpeg": "quality",
    "gaussian_blur": "kernel",
    "motion_blur": "length",
    "exposure": "factor",
    "iso_noise": "gain",
    "fog": "alpha",
    "rain": "count",
    "shadows": "intensity",
    "color_temperature": "delta",
    "vignette": "intensity",
    "bloom": "intensity",
}

_INT_PARAMS = {"quality", "kernel", "length", "count"}


@dataclass(frozen=True)
class DegradationSpec:
    """One corruption: kind, kind-specific parameters, and a seed."""

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PARAM_RANGES:
            raise ValueError(f"unknown degradation kind {self.kind!r}")
        ranges = PARAM_RANGES[self.kind]
        unknown = set(self.params) - set(ranges)
        if unknown:
            raise ValueError(f"{self.kind}: unexpected params {sorted(unknown)}")
        missing = set(ranges) - set(self.params)
        if missing:
            raise ValueError(f"{self.kind}: missing params {sorted(missing)}")
        for name, bound in ranges.items():
            value = self.params[name]
            if bound is None:
                continue
            if isinstance(bound, set):
                if value not in bound:
                    raise ValueError(f"{self.kind}.{name}={value} not in {sorted(bound)}")
            else:
                lo, hi = bound
                if not (lo <= value <= hi):
                    raise ValueError(f"{self.kind}.{name}={value} outside [{lo}, {hi}]")
            if name in _INT_PARAMS and int(value) != value:
                raise ValueError(f"{self.kind}.{name} must be an integer")
        if self.kind == "histogram_match":
            ref = np.asarray(self.params["reference"])
            if ref.ndim != 3 or ref.shape[2] != 3 or ref.size == 0:
                raise ValueError("histogram_match reference must be a nonempty RGB image")
        object.__setattr__(self, "params", dict(self.params))


# ---------------------------------------------------------------------------
# Color space helpers (vectorized, [0, 1] domain).


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-12), 0.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    safe = np.maximum(delta, 1e-12)
    h = np.where(
        maxc == r,
        (g - b) / safe,
        np.where(maxc == g, 2.0 + (b - r) / safe, 4.0 + (r - g) / safe),
    )
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    choices = np.stack(
        [
            np.stack([v, t, p], axis=-1),
            np.stack([q, v, p], axis=-1),
            np.stack([p, v, t], axis=-1),
            np.stack([p, q, v], axis=-1),
            np.stack([t, p, v], axis=-1),
            np.stack([v, p, q], axis=-1),
        ],
        axis=0,
    )
    return np.take_along_axis(choices, i[None, ..., None].repeat(3, axis=-1), axis=0)[0]


# ---------------------------------------------------------------------------
# Kind implementations.  Each takes (working image 0..255 float, params, rng)
# and returns an unclamped working image; apply() clamps once at the end.


def _brightness(arr, params, rng):
    return arr * params["factor"]


def _contrast(arr, params, rng):
    mean = arr.mean()
    return (arr - mean) * params["factor"] + mean


def _saturation(arr, params, rng):
    hsv = rgb_to_hsv(arr / 255.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * params["factor"], 0.0, 1.0)
    return hsv_to_rgb(hsv) * 255.0


def _hue(arr, params, rng):
    hsv = rgb_to_hsv(arr / 255.0)
    hsv[..., 0] = (hsv[..., 0] + params["degrees"] / 360.0) % 1.0
    return hsv_to_rgb(hsv) * 255.0


def _gamma(arr, params, rng):
    return 255.0 * np.power(np.clip(arr, 0, 255) / 255.0, params["gamma"])


def _color_jitter(arr, params, rng):
    # Sub-corruption order and draws are fixed by the seed.
    if rng.random() < 0.8:
        arr = _brightness(arr, {"factor": rng.uniform(0.6, 1.4)}, rng)
    if rng.random() < 0.8:
        arr = np.clip(_contrast(arr, {"factor": rng.uniform(0.6, 1.4)}, rng), 0, 255)
    if rng.random() < 0.8:
        arr = _saturation(np.clip(arr, 0, 255), {"factor": rng.uniform(0.6, 1.4)}, rng)
    if rng.random() < 0.5:
        arr = _hue(np.clip(arr, 0, 255), {"degrees": rng.uniform(-18.0, 18.0)}, rng)
    return arr


def _gaussian_noise(arr, params, rng):
    return arr + rng.normal(0.0, params["sigma"], size=arr.shape)


def _poisson_noise(arr, params, rng):
    return rng.poisson(np.clip(arr, 0, None)).astype(np.float64)


def _speckle_noise(arr, params, rng):
    return arr * (1.0 + params["scale"] * rng.normal(size=arr.shape))


# Standard baseline JPEG quantization tables (luminance, chrominance).
_JPEG_LUMA_Q = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)
_JPEG_CHROMA_Q = np.array(
    [
        [17, 18, 24, 47, 99, 99, 99, 99],
        [18, 21, 26, 66, 99, 99, 99, 99],
        [24, 26, 56, 99, 99, 99, 99, 99],
        [47, 66, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
        [99, 99, 99, 99, 99, 99, 99, 99],
    ],
    dtype=np.float64,
)


def _jpeg_scaled_table(base: np.ndarray, quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    return np.clip(np.floor((base * scale + 50.0) / 100.0), 1.0, 255.0)


def _blockwise_quantize(channel: np.ndarray, table: np.ndarray) -> np.ndarray:
    h, w = channel.shape
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(channel, ((0, ph), (0, pw)), mode="edge")
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    blocks = padded.reshape(bh, 8, bw, 8).transpose(0, 2, 1, 3)
    coef = sfft.dctn(blocks - 128.0, axes=(2, 3), norm="ortho")
    coef = np.round(coef / table) * table
    out = sfft.idctn(coef, axes=(2, 3), norm="ortho") + 128.0
    return out.transpose(0, 2, 1, 3).reshape(padded.shape)[:h, :w]


def _jpeg(arr, params, rng):
    """Quantize/dequantize 8x8 DCT blocks with quality-scaled tables.

    Approximates JPEG's lossy core (no entropy coding, no chroma
    subsampling); reproduces the blocking and quantization artifacts.
    """
    quality = int(params["quality"])
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    cb = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0
    cr = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0
    y = _blockwise_quantize(y, _jpeg_scaled_table(_JPEG_LUMA_Q, quality))
    cb = _blockwise_quantize(cb, _jpeg_scaled_table(_JPEG_CHROMA_Q, quality))
    cr = _blockwise_quantize(cr, _jpeg_scaled_table(_JPEG_CHROMA_Q, quality))
    r = y + 1.402 * (cr - 128.0)
    g = y - 0.344136 * (cb - 128.0) - 0.714136 * (cr - 128.0)
    b = y + 1.772 * (cb - 128.0)
    return np.stack([r, g, b], axis=-1)


def _gaussian_kernel_1d(size: int) -> np.ndarray:
    sigma = 0.3 * ((size - 1) * 0.5 - 1.0) + 0.8
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _gaussian_blur(arr, params, rng):
    k = _gaussian_kernel_1d(int(params["kernel"]))
    out = ndimage.correlate1d(arr, k, axis=0, mode="nearest")
    return ndimage.correlate1d(out, k, axis=1, mode="nearest")


def motion_blur_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Linear motion kernel: a length-px line through the center, sum 1."""
    c = (length - 1) / 2.0
    t = np.linspace(-c, c, 2 * length)
    rad = np.deg2rad(angle_deg)
    cols = np.clip(np.round(c + t * np.cos(rad)).astype(int), 0, length - 1)
    rows = np.clip(np.round(c - t * np.sin(rad)).astype(int), 0, length - 1)
    kernel = np.zeros((length, length))
    kernel[rows, cols] = 1.0
    return kernel / kernel.sum()


def _motion_blur(arr, params, rng):
    kernel = motion_blur_kernel(int(params["length"]), float(params["angle"]))
    out = np.empty_like(arr)
    for ch in range(3):
        out[..., ch] = ndimage.correlate(arr[..., ch], kernel, mode="nearest")
    return out


def _exposure(arr, params, rng):
    # Scaling in linear light, i.e. before the display gamma.
    linear = np.power(np.clip(arr, 0, 255) / 255.0, EXPOSURE_GAMMA)
    scaled = np.clip(linear * params["factor"], 0.0, 1.0)
    return 255.0 * np.power(scaled, 1.0 / EXPOSURE_GAMMA)


def _iso_noise(arr, params, rng):
    gain = params["gain"]
    return arr * gain + rng.normal(0.0, params["noise_std"] * gain, size=arr.shape)


def _fog(arr, params, rng):
    alpha = params["alpha"]
    return (1.0 - alpha) * arr + alpha * np.asarray(FOG_COLOR)


def _rain(arr, params, rng):
    h, w = arr.shape[:2]
    out = arr.copy()
    color = np.asarray(RAIN_STREAK_COLOR)
    for _ in range(int(params["count"])):
        length = rng.integers(RAIN_LENGTH_RANGE[0], RAIN_LENGTH_RANGE[1] + 1)
        angle = np.deg2rad(rng.uniform(*RAIN_ANGLE_RANGE))
        r0 = rng.uniform(0, h)
        c0 = rng.uniform(0, w)
        t = np.arange(length, dtype=np.float64)
        rows = np.round(r0 + t * np.cos(angle)).astype(int)
        cols = np.round(c0 + t * np.sin(angle)).astype(int)
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        out[rows[inside], cols[inside]] = (
            (1.0 - RAIN_STREAK_ALPHA) * out[rows[inside], cols[inside]]
            + RAIN_STREAK_ALPHA * color
        )
    return out


def _fill_polygon(height: int, width: int, verts: np.ndarray) -> np.ndarray:
    """Even-odd-rule rasterization of one polygon over pixel centers."""
    yy = np.arange(height, dtype=np.float64)[:, None] + 0.5
    xx = np.arange(width, dtype=np.float64)[None, :] + 0.5
    inside = np.zeros((height, width), dtype=bool)
    n = len(verts)
    for a in range(n):
        x1, y1 = verts[a]
        x2, y2 = verts[(a + 1) % n]
        crosses = (y1 <= yy) != (y2 <= yy)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (yy - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xx < x_at)
    return inside


def _shadows(arr, params, rng):
    h, w = arr.shape[:2]
    out = arr.copy()
    for _ in range(int(params["count"])):
        n_verts = rng.integers(3, 9)
        verts = np.stack([rng.uniform(0, w, n_verts), rng.uniform(0, h, n_verts)], axis=1)
        mask = _fill_polygon(h, w, verts)
        out[mask] = out[mask] * params["intensity"]
    return out


def _color_temperature(arr, params, rng):
    out = arr.copy()
    out[..., 0] = out[..., 0] + params["delta"]
    out[..., 2] = out[..., 2] - params["delta"]
    return out


def _vignette(arr, params, rng):
    h, w = arr.shape[:2]
    yy = (np.arange(h) - (h - 1) / 2.0)[:, None]
    xx = (np.arange(w) - (w - 1) / 2.0)[None, :]
    r2 = (yy**2 + xx**2) / max(((h - 1) / 2.0) ** 2 + ((w - 1) / 2.0) ** 2, 1e-12)
    factor = 1.0 - params["intensity"] * r2
    return arr * factor[..., None]


def _white_balance(arr, params, rng):
    return arr * np.asarray([params["r"], params["g"], params["b"]])


def _histogram_match(arr, params, rng):
    """Per-channel cumulative-distribution remap onto the reference."""
    ref = np.asarray(params["reference"])
    ref255 = _to_working(ref)[0]
    src = np.clip(np.round(arr), 0, 255).astype(np.uint8)
    ref8 = np.clip(np.round(ref255), 0, 255).astype(np.uint8)
    out = np.empty_like(arr)
    for ch in range(3):
        src_hist = np.bincount(src[..., ch].ravel(), minlength=256)
        ref_hist = np.bincount(ref8[..., ch].ravel(), minlength=256)
        src_cdf = np.cumsum(src_hist) / src[..., ch].size
        ref_cdf = np.cumsum(ref_hist) / ref8[..., ch].size
        lut = np.searchsorted(ref_cdf, src_cdf, side="left").clip(0, 255)
        out[..., ch] = lut[src[..., ch]]
    return out


def _dropout(arr, params, rng):
    return np.zeros_like(arr)


def _bloom(arr, params, rng):
    """Spread highlight energy with a Gaussian kernel."""
    k = int(params["kernel"])
    highlights = np.clip(arr - BLOOM_THRESHOLD, 0.0, None)
    kern = _gaussian_kernel_1d(k | 1)  # odd footprint
    spread = ndimage.correlate1d(highlights, kern, axis=0, mode="nearest")
    spread = ndimage.correlate1d(spread, kern, axis=1, mode="nearest")
    return arr + params["intensity"] / 255.0 * spread


_APPLY = {
    "brightness": _brightness,
    "contrast": _contrast,
    "saturation": _saturation,
    "hue": _hue,
    "gamma": _gamma,
    "color_jitter": _color_jitter,
    "gaussian_noise": _gaussian_noise,
    "poisson_noise": _poisson_noise,
    "speckle_noise": _speckle_noise,
    "jpeg": _jpeg,
    "gaussian_blur": _gaussian_blur,
    "motion_blur": _motion_blur,
    "exposure": _exposure,
    "iso_noise": _iso_noise,
    "fog": _fog,
    "rain": _rain,
    "shadows": _shadows,
    "color_temperature": _color_temperature,
    "vignette": _vignette,
    "white_balance": _white_balance,
    "histogram_match": _histogram_match,
    "dropout": _dropout,
    "bloom": _bloom,
}
assert set(_APPLY) == set(PARAM_RANGES)


def _to_working(img: np.ndarray) -> tuple[np.ndarray, bool]:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB image, got {img.shape}")
    if img.dtype == np.uint8:
        return img.astype(np.float64), False
    arr = img.astype(np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr * 255.0, True


def apply(img: np.ndarray, spec: DegradationSpec | None) -> np.ndarray:
    """Corrupt an image; None means the identity (clean) branch."""
    arr, is_float = _to_working(img)
    if spec is not None:
        rng = np.random.default_rng(spec.seed)
        arr = _APPLY[spec.kind](arr, spec.params, rng)
    arr = np.clip(arr, 0.0, 255.0)
    if is_float:
        return arr / 255.0
    return np.round(arr).astype(np.uint8)


def sample_spec(rng: np.random.Generator, reference_pool=None) -> DegradationSpec | None:
    """Half the time identity; otherwise a uniform kind with uniform params."""
    if rng.random() < 0.5:
        return None
    kind = KINDS[rng.integers(0, len(KINDS))]
    params = {}
    for name, bound in PARAM_RANGES[kind].items():
        if name == "reference":
            if reference_pool is None:
                reference_pool = builtin_reference_pool()
            params[name] = reference_pool[rng.integers(0, len(reference_pool))]
        elif isinstance(bound, set):
            choices = sorted(bound)
            params[name] = choices[rng.integers(0, len(choices))]
        elif name in _INT_PARAMS:
            params[name] = int(rng.integers(bound[0], bound[1] + 1))
        else:
            params[name] = float(rng.uniform(bound[0], bound[1]))
    return DegradationSpec(kind=kind, params=params, seed=int(rng.integers(0, 2**63)))


def severity_sweep(img: np.ndarray, kind: str, levels, seed: int = 0) -> list[np.ndarray]:
    """One corrupted image per severity level, all sharing one base seed.

    A level may be a params dict or, for kinds with a single natural
    severity axis, a bare scalar.
    """
    out = []
    for level in levels:
        if isinstance(level, Mapping):
            params = dict(level)
        elif kind in PRIMARY_PARAM:
            params = {PRIMARY_PARAM[kind]: level}
            # Fill secondary params at their range midpoint.
            for name, bound in PARAM_RANGES[kind].items():
                if name in params or bound is None:
                    continue
                if isinstance(bound, set):
                    params[name] = sorted(bound)[len(bound) // 2]
                elif name in _INT_PARAMS:
                    params[name] = int((bound[0] + bound[1]) // 2)
                else:
                    params[name] = (bound[0] + bound[1]) / 2.0
        else:
            params = {}
        out.append(apply(img, DegradationSpec(kind=kind, params=params, seed=seed)))
    return out


_POOL_CACHE: dict[tuple[int, int], list[np.ndarray]] = {}


def builtin_reference_pool(size: tuple[int, int] = (64, 64)) -> list[np.ndarray]:
    """Three small procedural stand-ins for external reference datasets.

    Distinct tonal profiles: dark low-contrast, mid-tone urban-like
    gradients, bright saturated blobs.
    """
    if size in _POOL_CACHE:
        return _POOL_CACHE[size]
    h, w = size
    rng = np.random.default_rng(1234)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)

    night = np.stack(
        [
            20 + 30 * (yy / h) + rng.normal(0, 6, (h, w)),
            22 + 28 * (yy / h) + rng.normal(0, 6, (h, w)),
            30 + 40 * (yy / h) + rng.normal(0, 6, (h, w)),
        ],
        axis=-1,
    )
    urban = np.stack(
        [
            90 + 60 * np.sin(xx / 9.0) + rng.normal(0, 10, (h, w)),
            95 + 55 * np.sin(yy / 7.0) + rng.normal(0, 10, (h, w)),
            100 + 50 * np.sin((xx + yy) / 11.0) + rng.normal(0, 10, (h, w)),
        ],
        axis=-1,
    )
    blobs = np.full((h, w, 3), 140.0)
    for _ in range(12):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        rad2 = rng.uniform(4, 12) ** 2
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad2
        blobs[mask] = rng.uniform(60, 250, 3)
    pool = [np.clip(arr, 0, 255).astype(np.uint8) for arr in (night, urban, blobs)]
    _POOL_CACHE[size] = pool
    return pool
