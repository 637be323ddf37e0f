"""File formats shared across the toolkit.

* "RFT1" tensors: self-describing binary container (magic, dtype code, rank,
  dims, row-major little-endian payload), one tensor per file.
* Point clouds: headerless little-endian float32 records (x, y, z, intensity).
* Panoptic labels: one uint32 per point, semantic class in the low 16 bits,
  instance id in the high 16 bits.
* Images: PPM (P6) as the lossless interchange; PNG when Pillow is present.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RFT1"

_DTYPE_CODES = {
    np.dtype("float32"): 0,
    np.dtype("float64"): 1,
    np.dtype("int32"): 2,
    np.dtype("int64"): 3,
    np.dtype("uint8"): 4,
    np.dtype("uint32"): 5,
    np.dtype("bool"): 6,
}
_CODE_DTYPES = {code: dt for dt, code in _DTYPE_CODES.items()}


def write_tensor(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    shape = array.shape  # ascontiguousarray promotes 0-d to 1-d; keep rank
    array = np.ascontiguousarray(array)
    if array.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {array.dtype}")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BB", _DTYPE_CODES[array.dtype], len(shape)))
        f.write(struct.pack(f"<{len(shape)}Q", *shape))
        f.write(array.astype(array.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValueError(f"{path}: not an RFT1 tensor (magic {magic!r})")
        code, rank = struct.unpack("<BB", f.read(2))
        if code not in _CODE_DTYPES:
            raise ValueError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack(f"<{rank}Q", f.read(8 * rank))
        dtype = _CODE_DTYPES[code].newbyteorder("<")
        data = f.read()
    expected = int(np.prod(dims)) * dtype.itemsize if rank else dtype.itemsize
    if len(data) != expected:
        raise ValueError(f"{path}: payload size {len(data)} != expected {expected}")
    return np.frombuffer(data, dtype=dtype).reshape(dims).astype(_CODE_DTYPES[code])


def write_tensor_dir(directory, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """A directory of name.rft files plus a manifest.json index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"tensors": {}, "meta": meta or {}}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name])
        write_tensor(directory / f"{name}.rft", arr)
        manifest["tensors"][name] = {
            "file": f"{name}.rft",
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
        }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def read_tensor_dir(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    with open(directory / "manifest.json") as f:
        manifest = json.load(f)
    tensors = {
        name: read_tensor(directory / entry["file"])
        for name, entry in manifest["tensors"].items()
    }
    return tensors, manifest.get("meta", {})


def write_point_cloud(path, points: np.ndarray) -> None:
    """Headerless float32 LE records of (x, y, z, intensity)."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 4:
        raise ValueError(f"expected (N, 4) points, got {points.shape}")
    points.astype("<f4").tofile(path)


def read_point_cloud(path) -> np.ndarray:
    raw = np.fromfile(path, dtype="<f4")
    if raw.size % 4 != 0:
        raise ValueError(f"{path}: size not a multiple of 4 floats")
    return raw.reshape(-1, 4).astype(np.float64)


def pack_labels(semantics: np.ndarray, instances: np.ndarray) -> np.ndarray:
    semantics = np.asarray(semantics, dtype=np.uint32)
    instances = np.asarray(instances, dtype=np.uint32)
    if np.any(semantics > 0xFFFF) or np.any(instances > 0xFFFF):
        raise ValueError("class and instance ids must fit in 16 bits")
    return (instances << np.uint32(16)) | semantics


def unpack_labels(packed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    packed = np.asarray(packed, dtype=np.uint32)
    return (packed & np.uint32(0xFFFF)).astype(np.int64), (packed >> np.uint32(16)).astype(np.int64)


def write_labels(path, semantics: np.ndarray, instances: np.ndarray) -> None:
    pack_labels(semantics, instances).astype("<u4").tofile(path)


def read_labels(path) -> tuple[np.ndarray, np.ndarray]:
    return unpack_labels(np.fromfile(path, dtype="<u4"))


def write_ppm(path, image: np.ndarray) -> None:
    """P6 binary PPM, 8-bit RGB."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {image.shape}")
    if image.dtype != np.uint8:
        image = np.clip(np.round(image), 0, 255).astype(np.uint8)
    h, w = image.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if fields[0] != b"P6":
        raise ValueError(f"{path}: not a P6 PPM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos)
    return pixels.reshape(h, w, 3).copy()


def write_image(path, image: np.ndarray) -> None:
    """PPM or, if the suffix asks for .png, PNG via Pillow."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise RuntimeError("PNG output needs Pillow (pip install rangefuse[png])") from exc
        if image.dtype != np.uint8:
            image = np.clip(np.round(image), 0, 255).astype(np.uint8)
        Image.fromarray(image, mode="RGB").save(path)
    else:
        write_ppm(path, image)


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise RuntimeError("PNG input needs Pillow (pip install rangefuse[png])") from exc
        return np.asarray(Image.open(path).convert("RGB"))
    return read_ppm(path)


def write_boxes_jsonl(path, boxes) -> None:
    with open(path, "w") as f:
        for box in boxes:
            record = {
                "center": [float(c) for c in box.center],
                "size": [float(s) for s in box.size],
                "yaw": float(box.yaw),
                "class_id": int(box.class_id),
                "track_id": int(box.track_id),
            }
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")


def read_boxes_jsonl(path):
    from .boxlabels import Box3D

    boxes = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            boxes.append(
                Box3D(
                    center=tuple(rec["center"]),
                    size=tuple(rec["size"]),
                    yaw=rec["yaw"],
                    class_id=rec["class_id"],
                    track_id=rec["track_id"],
                )
            )
    return boxes
