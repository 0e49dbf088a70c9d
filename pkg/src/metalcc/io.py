"""Raw little-endian arrays with JSON sidecars, and binary PGM export.

An array ``name`` is stored as ``name.raw`` (C-order payload, slowest axis
first) next to ``name.json``::

    {"dtype": "f32", "shape": [100, 96, 96], "spacing": 3.125,
     "endianness": "little", "semantic": "line_integral"}

Float data is always written as float32, so only float32 inputs round-trip
bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
SEMANTICS = ("attenuation", "line_integral", "soft_mask", "mask", "consistency", "visits")
_REQUIRED = {"dtype", "shape", "spacing", "endianness", "semantic"}
_OPTIONAL = {"geometry", "grid"}


class ArrayFormatError(ValueError):
    pass


def _paths(path) -> tuple[Path, Path]:
    path = Path(path)
    if path.suffix in (".raw", ".json"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".raw"), path.with_name(path.name + ".json")


def write_array(path, value, semantic: str, spacing: float | None = None,
                geometry: dict | None = None, grid: dict | None = None) -> Path:
    """Write ``value`` (array or stack/volume object) and its sidecar.

    Masks are stored as u8, everything else as f32. ``spacing`` defaults to
    the voxel size or pixel pitch of the wrapped object.
    """
    if semantic not in SEMANTICS:
        raise ArrayFormatError(f"unknown semantic tag {semantic!r}")
    if spacing is None:
        if hasattr(value, "grid"):
            spacing = value.grid.voxel_size
            grid = grid or value.grid.to_dict()
        elif hasattr(value, "geom"):
            spacing = value.geom.pixel_pitch
            geometry = geometry or value.geom.to_dict()
    arr = np.asarray(getattr(value, "data", getattr(value, "value", value)))
    tag = "u8" if semantic == "mask" else "f32"
    if tag == "u8" and arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ArrayFormatError("mask arrays must be binary")
    payload = np.ascontiguousarray(arr, dtype=DTYPES[tag])
    header = {"dtype": tag, "shape": list(payload.shape),
              "spacing": None if spacing is None else float(spacing),
              "endianness": "little", "semantic": semantic}
    if geometry is not None:
        header["geometry"] = geometry
    if grid is not None:
        header["grid"] = grid
    raw, side = _paths(path)
    raw.parent.mkdir(parents=True, exist_ok=True)
    raw.write_bytes(payload.tobytes(order="C"))
    side.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return raw


def read_header(path) -> dict:
    _, side = _paths(path)
    header = json.loads(side.read_text())
    missing = _REQUIRED - set(header)
    unknown = set(header) - _REQUIRED - _OPTIONAL
    if missing or unknown:
        raise ArrayFormatError(f"{side}: missing {sorted(missing)}, unknown {sorted(unknown)}")
    if header["dtype"] not in DTYPES:
        raise ArrayFormatError(f"{side}: unsupported dtype {header['dtype']!r}")
    if header["endianness"] != "little":
        raise ArrayFormatError(f"{side}: only little-endian payloads are supported")
    if header["semantic"] not in SEMANTICS:
        raise ArrayFormatError(f"{side}: unknown semantic tag {header['semantic']!r}")
    shape = header["shape"]
    if not isinstance(shape, list) or not all(isinstance(n, int) and n >= 0 for n in shape):
        raise ArrayFormatError(f"{side}: malformed shape {shape!r}")
    return header


def read_array(path, expected_shape=None, expected_semantic: str | None = None):
    """Return ``(array, header)``; the payload must match the header exactly."""
    raw, _ = _paths(path)
    header = read_header(path)
    dtype = DTYPES[header["dtype"]]
    shape = tuple(header["shape"])
    if expected_shape is not None and shape != tuple(expected_shape):
        raise ArrayFormatError(f"{raw}: shape {shape} != expected {tuple(expected_shape)}")
    if expected_semantic is not None and header["semantic"] != expected_semantic:
        raise ArrayFormatError(f"{raw}: semantic {header['semantic']!r} != {expected_semantic!r}")
    data = raw.read_bytes()
    want = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(data) < want:
        raise ArrayFormatError(f"{raw}: payload truncated at byte offset {len(data)}, expected {want} bytes")
    if len(data) > want:
        raise ArrayFormatError(f"{raw}: {len(data) - want} trailing bytes after byte offset {want}")
    return np.frombuffer(data, dtype=dtype).reshape(shape).copy(), header


def pgm_bytes(image) -> bytes:
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValueError("PGM export needs a non-empty 2D image")
    if not np.all(np.isfinite(img)):
        raise ValueError("PGM export needs finite values")
    lo, hi = img.min(), img.max()
    if hi > lo:
        scaled = np.floor((img - lo) / (hi - lo) * 255 + 0.5)
    else:
        scaled = np.zeros_like(img)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + scaled.astype(np.uint8).tobytes()


def export_pgm(image, path) -> Path:
    """Min-max scale to 0..255 and write an 8-bit binary PGM (constant -> 0)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pgm_bytes(image))
    return path
