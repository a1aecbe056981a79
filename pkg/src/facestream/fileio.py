"""On-disk formats: motion files, audio-feature files, checkpoints, manifests.

All payloads are little-endian. Writers are deterministic (sorted tensor
names, no timestamps) so identical state produces identical bytes.

Motion file ("SGMO"):   magic, version u32, T u32, V u32, frame_rate f32,
                        then T*V*3 float32 values.
Feature file ("SGAF"):  magic, T_a u32, C_a u32, rate f32, then T_a*C_a float32.
Checkpoint ("SGCK"):    magic, version u32, manifest (length-prefixed UTF-8
                        key = value text), tensor count u32, then per tensor:
                        name, dtype code, shape, raw payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MOTION_MAGIC = b"SGMO"
FEATURE_MAGIC = b"SGAF"
CHECKPOINT_MAGIC = b"SGCK"
FORMAT_VERSION = 1

_DTYPE_CODES = {"<f8": 0, "<f4": 1, "<i8": 2}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


class DataError(Exception):
    """Malformed or mismatched on-disk data."""


def write_motion(path, offsets: np.ndarray, frame_rate: float) -> None:
    offsets = np.asarray(offsets)
    if offsets.ndim != 3 or offsets.shape[2] != 3:
        raise DataError("motion payload must have shape (T, V, 3)")
    t, v, _ = offsets.shape
    with open(path, "wb") as f:
        f.write(MOTION_MAGIC)
        f.write(struct.pack("<IIIf", FORMAT_VERSION, t, v, float(frame_rate)))
        f.write(np.ascontiguousarray(offsets, dtype="<f4").tobytes())


def read_motion(path) -> tuple[np.ndarray, float]:
    """Returns (offsets (T, V, 3) float64, frame_rate)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MOTION_MAGIC:
        raise DataError(f"{path}: not a motion file")
    version, t, v, rate = struct.unpack_from("<IIIf", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported motion format version {version}")
    if len(raw) < 20 + 4 * t * v * 3:
        raise DataError(f"{path}: truncated motion payload")
    payload = np.frombuffer(raw, dtype="<f4", count=t * v * 3, offset=20)
    return payload.reshape(t, v, 3).astype(np.float64), float(rate)


def write_features(path, features: np.ndarray, rate: float) -> None:
    features = np.asarray(features)
    if features.ndim != 2:
        raise DataError("feature payload must have shape (T_a, C_a)")
    t, c = features.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<IIf", t, c, float(rate)))
        f.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def read_features(path) -> tuple[np.ndarray, float]:
    """Returns (features (T_a, C_a) float64, rate)."""
    raw = Path(path).read_bytes()
    if raw[:4] != FEATURE_MAGIC:
        raise DataError(f"{path}: not a feature file")
    t, c, rate = struct.unpack_from("<IIf", raw, 4)
    if len(raw) < 16 + 4 * t * c:
        raise DataError(f"{path}: truncated feature payload")
    payload = np.frombuffer(raw, dtype="<f4", count=t * c, offset=16)
    return payload.reshape(t, c).astype(np.float64), float(rate)


def _manifest_text(manifest: dict) -> str:
    lines = [f"{key} = {manifest[key]}" for key in sorted(manifest)]
    return "\n".join(lines) + "\n"


def parse_manifest(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"bad manifest line: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_checkpoint(path, tensors: dict[str, np.ndarray], manifest: dict) -> None:
    """Archive of named tensors plus a plain-text hyperparameter manifest."""
    text = _manifest_text(manifest).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(text)))
        f.write(text)
        f.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name])
            dtype = arr.dtype.newbyteorder("<").str
            if dtype not in _DTYPE_CODES:
                raise DataError(f"unsupported checkpoint dtype {arr.dtype} for '{name}'")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<BB", _DTYPE_CODES[dtype], arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<I", extent))
            f.write(arr.astype(dtype, copy=False).tobytes())


def read_checkpoint(path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    (manifest_len,) = struct.unpack_from("<Q", raw, 8)
    cursor = 16
    manifest = parse_manifest(raw[cursor:cursor + manifest_len].decode("utf-8"))
    cursor += manifest_len
    (count,) = struct.unpack_from("<I", raw, cursor)
    cursor += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, cursor)
        cursor += 2
        name = raw[cursor:cursor + name_len].decode("utf-8")
        cursor += name_len
        code, ndim = struct.unpack_from("<BB", raw, cursor)
        cursor += 2
        shape = struct.unpack_from(f"<{ndim}I", raw, cursor) if ndim else ()
        cursor += 4 * ndim
        dtype = np.dtype(_CODE_DTYPES[code])
        n_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        arr = np.frombuffer(raw, dtype=dtype, count=n_items, offset=cursor)
        cursor += n_items * dtype.itemsize
        tensors[name] = arr.reshape(shape).copy()
    return tensors, manifest


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Deterministic CSV writer: floats via repr, no trailing whitespace."""
    def fmt(cell):
        if isinstance(cell, float):
            return repr(cell)
        return str(cell)

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(c) for c in row) + "\n")
