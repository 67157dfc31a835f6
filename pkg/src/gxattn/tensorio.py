"""Binary tensor files, weight manifests, and key/value config files.

Single-tensor files use the "CST1" layout: an 8-byte magic ``CSCATNSR``,
a little-endian u32 rank, that many little-endian u32 extents, one u8 dtype
tag (0 = 32-bit float, 1 = 64-bit float), then the row-major payload in
little-endian order. All file exchange in this repo (datasets, checkpoints,
saved blocks) goes through this format.

A weight collection is a directory of CST1 files plus a plain-text manifest;
each manifest line is ``name  CxHxW  file`` (whitespace separated, ``#``
comments allowed). Config files are ``key=value`` lines with the same
comment rule.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FileFormatError

MAGIC = b"CSCATNSR"

_TAG_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_DTYPE_FOR_TAG = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def save_tensor(path, array: np.ndarray) -> None:
    """Write one float32/float64 array to ``path`` in CST1 layout."""
    arr = np.asarray(array)
    if arr.dtype not in _TAG_FOR_DTYPE:
        raise FileFormatError(f"cannot serialize dtype {arr.dtype}; use float32 or float64")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(struct.pack("<B", _TAG_FOR_DTYPE[arr.dtype]))
        fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_tensor(path) -> np.ndarray:
    """Read a CST1 file back into a native-order contiguous array."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise FileFormatError(f"{path}: truncated before the rank field")
    if raw[: len(MAGIC)] != MAGIC:
        raise FileFormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}")
    offset = len(MAGIC)
    (rank,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if len(raw) < offset + 4 * rank + 1:
        raise FileFormatError(f"{path}: truncated header for rank {rank}")
    shape = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    (tag,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if tag not in _DTYPE_FOR_TAG:
        raise FileFormatError(f"{path}: unknown dtype tag {tag}")
    dtype = _DTYPE_FOR_TAG[tag]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise FileFormatError(f"{path}: payload is {len(raw) - offset} bytes, expected {expected - offset}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.astype(dtype.newbyteorder("=")).reshape(shape)


@dataclass
class ManifestEntry:
    name: str
    shape: tuple[int, ...]
    file: str


def _format_shape(shape: tuple[int, ...]) -> str:
    return "x".join(str(s) for s in shape) if shape else "scalar"


def _parse_shape(text: str) -> tuple[int, ...]:
    if text == "scalar":
        return ()
    try:
        return tuple(int(part) for part in text.split("x"))
    except ValueError as exc:
        raise FileFormatError(f"bad shape field {text!r} in manifest") from exc


def save_weights(directory, named: dict[str, np.ndarray],
                 manifest_name: str = "manifest.txt") -> None:
    """Write each array as ``<name>.cst1`` under ``directory`` plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for name, arr in named.items():
        if any(ch.isspace() or ch == "/" for ch in name) or not name:
            raise FileFormatError(f"weight name {name!r} cannot be used as a file stem")
        fname = f"{name}.cst1"
        save_tensor(directory / fname, arr)
        lines.append(f"{name} {_format_shape(np.asarray(arr).shape)} {fname}")
    (directory / manifest_name).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_weights(directory, manifest_name: str = "manifest.txt") -> dict[str, np.ndarray]:
    """Read a manifest directory back; shapes are validated against the manifest."""
    directory = Path(directory)
    manifest = directory / manifest_name
    if not manifest.exists():
        raise FileFormatError(f"{manifest}: manifest not found")
    out: dict[str, np.ndarray] = {}
    for lineno, raw_line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FileFormatError(f"{manifest}:{lineno}: expected 'name shape file', got {raw_line!r}")
        name, shape_text, fname = parts
        arr = load_tensor(directory / fname)
        declared = _parse_shape(shape_text)
        if arr.shape != declared:
            raise FileFormatError(
                f"{manifest}:{lineno}: {fname} holds shape {arr.shape}, manifest says {declared}"
            )
        out[name] = arr
    return out


def write_config(path, values: dict[str, object]) -> None:
    """Persist a flat mapping as ``key=value`` lines."""
    lines = []
    for key, value in values.items():
        key = str(key)
        if "=" in key or "#" in key or not key.strip():
            raise FileFormatError(f"config key {key!r} is not representable")
        lines.append(f"{key}={value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_config(path) -> dict[str, str]:
    """Parse ``key=value`` lines; ``#`` starts a comment, blank lines skipped."""
    out: dict[str, str] = {}
    for lineno, raw_line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"{path}:{lineno}: expected key=value, got {raw_line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
