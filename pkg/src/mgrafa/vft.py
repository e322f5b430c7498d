"""VFT tensor files and checkpoint directories.

Layout: ``b"VFT1"``, uint32 ndim, ndim uint32 extents, then the row-major
float32 payload; all little-endian.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"VFT1"
MANIFEST = "manifest.txt"


def write_vft(path, array) -> None:
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes(order="C"))


def read_vft(path, ndim: int | None = None) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise FormatError(f"{path}: header truncated")
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    (nd,) = struct.unpack_from("<I", blob, 4)
    if ndim is not None and nd != ndim:
        raise FormatError(f"{path}: ndim is {nd}, expected {ndim} dims")
    if len(blob) < 8 + 4 * nd:
        raise FormatError(f"{path}: extents truncated")
    shape = struct.unpack_from(f"<{nd}I", blob, 8)
    offset = 8 + 4 * nd
    count = int(np.prod(shape, dtype=np.int64))
    if len(blob) - offset != 4 * count:
        raise FormatError(f"{path}: payload has {len(blob) - offset} bytes, expected {4 * count}")
    return np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).astype(np.float32)


def save_checkpoint(directory, tensors: dict[str, np.ndarray]) -> None:
    """Write each named array as a VFT file plus a ``name file`` manifest."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for i, (name, arr) in enumerate(sorted(tensors.items())):
        fname = f"t{i:04d}.vft"
        write_vft(os.path.join(directory, fname), arr)
        lines.append(f"{name} {fname}\n")
    with open(os.path.join(directory, MANIFEST), "w") as fh:
        fh.writelines(lines)


def load_checkpoint(directory) -> dict[str, np.ndarray]:
    path = os.path.join(directory, MANIFEST)
    if not os.path.exists(path):
        raise FormatError(f"{directory}: no {MANIFEST}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise FormatError(f"{path}:{lineno}: expected 'name file'")
            out[parts[0]] = read_vft(os.path.join(directory, parts[1]))
    return out
