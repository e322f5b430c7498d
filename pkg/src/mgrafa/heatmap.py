"""Attention heatmaps: extraction, PGM export and region statistics."""

from __future__ import annotations

import os

import numpy as np

from . import tensor as tt
from .data import OCCLUDER, PERSON, Dataset, sample_indices
from .errors import FormatError
from .tensor import Tensor


def tracklet_clip(dataset: Dataset, tracklet_id: int, T: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Frames and masks at the indices evaluation would sample for this tracklet."""
    frames = dataset.frames(tracklet_id)
    idx = sample_indices(len(frames), T, np.random.default_rng([seed, tracklet_id]))
    return frames[idx], dataset.mask(tracklet_id)[idx]


def attention_maps(model, frames: np.ndarray) -> list[np.ndarray]:
    """Channel-mean normalized attention per granularity, each ``[T, h_m, w_m]``.

    Every returned map sums to 1 over all of its frames and positions.
    """
    model.eval()
    with tt.no_grad():
        _, pyramid = model(Tensor(frames[None]))
    maps = []
    for fset, scores in zip(pyramid.node_sets, pyramid.scores):
        a = scores.normalized.data[0].astype(np.float64).mean(axis=-1)
        maps.append(a.reshape(fset.T, fset.H, fset.W))
    return maps


def upsample_nearest(a: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour upsampling of the last two axes by integer factors."""
    h, w = a.shape[-2:]
    if height % h or width % w:
        raise ValueError(f"cannot upsample {h}x{w} to {height}x{width} by integer factors")
    return np.repeat(np.repeat(a, height // h, axis=-2), width // w, axis=-1)


def to_gray(a: np.ndarray, peak: float) -> np.ndarray:
    """Scale so that ``peak`` maps to 255; ``a`` is non-negative."""
    if peak <= 0:
        return np.zeros(a.shape, dtype=np.uint8)
    return np.clip(np.rint(a / peak * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError(f"write_pgm: expected a 2-D uint8 image, got {image.dtype} {image.shape}")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image).tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5" or parts[3] != b"255":
        raise FormatError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    pixels = np.frombuffer(parts[4], dtype=np.uint8)
    if pixels.size != w * h:
        raise FormatError(f"{path}: payload has {pixels.size} bytes, expected {w * h}")
    return pixels.reshape(h, w)


def export_heatmaps(maps: list[np.ndarray], out_dir, height: int, width: int) -> list[str]:
    """One PGM per (frame, granularity), named ``attn_t{t}_g{m}.pgm``.

    All frames of a granularity share one scale: its largest value maps to 255.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for m, a in enumerate(maps):
        big = upsample_nearest(a, height, width)
        peak = float(a.max())
        for t in range(a.shape[0]):
            path = os.path.join(out_dir, f"attn_t{t}_g{m}.pgm")
            write_pgm(path, to_gray(big[t], peak))
            paths.append(path)
    return paths


def node_labels(mask: np.ndarray, H: int, W: int) -> np.ndarray:
    """Majority pixel label of every node cell; ``mask`` is ``[T, h0, w0]``."""
    T, h0, w0 = mask.shape
    cells = mask.reshape(T, H, h0 // H, W, w0 // W).transpose(0, 1, 3, 2, 4).reshape(T, H, W, -1)
    counts = np.stack([(cells == k).sum(-1) for k in range(3)], axis=-1)
    return counts.argmax(-1)


def region_masses(a: np.ndarray, mask: np.ndarray) -> tuple[float, float] | None:
    """Mean attention per node on occluder cells and on person cells.

    ``a`` is a finest-granularity map ``[T, H, W]``.  Returns ``None`` when
    either region is empty.
    """
    labels = node_labels(mask, a.shape[1], a.shape[2])
    occ, person = labels == OCCLUDER, labels == PERSON
    if not occ.any() or not person.any():
        return None
    return float(a[occ].mean()), float(a[person].mean())


__all__ = [
    "attention_maps",
    "export_heatmaps",
    "node_labels",
    "read_pgm",
    "region_masses",
    "to_gray",
    "tracklet_clip",
    "upsample_nearest",
    "write_pgm",
]
