"""Synthetic video re-identification benchmark and batch sampling.

Each identity is a fixed signature (head/torso/leg/shoe colors and a body
width) rendered over cluttered backgrounds.  Cameras apply a global color
affine transform; frames may carry a gray occluder or a horizontal blur.

On disk a dataset directory holds::

    manifest.txt          tracklet_id identity camera length occluded blurred
    dataset.txt           the generating DatasetSpec as key=value lines
    frames/NNNN.vft       [L, h0, w0, 3] float32 pixels in [0, 1]
    masks/NNNN.vft        [L, h0, w0] labels: 0 background, 1 person, 2 occluder
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError, SamplingError
from .vft import read_vft, write_vft

PALETTE = np.array(
    [
        [0.85, 0.15, 0.15],
        [0.15, 0.65, 0.20],
        [0.15, 0.25, 0.85],
        [0.90, 0.85, 0.15],
        [0.80, 0.40, 0.85],
        [0.10, 0.75, 0.80],
        [0.95, 0.55, 0.10],
        [0.95, 0.95, 0.95],
        [0.08, 0.08, 0.08],
        [0.50, 0.30, 0.10],
    ]
)

BACKGROUND, PERSON, OCCLUDER = 0, 1, 2


@dataclass
class DatasetSpec:
    num_ids: int = 32
    tracklets_per_id_cam: int = 2
    cameras: int = 2
    min_length: int = 16
    max_length: int = 24
    p_occ: float = 0.3
    p_blur: float = 0.1
    color_shift: float = 0.25
    clutter: int = 4
    noise: float = 0.03
    height: int = 64
    width: int = 32
    seed: int = 0

    def to_lines(self) -> list[str]:
        return [f"{k}={v}\n" for k, v in dataclasses.asdict(self).items()]

    @classmethod
    def from_lines(cls, lines) -> "DatasetSpec":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kw = {}
        for line in lines:
            line = line.strip()
            if not line:
                continue
            k, _, v = line.partition("=")
            if k not in types:
                raise FormatError(f"dataset spec: unknown key {k!r}")
            kw[k] = float(v) if types[k] in (float, "float") else int(v)
        return cls(**kw)


@dataclass
class Identity:
    head: np.ndarray
    torso: np.ndarray
    legs: np.ndarray
    shoes: np.ndarray
    body_width: int


@dataclass
class TrackletRecord:
    tracklet_id: int
    identity: int
    camera: int
    length: int
    occluded: list[int] = field(default_factory=list)
    blurred: list[int] = field(default_factory=list)

    def to_line(self) -> str:
        occ = ",".join(map(str, self.occluded)) or "-"
        blur = ",".join(map(str, self.blurred)) or "-"
        return f"{self.tracklet_id} {self.identity} {self.camera} {self.length} {occ} {blur}\n"

    @classmethod
    def from_line(cls, line: str) -> "TrackletRecord":
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"manifest line needs 6 fields, got {len(parts)}: {line!r}")

        def ints(field_text):
            return [] if field_text == "-" else [int(v) for v in field_text.split(",")]

        return cls(int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), ints(parts[4]), ints(parts[5]))


def make_identities(spec: DatasetSpec, rng: np.random.Generator) -> list[Identity]:
    seen = set()
    out = []
    n = len(PALETTE)
    while len(out) < spec.num_ids:
        key = (int(rng.integers(n)), int(rng.integers(n)), int(rng.integers(n)), int(rng.integers(n)), int(rng.integers(3)))
        if key in seen or key[1] == key[2]:
            continue
        seen.add(key)
        width = spec.width * (8 + 2 * key[4]) // 32
        out.append(Identity(PALETTE[key[0]], PALETTE[key[1]], PALETTE[key[2]], PALETTE[key[3]], width))
    return out


def camera_transforms(spec: DatasetSpec, rng: np.random.Generator) -> list[tuple[np.ndarray, np.ndarray]]:
    out = []
    for cam in range(spec.cameras):
        if cam == 0:
            out.append((np.ones(3), np.zeros(3)))
            continue
        gain = 1.0 + spec.color_shift * rng.uniform(-1, 1, size=3)
        bias = 0.5 * spec.color_shift * rng.uniform(-1, 1, size=3)
        out.append((gain, bias))
    return out


def _background(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    base = rng.uniform(0.2, 0.6, size=3)
    img = np.broadcast_to(base, (h, w, 3)).copy()
    for _ in range(spec.clutter):
        bh, bw = int(rng.integers(h // 8, h // 3)), int(rng.integers(w // 6, w // 2))
        y, x = int(rng.integers(0, h - bh)), int(rng.integers(0, w - bw))
        img[y:y + bh, x:x + bw] = PALETTE[rng.integers(len(PALETTE))] * rng.uniform(0.6, 1.0)
    return img


def render_frame(
    ident: Identity,
    background: np.ndarray,
    center_x: int,
    top: int,
    height: int,
    rng: np.random.Generator,
    occlude: bool,
    blur: bool,
    spec: DatasetSpec,
) -> tuple[np.ndarray, np.ndarray]:
    img = background.copy()
    mask = np.zeros(img.shape[:2], dtype=np.int8)
    half = ident.body_width // 2
    x0, x1 = max(center_x - half, 0), min(center_x + half, spec.width)
    bounds = np.cumsum([0, height // 6, (2 * height) // 5])
    head_w = max(ident.body_width // 2, 2)
    hx0, hx1 = center_x - head_w // 2, center_x + head_w // 2
    img[top:top + bounds[1], hx0:hx1] = ident.head
    mask[top:top + bounds[1], hx0:hx1] = PERSON
    legs_top = top + bounds[2]
    shoe_top = top + height - max(height // 12, 2)
    img[top + bounds[1]:legs_top, x0:x1] = ident.torso
    img[legs_top:shoe_top, x0 + 1:x1 - 1] = ident.legs
    img[shoe_top:top + height, x0 + 1:x1 - 1] = ident.shoes
    mask[top + bounds[1]:legs_top, x0:x1] = PERSON
    mask[legs_top:top + height, x0 + 1:x1 - 1] = PERSON
    if occlude:
        frac = rng.uniform(0.3, 0.6)
        oh = max(int(round(frac * height)), 1)
        oy = top + int(rng.integers(0, height - oh + 1))
        ox0, ox1 = max(x0 - 2, 0), min(x1 + 2, spec.width)
        img[oy:oy + oh, ox0:ox1] = rng.uniform(0.4, 0.6)
        mask[oy:oy + oh, ox0:ox1] = OCCLUDER
    if blur:
        k = 5
        padded = np.pad(img, ((0, 0), (k // 2, k // 2), (0, 0)), mode="edge")
        img = sum(padded[:, i:i + spec.width] for i in range(k)) / k
    return img, mask


def _render_tracklet(spec, ident, cam_tf, rng):
    length = int(rng.integers(spec.min_length, spec.max_length + 1))
    background = _background(spec, rng)
    height = int(round(spec.height * rng.uniform(0.75, 0.9)))
    base_top = int(rng.integers(0, spec.height - height + 1))
    base_x = spec.width // 2 + int(rng.integers(-2, 3))
    frames = np.empty((length, spec.height, spec.width, 3), dtype=np.float32)
    masks = np.empty((length, spec.height, spec.width), dtype=np.float32)
    occluded, blurred = [], []
    gain, bias = cam_tf
    for t in range(length):
        occ = rng.random() < spec.p_occ
        blur = rng.random() < spec.p_blur
        top = int(np.clip(base_top + rng.integers(-2, 3), 0, spec.height - height))
        cx = int(np.clip(base_x + rng.integers(-2, 3), ident.body_width // 2, spec.width - ident.body_width // 2))
        img, mask = render_frame(ident, background, cx, top, height, rng, occ, blur, spec)
        img = img * gain + bias + rng.normal(0, spec.noise, size=img.shape)
        frames[t] = np.clip(img, 0, 1)
        masks[t] = mask
        if occ:
            occluded.append(t)
        if blur:
            blurred.append(t)
    return frames, masks, occluded, blurred


def generate_dataset(spec: DatasetSpec, out_dir) -> list[TrackletRecord]:
    """Render every tracklet and write the dataset directory."""
    rng = np.random.default_rng(spec.seed)
    idents = make_identities(spec, rng)
    cams = camera_transforms(spec, rng)
    os.makedirs(os.path.join(out_dir, "frames"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
    records = []
    tid = 0
    for pid, ident in enumerate(idents):
        for cam in range(spec.cameras):
            for _ in range(spec.tracklets_per_id_cam):
                frames, masks, occ, blur = _render_tracklet(spec, ident, cams[cam], rng)
                write_vft(os.path.join(out_dir, "frames", f"{tid:04d}.vft"), frames)
                write_vft(os.path.join(out_dir, "masks", f"{tid:04d}.vft"), masks)
                records.append(TrackletRecord(tid, pid, cam, len(frames), occ, blur))
                tid += 1
    with open(os.path.join(out_dir, "manifest.txt"), "w") as fh:
        fh.writelines(r.to_line() for r in records)
    with open(os.path.join(out_dir, "dataset.txt"), "w") as fh:
        fh.writelines(spec.to_lines())
    return records


class Dataset:
    """Read-only view of a generated dataset directory (frames cached on load)."""

    def __init__(self, root):
        self.root = root
        path = os.path.join(root, "manifest.txt")
        if not os.path.exists(path):
            raise FormatError(f"{root}: missing manifest.txt")
        with open(path) as fh:
            self.records = [TrackletRecord.from_line(line) for line in fh if line.strip()]
        spec_path = os.path.join(root, "dataset.txt")
        self.spec = None
        if os.path.exists(spec_path):
            with open(spec_path) as fh:
                self.spec = DatasetSpec.from_lines(fh)
        self._frames: dict[int, np.ndarray] = {}
        self.by_id = {r.tracklet_id: r for r in self.records}

    def frames(self, tracklet_id: int) -> np.ndarray:
        if tracklet_id not in self._frames:
            arr = read_vft(os.path.join(self.root, "frames", f"{tracklet_id:04d}.vft"), ndim=4)
            self._frames[tracklet_id] = arr
        return self._frames[tracklet_id]

    def mask(self, tracklet_id: int) -> np.ndarray:
        return read_vft(os.path.join(self.root, "masks", f"{tracklet_id:04d}.vft"), ndim=3)

    def identities(self) -> list[int]:
        return sorted({r.identity for r in self.records})

    def split(self) -> tuple[list[TrackletRecord], list[TrackletRecord]]:
        """First half of the identities for training, the rest for testing."""
        ids = self.identities()
        train_ids = set(ids[: len(ids) // 2])
        train = [r for r in self.records if r.identity in train_ids]
        test = [r for r in self.records if r.identity not in train_ids]
        return train, test


# ------------------------------------------------------------------ sampling


def sample_indices(length: int, T: int, rng: np.random.Generator) -> np.ndarray:
    """One uniform pick from each of T equal chunks ``[floor(k L / T), floor((k+1) L / T))``."""
    if length < T:
        raise DataError(f"tracklet has {length} frames, need at least T={T}")
    starts = (np.arange(T) * length) // T
    stops = (np.arange(1, T + 1) * length) // T
    return np.array([int(rng.integers(a, b)) for a, b in zip(starts, stops)])


def sample_frames(frames: np.ndarray, T: int, rng: np.random.Generator) -> np.ndarray:
    return frames[sample_indices(len(frames), T, rng)]


def pk_epoch(records: list[TrackletRecord], P: int, Z: int, rng: np.random.Generator) -> list[list[TrackletRecord]]:
    """One pass over all identities in P x Z batches."""
    by_id: dict[int, list[TrackletRecord]] = {}
    for r in records:
        by_id.setdefault(r.identity, []).append(r)
    for pid in sorted(by_id):
        if len(by_id[pid]) < Z:
            raise SamplingError(f"identity {pid} has {len(by_id[pid])} tracklets, need Z={Z}")
    ids = sorted(by_id)
    if len(ids) < P:
        raise SamplingError(f"only {len(ids)} identities, need P={P}")
    order = [ids[i] for i in rng.permutation(len(ids))]
    if len(order) % P:
        tail = order[-(len(order) % P):]
        pool = [i for i in ids if i not in tail]
        extra = rng.choice(len(pool), size=P - len(tail), replace=False)
        order += [pool[i] for i in extra]
    batches = []
    for b in range(0, len(order), P):
        batch = []
        for pid in order[b:b + P]:
            items = by_id[pid]
            pick = rng.choice(len(items), size=Z, replace=False)
            batch.extend(items[i] for i in pick)
        batches.append(batch)
    return batches


def pk_batches(records: list[TrackletRecord], P: int, Z: int, rng: np.random.Generator):
    """Endless stream of P x Z batches, epoch after epoch."""
    while True:
        yield from pk_epoch(records, P, Z, rng)


# -------------------------------------------------------------- augmentation


@dataclass
class AugmentConfig:
    p_flip: float = 0.5
    p_erase: float = 0.5
    crop_pad: int = 4
    erase_area: tuple[float, float] = (0.02, 0.3)
    erase_aspect: tuple[float, float] = (0.3, 3.3)


@dataclass
class AugmentRecord:
    flipped: bool
    crop_offset: tuple[int, int]
    erase_box: tuple[int, int, int, int] | None  # y0, x0, y1, x1


def augment_sequence(frames: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig | None = None, return_record=False):
    """Flip, crop and erase decided once and applied to every frame of ``frames`` ``[T, h, w, 3]``."""
    cfg = cfg or AugmentConfig()
    out = np.array(frames, copy=True)
    _, h, w, _ = out.shape
    flipped = bool(rng.random() < cfg.p_flip)
    if flipped:
        out = out[:, :, ::-1, :]
    offset = (0, 0)
    pad = cfg.crop_pad
    if pad > 0:
        dy, dx = int(rng.integers(0, 2 * pad + 1)), int(rng.integers(0, 2 * pad + 1))
        offset = (dy - pad, dx - pad)
        if offset != (0, 0):
            padded = np.pad(out, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
            out = padded[:, dy:dy + h, dx:dx + w, :]
    box = None
    if rng.random() < cfg.p_erase:
        area = rng.uniform(*cfg.erase_area) * h * w
        aspect = np.exp(rng.uniform(np.log(cfg.erase_aspect[0]), np.log(cfg.erase_aspect[1])))
        eh = int(min(h, max(1, round(np.sqrt(area * aspect)))))
        ew = int(min(w, max(1, round(np.sqrt(area / aspect)))))
        y0, x0 = int(rng.integers(0, h - eh + 1)), int(rng.integers(0, w - ew + 1))
        fill = rng.uniform(0, 1, size=(eh, ew, out.shape[-1]))
        out = np.array(out, copy=True)
        out[:, y0:y0 + eh, x0:x0 + ew, :] = fill
        box = (y0, x0, y0 + eh, x0 + ew)
    out = np.ascontiguousarray(out, dtype=frames.dtype)
    if return_record:
        return out, AugmentRecord(flipped, offset, box)
    return out
