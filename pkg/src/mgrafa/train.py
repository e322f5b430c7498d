"""Mini-batch training with Adam on the combined ID + triplet objective."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import AugmentConfig, Dataset, TrackletRecord, augment_sequence, pk_batches, sample_frames
from .losses import LossConfig, total_loss
from .model import ReidModel
from .tensor import AdamConfig, AdamState, Tape, Tensor, backward, optimizer_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 300
    seed: int = 0
    lr_decay_at: float = 0.7  # fraction of steps after which lr is divided by 10
    adam: AdamConfig = field(default_factory=AdamConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass
class LossRow:
    step: int
    total: float
    id_global: float
    tri_global: float
    id_parts: float
    tri_parts: float


def make_batch(dataset: Dataset, batch: list[TrackletRecord], T: int, rng, aug: AugmentConfig) -> np.ndarray:
    clips = []
    for r in batch:
        clip = sample_frames(dataset.frames(r.tracklet_id), T, rng)
        clips.append(augment_sequence(clip, rng, aug))
    return np.stack(clips)


def train(model: ReidModel, dataset: Dataset, records: list[TrackletRecord], cfg: TrainConfig) -> list[LossRow]:
    ids = sorted({r.identity for r in records})
    label_of = {pid: i for i, pid in enumerate(ids)}
    rng = np.random.default_rng(cfg.seed)
    stream = pk_batches(records, cfg.loss.P, cfg.loss.Z, rng)
    params = model.named_parameters()
    state = AdamState()
    rows = []
    model.train()
    base_lr = cfg.adam.lr
    for step in range(cfg.steps):
        hyper = cfg.adam
        if step >= int(cfg.lr_decay_at * cfg.steps):
            hyper = AdamConfig(base_lr * 0.1, hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay)
        batch = next(stream)
        frames = make_batch(dataset, batch, model.cfg.T, rng, cfg.augment)
        labels = np.array([label_of[r.identity] for r in batch])
        with Tape() as tape:
            v, pyramid = model(Tensor(frames))
            terms = total_loss(v, pyramid.parts, model.heads, labels, cfg.loss)
        grads = backward(tape, terms.total)
        optimizer_step(params, {n: grads[p] for n, p in params.items() if p in grads}, state, hyper)
        row = LossRow(
            step,
            float(terms.total.data),
            terms.id_global,
            terms.tri_global,
            float(np.mean(terms.id_parts)) if terms.id_parts else 0.0,
            float(np.mean(terms.tri_parts)) if terms.tri_parts else 0.0,
        )
        rows.append(row)
        if step % 50 == 0:
            log.info("step %d loss %.4f", step, row.total)
    model.eval()
    return rows
