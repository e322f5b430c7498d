"""Cross-camera retrieval evaluation: embeddings, distances, CMC and mAP."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .data import Dataset, TrackletRecord, sample_frames
from .tensor import Tensor


def extract_embeddings(model, dataset: Dataset, records: list[TrackletRecord], T: int, seed: int = 0, batch: int = 16) -> np.ndarray:
    """One aggregated vector per tracklet; BN runs on its running statistics."""
    model.eval()
    clips = []
    for r in records:
        rng = np.random.default_rng([seed, r.tracklet_id])
        clips.append(sample_frames(dataset.frames(r.tracklet_id), T, rng))
    out = []
    with tt.no_grad():
        for i in range(0, len(clips), batch):
            v, _ = model(Tensor(np.stack(clips[i:i + batch])))
            out.append(v.data)
    return np.concatenate(out, axis=0) if out else np.zeros((0, 0), dtype=np.float32)


def distance_matrix(query: np.ndarray, gallery: np.ndarray) -> np.ndarray:
    q = query.astype(np.float64)
    g = gallery.astype(np.float64)
    d2 = (q * q).sum(1)[:, None] + (g * g).sum(1)[None, :] - 2 * q @ g.T
    return np.sqrt(np.maximum(d2, 0))


@dataclass
class RetrievalResult:
    cmc: np.ndarray  # cmc[k-1] = CMC@k
    mAP: float
    num_valid: int
    num_excluded: int

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def cmc_map(distmat, q_ids, q_cams, g_ids, g_cams) -> RetrievalResult:
    """CMC curve and mAP; gallery entries sharing both id and camera with
    the query are ignored, ties go to the lower gallery index."""
    distmat = np.asarray(distmat)
    q_ids, q_cams = np.asarray(q_ids), np.asarray(q_cams)
    g_ids, g_cams = np.asarray(g_ids), np.asarray(g_cams)
    num_q, num_g = distmat.shape
    cmc_sum = np.zeros(num_g)
    aps = []
    excluded = 0
    for qi in range(num_q):
        order = np.argsort(distmat[qi], kind="stable")
        keep = ~((g_ids[order] == q_ids[qi]) & (g_cams[order] == q_cams[qi]))
        hits = (g_ids[order] == q_ids[qi])[keep]
        if not hits.any():
            excluded += 1
            continue
        first = int(np.argmax(hits))
        cmc_sum[first:] += 1
        positions = np.flatnonzero(hits) + 1
        aps.append(float(np.mean(np.arange(1, len(positions) + 1) / positions)))
    valid = len(aps)
    cmc = cmc_sum / valid if valid else cmc_sum
    return RetrievalResult(cmc, float(np.mean(aps)) if aps else 0.0, valid, excluded)


def cross_camera_split(records: list[TrackletRecord], query_cam: int = 0, gallery_cam: int = 1):
    query = [r for r in records if r.camera == query_cam]
    gallery = [r for r in records if r.camera == gallery_cam]
    return query, gallery


def evaluate(model, dataset: Dataset, records: list[TrackletRecord], T: int, seed: int = 0) -> RetrievalResult:
    query, gallery = cross_camera_split(records)
    emb = extract_embeddings(model, dataset, query + gallery, T, seed)
    qf, gf = emb[: len(query)], emb[len(query):]
    return cmc_map(
        distance_matrix(qf, gf),
        [r.identity for r in query],
        [r.camera for r in query],
        [r.identity for r in gallery],
        [r.camera for r in gallery],
    )


def write_metrics_csv(path, result: RetrievalResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["mAP", f"{result.mAP:.6f}"])
        for k in (1, 5, 10, 20):
            w.writerow([f"CMC@{k}", f"{result.rank(k):.6f}"])
