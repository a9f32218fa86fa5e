"""Score-level UAV type classification from externally produced frame scores."""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .core import Rng
from .io import UAV_CLASSES, FrameRecord


@dataclass
class RealSequence:
    members: List[str]
    pooled: np.ndarray


def group_records(records: Sequence[FrameRecord]) -> "OrderedDict[str, List[FrameRecord]]":
    """Records per seq_id, keeping first-appearance order of the ids."""
    out: "OrderedDict[str, List[FrameRecord]]" = OrderedDict()
    for r in records:
        out.setdefault(r.seq_id, []).append(r)
    for recs in out.values():
        recs.sort(key=lambda r: r.frame)
    return out


def pool_embedding(records: Sequence[FrameRecord], sample_ratio: float = 0.01) -> np.ndarray:
    """Mean embedding of every ``round(1/sample_ratio)``-th frame, starting at the first."""
    if not records:
        raise ValueError("cannot pool an empty sequence")
    if not 0 < sample_ratio <= 1:
        raise ValueError("sample_ratio must lie in (0, 1]")
    stride = max(1, int(round(1.0 / sample_ratio)))
    picked = records[::stride]
    return np.mean([r.embedding for r in picked], axis=0)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine similarity of a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def fuse_sequences(seq_ids: Sequence[str], pooled: Sequence[np.ndarray], tau: float = 0.9,
                   adjacency_only: bool = True) -> List[RealSequence]:
    """Connected components of the ``cosine >= tau`` graph over recordings.

    With ``adjacency_only`` only recordings that are neighbours in
    recording order can be linked.
    """
    if not -1 < tau < 1:
        raise ValueError("tau must lie in (-1, 1)")
    n = len(seq_ids)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)

    pairs = ((i, i + 1) for i in range(n - 1)) if adjacency_only else \
        ((i, j) for i in range(n) for j in range(i + 1, n))
    for i, j in pairs:
        if cosine(pooled[i], pooled[j]) >= tau:
            union(i, j)
    comps: "OrderedDict[int, List[int]]" = OrderedDict()
    for i in range(n):
        comps.setdefault(find(i), []).append(i)
    return [RealSequence([seq_ids[i] for i in idx], np.mean([pooled[i] for i in idx], axis=0))
            for idx in comps.values()]


def select_keyframes(records: Sequence[FrameRecord], k: int = 5) -> List[FrameRecord]:
    """Top-``k`` records by detector confidence; ties go to the lower (seq_id, frame)."""
    if k < 1:
        raise ValueError("k must be at least 1")
    return sorted(records, key=lambda r: (-r.det_conf, r.seq_id, r.frame))[:k]


def soft_vote(keyframes: Sequence[FrameRecord]) -> Tuple[str, np.ndarray]:
    if not keyframes:
        raise ValueError("soft vote needs at least one keyframe")
    total = np.sum([r.softmax for r in keyframes], axis=0)
    return UAV_CLASSES[int(np.argmax(total))], total


def cap_training_samples(records: Sequence[FrameRecord], cap: int = 300, rng: Rng = None):
    """Uniform subsample without replacement down to ``cap`` records."""
    if cap < 1:
        raise ValueError("cap must be at least 1")
    if len(records) <= cap:
        return list(records)
    rng = rng or Rng(0)
    idx = np.sort(rng.choice(len(records), cap))
    return [records[i] for i in idx]


@dataclass
class ClassifyConfig:
    tau: float = 0.9
    k: int = 5
    sample_ratio: float = 0.01
    adjacency_only: bool = True


def classify(records: Sequence[FrameRecord], cfg: ClassifyConfig = ClassifyConfig()):
    """Fuse, pick keyframes, vote; every member recording gets its group's label.

    Returns a list of ``(seq_id, class, aggregated_scores)`` in recording order.
    """
    groups = group_records(records)
    ids = list(groups)
    pooled = [pool_embedding(groups[s], cfg.sample_ratio) for s in ids]
    out = {}
    for real in fuse_sequences(ids, pooled, cfg.tau, cfg.adjacency_only):
        recs = [r for sid in real.members for r in groups[sid]]
        label, scores = soft_vote(select_keyframes(recs, cfg.k))
        for sid in real.members:
            out[sid] = (sid, label, scores)
    return [out[s] for s in ids]


def frame_accuracy(records: Sequence[FrameRecord], labels: Dict[str, str]) -> float:
    hits = [UAV_CLASSES[int(np.argmax(r.softmax))] == labels[r.seq_id] for r in records]
    return float(np.mean(hits)) if hits else math.nan
