"""Temporal windows, density clustering and per-cluster feature sequences."""
from __future__ import annotations

import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

from . import kernels
from .core import Rng
from .io import Frame, GroundTruth

log = logging.getLogger(__name__)

N_FEATURES = 7
FEATURE_NAMES = ("vx", "vy", "vz", "count_frac", "mean_z", "bbox_diag", "range_100")


@dataclass
class TemporalWindow:
    frames: List[Frame]

    @property
    def t_end(self) -> float:
        return self.frames[-1].t

    @property
    def times(self) -> np.ndarray:
        return np.array([f.t for f in self.frames])


@dataclass
class Cluster:
    frame_idx: np.ndarray   # (n,) frame index of each member
    points: np.ndarray      # (n, 3)

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def presence(self, n_frames: int) -> np.ndarray:
        mask = np.zeros(n_frames, dtype=bool)
        mask[np.unique(self.frame_idx)] = True
        return mask

    def frame_points(self, f: int) -> np.ndarray:
        return self.points[self.frame_idx == f]


@dataclass
class ClusterTrackFeature:
    """Feature rows for one cluster in one window.

    ``anchor`` is the centroid of the cluster's latest present frame and
    ``t_anchor`` that frame's timestamp; detections are reported there.
    """

    seq: np.ndarray
    mask: np.ndarray
    t_end: float
    centroid: np.ndarray
    anchor: np.ndarray
    t_anchor: float
    anchor_points: np.ndarray
    n_points: int = 0


@dataclass
class LabeledWindowSample:
    feature: ClusterTrackFeature
    label: str                      # "uav" or "background"
    target_center: Optional[np.ndarray] = None

    @property
    def is_uav(self) -> bool:
        return self.label == "uav"


def build_windows(frames: Iterable[Frame], W: int = 20, stride: int = 5) -> Iterator[TemporalWindow]:
    """Sliding windows of ``W`` consecutive frames, advanced by ``stride``.

    Streams the input; only the frames of the current window are retained.
    """
    if W < 2:
        raise ValueError("window length must be at least 2")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    buf: deque = deque()
    base = 0            # stream index of buf[0]
    next_start = 0
    for fr in frames:
        buf.append(fr)
        while base < next_start and buf:
            buf.popleft()
            base += 1
        if base == next_start and len(buf) >= W:
            yield TemporalWindow(list(itertools.islice(buf, 0, W)))
            next_start += stride
    if base + len(buf) < W:
        log.warning("only %d frames, fewer than the window length %d", base + len(buf), W)


def _window_points(window: TemporalWindow):
    pts = [f.points for f in window.frames]
    idx = [np.full(len(p), i, dtype=np.int64) for i, p in enumerate(pts)]
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(pts, axis=0).reshape(-1, 3), np.concatenate(idx)


def cluster_points(points: np.ndarray, frame_idx: np.ndarray, eps: float = 1.0,
                   min_points: int = 4) -> List[Cluster]:
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_points < 1:
        raise ValueError("min_points must be at least 1")
    if len(points) == 0:
        return []
    # canonical point order makes border-point assignment independent of input order
    order = np.lexsort((frame_idx, points[:, 2], points[:, 1], points[:, 0]))
    pts = np.ascontiguousarray(points[order])
    fidx = frame_idx[order]
    labels = kernels.dbscan_labels(pts, float(eps), int(min_points))
    clusters = [Cluster(fidx[labels == k], pts[labels == k]) for k in range(labels.max() + 1)]
    clusters.sort(key=lambda c: tuple(c.centroid))
    return clusters


def cluster_window(window: TemporalWindow, eps: float = 1.0, min_points: int = 4) -> List[Cluster]:
    """DBSCAN over all points of the window; clusters sorted by centroid (x, y, z)."""
    pts, fidx = _window_points(window)
    return cluster_points(pts, fidx, eps, min_points)


def extract_features(cluster: Cluster, window: TemporalWindow) -> ClusterTrackFeature:
    W = len(window.frames)
    times = window.times
    seq = np.zeros((W, N_FEATURES))
    mask = cluster.presence(W)
    total = len(cluster.points)
    prev_c = prev_t = None
    last = None
    for f in np.flatnonzero(mask):
        p = cluster.frame_points(f)
        c = p.mean(axis=0)
        if prev_c is not None and times[f] > prev_t:
            v = (c - prev_c) / (times[f] - prev_t)
        else:
            v = np.zeros(3)
        diag = float(np.linalg.norm(p.max(axis=0) - p.min(axis=0)))
        seq[f] = [v[0], v[1], v[2], len(p) / total, c[2], diag, np.linalg.norm(c) / 100.0]
        prev_c, prev_t = c, times[f]
        last = (c, float(times[f]), p)
    if last is None:
        raise ValueError("cluster has no points")
    return ClusterTrackFeature(seq, mask, window.t_end, cluster.centroid, last[0], last[1], last[2],
                              total)


def _rotate_z(v: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    out = np.array(v, dtype=np.float64, copy=True)
    x, y = out[..., 0].copy(), out[..., 1].copy()
    out[..., 0] = c * x - s * y
    out[..., 1] = s * x + c * y
    return out


def reverse_features(seq: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Feature rows of the time-reversed window.

    In reversed time a frame's predecessor is its old successor, so its
    velocity becomes the negated velocity of that successor; the new first
    present frame has none.
    """
    out = seq.copy()
    present = np.flatnonzero(mask)
    vel = np.zeros((len(seq), 3))
    for a, b in zip(present[:-1], present[1:]):
        vel[a] = -seq[b, :3]
    out[:, :3] = vel
    out[~mask] = 0.0
    return out[::-1].copy()


def augment(sample: LabeledWindowSample, rng: Rng, p_drop: float = 0.1,
            p_reverse: float = 0.5, p_rotate: float = 1.0) -> LabeledWindowSample:
    """Frame dropout, temporal reversal and rotation about z.

    Each transform fires with its own probability. Dropout never removes the
    last present frame, so the sample stays non-empty.
    """
    ft = sample.feature
    seq = ft.seq.copy()
    mask = ft.mask.copy()
    anchor, anchor_pts = ft.anchor.copy(), ft.anchor_points.copy()
    target = None if sample.target_center is None else sample.target_center.copy()
    centroid = ft.centroid.copy()

    if p_drop > 0:
        present = np.flatnonzero(mask)
        drop = rng.random(len(mask)) < p_drop
        if drop[present].all():
            drop[present[-1]] = False
        mask &= ~drop
        seq[~mask] = 0.0
    if p_reverse > 0 and rng.random() < p_reverse:
        seq = reverse_features(seq, mask)
        mask = mask[::-1].copy()
    if p_rotate > 0 and rng.random() < p_rotate:
        ang = rng.uniform(0.0, 2 * math.pi)
        seq[:, :3] = _rotate_z(seq[:, :3], ang)
        seq[~mask] = 0.0
        anchor = _rotate_z(anchor, ang)
        anchor_pts = _rotate_z(anchor_pts, ang)
        centroid = _rotate_z(centroid, ang)
        if target is not None:
            target = _rotate_z(target, ang)
    new_ft = replace(ft, seq=seq, mask=mask, anchor=anchor, anchor_points=anchor_pts,
                     centroid=centroid)
    return LabeledWindowSample(new_ft, sample.label, target)


def label_clusters(features: Sequence[ClusterTrackFeature], gt: GroundTruth,
                   r_pos: float = 1.0, r_neg: float = 2.0) -> List[LabeledWindowSample]:
    """Nearest-neighbour labelling against ground truth at each anchor time.

    The nearest cluster within ``r_pos`` is ``uav``; clusters beyond
    ``r_neg`` are ``background``; everything else is dropped.
    """
    if not (r_neg >= r_pos > 0):
        raise ValueError("need r_neg >= r_pos > 0")
    dists = []
    for ft in features:
        try:
            g = gt.at(ft.t_anchor) if gt.uav_class is not None else None
        except ValueError:
            log.warning("anchor time %.3f outside ground truth; sample dropped", ft.t_anchor)
            dists.append(None)
            continue
        dists.append((math.inf if g is None else float(np.linalg.norm(ft.anchor - g)), g))
    best = None
    for i, d in enumerate(dists):
        if d is not None and d[0] <= r_pos and (best is None or d[0] < dists[best][0]):
            best = i
    out = []
    for i, (ft, d) in enumerate(zip(features, dists)):
        if d is None:
            continue
        if i == best:
            out.append(LabeledWindowSample(ft, "uav", d[1].copy()))
        elif d[0] > r_neg:
            out.append(LabeledWindowSample(ft, "background", None))
    return out


def window_features(frames: Iterable[Frame], W: int = 20, stride: int = 5, eps: float = 1.0,
                    min_points: int = 4):
    """Per window: ``(window.t_end, [ClusterTrackFeature, ...])``."""
    for win in build_windows(frames, W, stride):
        feats = [extract_features(c, win) for c in cluster_window(win, eps, min_points)]
        yield win.t_end, feats
