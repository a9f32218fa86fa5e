"""Constant-velocity Kalman multi-object tracker with gated global assignment."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import NumericError, NotSPDError, cholesky_solve
from .io import Detection

TENTATIVE, CONFIRMED, DEAD = "tentative", "confirmed", "dead"


@dataclass
class KfState:
    x: np.ndarray   # (6,) position then velocity
    P: np.ndarray   # (6, 6)
    t: float

    def copy(self) -> "KfState":
        return KfState(self.x.copy(), self.P.copy(), self.t)

    @property
    def position(self) -> np.ndarray:
        return self.x[:3]

    @property
    def pos_trace(self) -> float:
        return float(np.trace(self.P[:3, :3]))


@dataclass
class TrackerConfig:
    q: float = 1.0            # white-noise acceleration PSD
    r: float = 0.05           # measurement variance per axis
    gate: float = 11.34       # squared Mahalanobis gate (chi2, 3 dof, 0.99)
    cov_kill: float = 9.0     # trace of position covariance that ends a track
    n_confirm: int = 2
    init_pos_var_factor: float = 10.0
    init_vel_var: float = 25.0

    def __post_init__(self):
        for name in ("q", "r", "gate", "cov_kill", "init_pos_var_factor", "init_vel_var"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tracker parameter {name} must be positive")
        if self.n_confirm < 1:
            raise ValueError("n_confirm must be at least 1")


def transition(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    return F


def process_noise(dt: float, q: float) -> np.ndarray:
    Q = np.zeros((6, 6))
    I = np.eye(3)
    Q[:3, :3] = q * dt ** 3 / 3.0 * I
    Q[:3, 3:] = Q[3:, :3] = q * dt ** 2 / 2.0 * I
    Q[3:, 3:] = q * dt * I
    return Q


def kf_predict(state: KfState, t_next: float, q: float) -> KfState:
    dt = t_next - state.t
    if dt < 0:
        raise ValueError(f"cannot predict backwards in time (dt={dt})")
    F = transition(dt)
    P = F @ state.P @ F.T + process_noise(dt, q)
    return KfState(F @ state.x, 0.5 * (P + P.T), t_next)


def innovation(state: KfState, z, r: float):
    """Residual and its covariance for a position measurement."""
    y = np.asarray(z, dtype=np.float64) - state.x[:3]
    S = state.P[:3, :3] + r * np.eye(3)
    return y, S


def mahalanobis2(state: KfState, z, r: float) -> float:
    y, S = innovation(state, z, r)
    return float(y @ cholesky_solve(S, y)[:, 0])


def kf_update(state: KfState, z, r: float) -> KfState:
    """Position-measurement update in Joseph form."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (3,) or not np.all(np.isfinite(z)):
        raise ValueError("measurement must be a finite 3-vector")
    y, S = innovation(state, z, r)
    try:
        K = cholesky_solve(S, state.P[:3, :]).T      # (6, 3)
    except NotSPDError as exc:
        raise NumericError(f"innovation covariance not SPD: {exc}") from None
    x = state.x + K @ y
    IKH = np.eye(6)
    IKH[:, :3] -= K
    P = IKH @ state.P @ IKH.T + r * (K @ K.T)
    return KfState(x, 0.5 * (P + P.T), state.t)


def solve_assignment(cost, gate: float = np.inf) -> List[Tuple[int, int]]:
    """Minimum-total-cost matching over pairs with ``cost <= gate``.

    Pairs outside the gate are never matched; among matchings the solver
    prefers more pairs, then lower total cost.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.size == 0:
        return []
    allowed = C <= gate
    if not allowed.any():
        return []
    big = float(np.abs(C[allowed]).sum()) * 2.0 + 1.0
    rows, cols = linear_sum_assignment(np.where(allowed, C, big))
    return sorted((int(i), int(j)) for i, j in zip(rows, cols) if allowed[i, j])


@dataclass
class Track:
    id: int
    state: KfState
    status: str = TENTATIVE
    history: List[Tuple[float, np.ndarray]] = field(default_factory=list)
    hits: int = 1
    misses: int = 0
    _pending: List[Tuple[float, np.ndarray]] = field(default_factory=list, repr=False)


def associate(tracks: Sequence[Track], detections: Sequence[Detection], gate: float, r: float):
    """Gated global nearest neighbour on squared Mahalanobis distance.

    Returns ``(matches, unmatched_tracks, unmatched_detections)`` as index lists.
    """
    if not tracks or not detections:
        return [], list(range(len(tracks))), list(range(len(detections)))
    cost = np.array([[mahalanobis2(tr.state, d.center, r) for d in detections] for tr in tracks])
    matches = solve_assignment(cost, gate)
    mt = {i for i, _ in matches}
    md = {j for _, j in matches}
    return (matches, [i for i in range(len(tracks)) if i not in mt],
            [j for j in range(len(detections)) if j not in md])


class Tracker:
    """Stateful tracker for one sequence; feed detections one timestamp at a time."""

    def __init__(self, cfg: TrackerConfig = TrackerConfig()):
        self.cfg = cfg
        self.tracks: List[Track] = []
        self.t = None
        self._ids = itertools.count()

    @property
    def live(self) -> List[Track]:
        return [tr for tr in self.tracks if tr.status != DEAD]

    def _spawn(self, det: Detection) -> Track:
        c = self.cfg
        P = np.diag([c.r * c.init_pos_var_factor] * 3 + [c.init_vel_var] * 3)
        x = np.concatenate([det.center, np.zeros(3)])
        tr = Track(next(self._ids), KfState(x, P, det.t))
        tr._pending.append((det.t, det.center.copy()))
        if c.n_confirm <= 1:
            self._confirm(tr)
        self.tracks.append(tr)
        return tr

    @staticmethod
    def _confirm(tr: Track) -> None:
        tr.status = CONFIRMED
        tr.history.extend(tr._pending)
        tr._pending.clear()

    def step(self, t: float, detections: Sequence[Detection]) -> None:
        if self.t is not None and not t > self.t:
            raise ValueError(f"tracker step time {t} is not after {self.t}")
        self.t = t
        cfg = self.cfg
        live = self.live
        for tr in live:
            tr.state = kf_predict(tr.state, t, cfg.q)
        matches, lost, fresh = associate(live, detections, cfg.gate, cfg.r)
        for i, j in matches:
            tr = live[i]
            tr.state = kf_update(tr.state, detections[j].center, cfg.r)
            tr.hits += 1
            tr.misses = 0
            sample = (t, tr.state.position.copy())
            if tr.status == CONFIRMED:
                tr.history.append(sample)
            else:
                tr._pending.append(sample)
                if tr.hits >= cfg.n_confirm:
                    self._confirm(tr)
        for i in lost:
            live[i].misses += 1
        for tr in live:
            if tr.state.pos_trace > cfg.cov_kill:
                tr.status = DEAD
        for j in fresh:
            self._spawn(detections[j])

    def confirmed(self) -> List[Track]:
        return [tr for tr in self.tracks if tr.history]


def group_by_time(detections: Iterable[Detection]):
    """Yield ``(t, [detections])``; input must be time-sorted."""
    batch, cur = [], None
    for d in detections:
        if cur is not None and d.t < cur:
            raise ValueError(f"detections not time-sorted at t={d.t}")
        if cur is not None and d.t != cur:
            yield cur, batch
            batch = []
        cur = d.t
        batch.append(d)
    if batch:
        yield cur, batch


def run_tracker(detections: Iterable[Detection], cfg: TrackerConfig = TrackerConfig()) -> List[Track]:
    """Track a whole sequence; returns tracks that were ever confirmed."""
    tracker = Tracker(cfg)
    for t, batch in group_by_time(detections):
        tracker.step(t, batch)
    return tracker.confirmed()


def track_rows(tracks: Sequence[Track]):
    """Rows for tracks.csv, ordered by track id then time."""
    for tr in sorted(tracks, key=lambda tr: tr.id):
        for t, p in tr.history:
            yield tr.id, t, p
