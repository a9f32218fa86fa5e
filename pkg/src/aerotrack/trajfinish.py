"""Trajectory completion with AR(3) models and B-spline smoothing."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import DEFAULT_RIDGE, cholesky_solve, solve_least_squares

log = logging.getLogger(__name__)

AR_ORDER = 3
MIN_AR_SAMPLES = 8
# x_t = 3 x_{t-1} - 3 x_{t-2} + x_{t-3} annihilates every quadratic
CONST_ACCEL = np.array([3.0, -3.0, 1.0, 0.0])
TRACKED, COMPLETED, INTERPOLATED = "tracked", "completed", "interpolated"


class InsufficientDataError(ValueError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    flags: List[str]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.times)

    def samples(self):
        return list(zip(self.times.tolist(), self.positions, self.flags))


# -- uniform resampling --------------------------------------------------------

def resample_uniform(history: Sequence[Tuple[float, Sequence[float]]], dt: float):
    """Linear interpolation of ``history`` onto ``t0 + k*dt``.

    A grid point is a gap when the observations bracketing it are more than
    ``2*dt`` apart, i.e. when at least one whole sample is missing.

    Returns ``(times, values, gap)``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if len(history) < 2:
        raise InsufficientDataError("resampling needs at least two observations")
    ts = np.array([float(t) for t, _ in history])
    ps = np.array([np.asarray(p, dtype=np.float64) for _, p in history]).reshape(len(ts), -1)
    if np.any(np.diff(ts) <= 0):
        raise ValueError("history must be strictly time-increasing")
    n = int(math.floor((ts[-1] - ts[0]) / dt + 1e-9)) + 1
    grid = ts[0] + dt * np.arange(n)
    vals = np.column_stack([np.interp(grid, ts, ps[:, k]) for k in range(ps.shape[1])])
    right = np.clip(np.searchsorted(ts, grid, side="left"), 1, len(ts) - 1)
    span = ts[right] - ts[right - 1]
    on_obs = np.isclose(grid, ts[right]) | np.isclose(grid, ts[right - 1])
    gap = (span > 2.0 * dt * (1 + 1e-9)) & ~on_obs
    return grid, vals, gap


def contiguous_runs(valid: np.ndarray) -> List[Tuple[int, int]]:
    """``[start, stop)`` index ranges of consecutive True values."""
    runs, start = [], None
    for i, v in enumerate(valid):
        if v and start is None:
            start = i
        elif not v and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(valid)))
    return runs


# -- AR(3) ---------------------------------------------------------------------

@dataclass
class ArModel:
    """Per-axis ``x_t = a1 x_{t-1} + a2 x_{t-2} + a3 x_{t-3} + c``; ``coeffs`` is (4, n_axes)."""

    coeffs: np.ndarray
    dt: float

    def predict_next(self, last: np.ndarray) -> np.ndarray:
        """``last`` holds the previous three samples, oldest first."""
        last = np.asarray(last, dtype=np.float64)
        return (self.coeffs[0] * last[-1] + self.coeffs[1] * last[-2]
                + self.coeffs[2] * last[-3] + self.coeffs[3])

    def roll(self, seed: np.ndarray, steps: int) -> np.ndarray:
        buf = [np.asarray(s, dtype=np.float64) for s in seed[-AR_ORDER:]]
        out = []
        for _ in range(steps):
            nxt = self.predict_next(np.array(buf[-AR_ORDER:]))
            out.append(nxt)
            buf.append(nxt)
        return np.array(out).reshape(steps, -1)


def _lagged(series: np.ndarray):
    x = np.asarray(series, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    rows = n - AR_ORDER
    if rows <= 0:
        return None
    return x[AR_ORDER:], [x[AR_ORDER - k:n - k] for k in range(1, AR_ORDER + 1)]


def ar_fit(segments, dt: float = 1.0, ridge: float = DEFAULT_RIDGE) -> ArModel:
    """Least-squares AR(3) with intercept, per axis, over all lagged quadruples.

    The ridge penalises the distance from the constant-acceleration model
    (3, -3, 1, 0) on the centred and scaled axis.

    ``segments`` is one uniform series (n, d) or a list of them; quadruples
    never straddle two segments.
    """
    if isinstance(segments, np.ndarray):
        segments = [segments]
    segs = [np.asarray(s, dtype=np.float64) for s in segments]
    segs = [s[:, None] if s.ndim == 1 else s for s in segs]
    n_quads = sum(max(0, len(s) - AR_ORDER) for s in segs)
    if n_quads < MIN_AR_SAMPLES - AR_ORDER:
        raise InsufficientDataError(
            f"AR({AR_ORDER}) fit needs {MIN_AR_SAMPLES - AR_ORDER} lagged samples, got {n_quads}")
    d = segs[0].shape[1]
    coeffs = np.zeros((AR_ORDER + 1, d))
    for k in range(d):
        # fit on the centred, scaled axis so the ridge is relative to the data
        vals = np.concatenate([s[:, k] for s in segs])
        mu = float(np.mean(vals))
        scale = float(np.max(np.abs(vals - mu))) or 1.0
        rows, targets = [], []
        for s in segs:
            lag = _lagged((s[:, k] - mu) / scale)
            if lag is None:
                continue
            y, lags = lag
            rows.append(np.column_stack([l[:, 0] for l in lags] + [np.ones(len(y))]))
            targets.append(y[:, 0])
        A = np.vstack(rows)
        b = np.concatenate(targets)
        # shrink toward the constant-acceleration predictor rather than zero,
        # so quadratics are reproduced exactly however ill-conditioned A is
        beta = CONST_ACCEL + solve_least_squares(A, b - A @ CONST_ACCEL, ridge)[:, 0]
        coeffs[:AR_ORDER, k] = beta[:AR_ORDER]
        coeffs[AR_ORDER, k] = scale * beta[AR_ORDER] + mu * (1.0 - beta[:AR_ORDER].sum())
    return ArModel(coeffs, dt)


def _seed_for_roll(vals: np.ndarray) -> np.ndarray:
    """Last three samples, padding short runs by linear extrapolation backwards."""
    if len(vals) >= AR_ORDER:
        return vals[-AR_ORDER:]
    if len(vals) == 1:
        return np.repeat(vals, AR_ORDER, axis=0)
    step = vals[-1] - vals[-2]
    pad = [vals[0] - step * k for k in range(AR_ORDER - len(vals), 0, -1)]
    return np.vstack([np.array(pad), vals])


# -- completion ----------------------------------------------------------------

def select_fragments(histories: Sequence[Sequence[Tuple[float, np.ndarray]]]):
    """Longest-first set of time-disjoint fragments, returned in time order."""
    frags = [list(h) for h in histories if len(h)]
    frags.sort(key=lambda h: (-len(h), h[0][0]))
    chosen = []
    for h in frags:
        lo, hi = h[0][0], h[-1][0]
        if all(hi < c[0][0] or lo > c[-1][0] for c in chosen):
            chosen.append(h)
    chosen.sort(key=lambda h: h[0][0])
    return chosen


def median_interval(times: Sequence[float]) -> float:
    d = np.diff(np.asarray(times, dtype=np.float64))
    d = d[d > 0]
    if len(d) == 0:
        raise InsufficientDataError("need two distinct timestamps to infer a sampling interval")
    return float(np.median(d))


def complete(histories, dt: Optional[float] = None, max_extrap: float = 3.0,
             span: Optional[Tuple[float, float]] = None, ridge: float = DEFAULT_RIDGE) -> Trajectory:
    """Fill gaps between track fragments and extend the ends.

    Interior gaps blend a forward AR roll from the preceding samples with a
    backward roll (model fitted on reversed time) from the following ones,
    using linear cross-fade weights. When ``span`` is given the trajectory
    is extended toward it by at most ``max_extrap`` seconds at each end.
    """
    frags = select_fragments(histories)
    if not frags:
        log.warning("no confirmed tracks; trajectory is empty")
        return Trajectory(np.zeros(0), np.zeros((0, 3)), [])
    obs = [(float(t), np.asarray(p, dtype=np.float64)) for h in frags for t, p in h]
    obs_t = np.array([t for t, _ in obs])
    obs_p = np.array([p for _, p in obs])
    if len(obs) == 1:
        return Trajectory(obs_t, obs_p, [TRACKED])
    dt = dt or median_interval(obs_t)
    grid, vals, gap = resample_uniform(obs, dt)
    runs = contiguous_runs(~gap)
    try:
        fwd = ar_fit([vals[a:b] for a, b in runs], dt, ridge)
        bwd = ar_fit([vals[a:b][::-1] for a, b in runs], dt, ridge)
    except InsufficientDataError:
        log.warning("too few samples for AR(3); falling back to linear fill and held ends")
        fwd = bwd = None

    gen_t, gen_p = [], []
    for (a0, a1), (b0, b1) in zip(runs, runs[1:]):
        n = b0 - a1
        if fwd is not None:
            f = fwd.roll(_seed_for_roll(vals[a0:a1]), n)
            b = bwd.roll(_seed_for_roll(vals[b0:b1][::-1]), n)[::-1]
            w = (np.arange(1, n + 1) / (n + 1))[:, None]
            fill = (1.0 - w) * f + w * b
        else:
            fill = vals[a1:b0]
        gen_t.extend(grid[a1:b0])
        gen_p.extend(fill)

    if span is not None:
        lo = max(span[0], obs_t[0] - max_extrap)
        n_head = int(math.ceil((obs_t[0] - lo) / dt - 1e-9)) if lo < obs_t[0] else 0
        hi = min(span[1], obs_t[-1] + max_extrap)
        n_tail = int(math.ceil((hi - obs_t[-1]) / dt - 1e-9)) if hi > obs_t[-1] else 0
        a0, a1 = runs[0]
        if n_head:
            head = (bwd.roll(_seed_for_roll(vals[a0:a1][::-1]), n_head)[::-1] if bwd is not None
                    else np.repeat(vals[:1], n_head, axis=0))
            gen_t.extend(grid[0] - dt * np.arange(n_head, 0, -1))
            gen_p.extend(head)
        a0, a1 = runs[-1]
        if n_tail:
            tail = (fwd.roll(_seed_for_roll(vals[a0:a1]), n_tail) if fwd is not None
                    else np.repeat(vals[-1:], n_tail, axis=0))
            gen_t.extend(grid[-1] + dt * np.arange(1, n_tail + 1))
            gen_p.extend(tail)

    times = np.concatenate([obs_t, np.array(gen_t, dtype=np.float64)])
    pos = np.vstack([obs_p] + ([np.array(gen_p)] if gen_p else []))
    flags = [TRACKED] * len(obs_t) + [COMPLETED] * len(gen_t)
    order = np.argsort(times, kind="stable")
    return Trajectory(times[order], pos[order], [flags[i] for i in order])


# -- cubic B-splines -----------------------------------------------------------

DEGREE = 3


@dataclass
class SplineFit:
    knots: np.ndarray      # clamped, non-decreasing
    ctrl: np.ndarray       # (len(knots) - 4, 3)

    @property
    def t0(self) -> float:
        return float(self.knots[DEGREE])

    @property
    def t1(self) -> float:
        return float(self.knots[-DEGREE - 1])


def clamped_uniform_knots(t0: float, t1: float, spacing: float) -> np.ndarray:
    m = max(1, int(round((t1 - t0) / spacing)))
    interior = t0 + (t1 - t0) * np.arange(1, m) / m
    return np.concatenate([[t0] * (DEGREE + 1), interior, [t1] * (DEGREE + 1)])


def _span_index(knots: np.ndarray, t: float) -> int:
    n_ctrl = len(knots) - DEGREE - 1
    if t >= knots[n_ctrl]:
        return n_ctrl - 1
    return int(np.searchsorted(knots, t, side="right") - 1)


def basis_matrix(knots: np.ndarray, ts) -> np.ndarray:
    """Cox-de Boor basis values, shape (len(ts), n_ctrl); right end included."""
    knots = np.asarray(knots, dtype=np.float64)
    ts = np.atleast_1d(np.asarray(ts, dtype=np.float64))
    n_ctrl = len(knots) - DEGREE - 1
    out = np.zeros((len(ts), n_ctrl))
    for r, t in enumerate(ts):
        s = _span_index(knots, t)
        N = np.zeros(DEGREE + 1)
        N[0] = 1.0
        left = np.zeros(DEGREE + 1)
        right = np.zeros(DEGREE + 1)
        for j in range(1, DEGREE + 1):
            left[j] = t - knots[s + 1 - j]
            right[j] = knots[s + j] - t
            saved = 0.0
            for k in range(j):
                tmp = N[k] / (right[k + 1] + left[j - k])
                N[k] = saved + right[k + 1] * tmp
                saved = left[j - k] * tmp
            N[j] = saved
        out[r, s - DEGREE:s + 1] = N
    return out


def de_boor(knots: np.ndarray, ctrl: np.ndarray, t: float) -> np.ndarray:
    s = _span_index(knots, t)
    d = [ctrl[j + s - DEGREE].astype(np.float64).copy() for j in range(DEGREE + 1)]
    for r in range(1, DEGREE + 1):
        for j in range(DEGREE, r - 1, -1):
            i = j + s - DEGREE
            denom = knots[i + 1 + DEGREE - r] - knots[i]
            alpha = 0.0 if denom == 0 else (t - knots[i]) / denom
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[DEGREE]


def greville(knots: np.ndarray) -> np.ndarray:
    n_ctrl = len(knots) - DEGREE - 1
    return np.array([knots[i + 1:i + 1 + DEGREE].mean() for i in range(n_ctrl)])


def second_difference(knots: np.ndarray) -> np.ndarray:
    """Second divided differences of control points at their Greville abscissae.

    Annihilates control polygons of straight lines, so the smoothing
    penalty leaves linear motion untouched.
    """
    g = greville(knots)
    n = len(g)
    D = np.zeros((max(n - 2, 0), n))
    for i in range(1, n - 1):
        hl, hr = g[i] - g[i - 1], g[i + 1] - g[i]
        D[i - 1, i - 1] = 1.0 / hl
        D[i - 1, i] = -(1.0 / hl + 1.0 / hr)
        D[i - 1, i + 1] = 1.0 / hr
    return D


def smooth_bspline(times, positions, knot_spacing: float = 1.0,
                   smooth_weight: float = 1e-2) -> SplineFit:
    """Penalised least-squares cubic B-spline through timestamped 3D samples."""
    ts = np.asarray(times, dtype=np.float64)
    ps = np.asarray(positions, dtype=np.float64).reshape(len(ts), -1)
    if len(ts) < 5:
        raise InsufficientDataError("B-spline smoothing needs at least 5 samples")
    if knot_spacing <= 0 or smooth_weight < 0:
        raise ValueError("knot_spacing must be positive and smooth_weight non-negative")
    knots = clamped_uniform_knots(ts[0], ts[-1], knot_spacing)
    B = basis_matrix(knots, ts)
    D = second_difference(knots)
    A = B.T @ B + smooth_weight * (D.T @ D)
    ctrl = cholesky_solve(A, B.T @ ps)
    return SplineFit(knots, ctrl)


def _end_tangent(sp: SplineFit, at_end: bool) -> np.ndarray:
    k, c = sp.knots, sp.ctrl
    if at_end:
        n = len(c)
        return DEGREE * (c[n - 1] - c[n - 2]) / (k[n - 1 + DEGREE] - k[n - 1])
    return DEGREE * (c[1] - c[0]) / (k[DEGREE + 1] - k[1])


def eval_at(sp: SplineFit, stamps):
    """Positions at ``stamps`` and a per-stamp flag for linear extrapolation."""
    stamps = np.atleast_1d(np.asarray(stamps, dtype=np.float64))
    out = np.zeros((len(stamps), sp.ctrl.shape[1]))
    extrap = np.zeros(len(stamps), dtype=bool)
    for i, t in enumerate(stamps):
        if t < sp.t0:
            out[i] = de_boor(sp.knots, sp.ctrl, sp.t0) + (t - sp.t0) * _end_tangent(sp, False)
            extrap[i] = True
        elif t > sp.t1:
            out[i] = de_boor(sp.knots, sp.ctrl, sp.t1) + (t - sp.t1) * _end_tangent(sp, True)
            extrap[i] = True
        else:
            out[i] = de_boor(sp.knots, sp.ctrl, t)
    return out, extrap


@dataclass
class FinishConfig:
    max_extrap: float = 3.0
    knot_spacing: float = 1.0
    smooth_weight: float = 1e-2
    ridge: float = DEFAULT_RIDGE


def finish(histories, stamps, cfg: FinishConfig = FinishConfig()):
    """Complete, smooth and sample a sequence at ``stamps``.

    Returns a list of ``(t, position, flag)``. Stamps inside the completed
    trajectory take the flag of its nearest sample; stamps outside it are
    flagged ``interpolated``.
    """
    stamps = np.asarray(stamps, dtype=np.float64)
    if len(stamps) == 0:
        return []
    traj = complete(histories, max_extrap=cfg.max_extrap, span=(stamps[0], stamps[-1]),
                    ridge=cfg.ridge)
    if len(traj) == 0:
        return []
    if len(traj) >= 5:
        sp = smooth_bspline(traj.times, traj.positions, cfg.knot_spacing, cfg.smooth_weight)
        pos, _ = eval_at(sp, stamps)
    else:
        pos = np.column_stack([np.interp(stamps, traj.times, traj.positions[:, k]) for k in range(3)])
    out = []
    for t, p in zip(stamps, pos):
        if t < traj.times[0] or t > traj.times[-1]:
            flag = INTERPOLATED
        else:
            j = int(np.argmin(np.abs(traj.times - t)))
            flag = traj.flags[j]
        out.append((float(t), p, flag))
    return out
