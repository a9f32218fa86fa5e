"""Deterministic synthetic multi-sensor point-cloud scenarios with ground truth.

Stands in for recorded data: a UAV flies a cubic spline through waypoints,
each sensor samples it at its own rate with range-dependent point counts,
Gaussian jitter and an injected radial bias, and the sky is littered with
transient blobs and slow bird-like distractors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import make_interp_spline

from .core import Rng
from .io import SENSOR_ORDER, UAV_CLASSES, Frame, FrameRecord, GroundTruth

log = logging.getLogger(__name__)

# rotor-tip diameter of each airframe, metres
BODY_SIZE = {"phantom4": 0.35, "m300": 0.81, "m30t": 0.67, "mavic3": 0.38}


@dataclass(frozen=True)
class SensorSpec:
    """One sensor. ``fov`` is the cone half-angle for the conic lidar and
    the (azimuth, elevation) full widths otherwise; ``tilt`` is the
    boresight elevation of the az/el sensors."""

    id: str
    fov: Tuple[float, ...]
    max_range: float
    rate: float
    noise_sigma: float = 0.05
    dropout_prob: float = 0.0
    point_scale: float = 1.0
    tilt: float = 0.0

    def __post_init__(self):
        if self.id not in SENSOR_ORDER:
            raise ValueError(f"unknown sensor id {self.id!r}")
        if self.max_range <= 0 or self.rate <= 0:
            raise ValueError("max_range and rate must be positive")
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ValueError("dropout_prob must lie in [0, 1]")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        """Boolean mask of points inside the field of view and range."""
        pts = np.atleast_2d(pts)
        r = np.linalg.norm(pts, axis=1)
        inside = (r <= self.max_range) & (r > 0)
        if self.id == "lidar_conic":
            cos_half = math.cos(math.radians(self.fov[0]))
            return inside & (pts[:, 2] >= cos_half * r)
        el = np.degrees(np.arcsin(np.clip(pts[:, 2] / np.where(r > 0, r, 1.0), -1, 1)))
        half_el = self.fov[1] / 2.0
        inside &= np.abs(el - self.tilt) <= half_el
        if self.fov[0] < 360.0:
            az = np.degrees(np.arctan2(pts[:, 1], pts[:, 0]))
            inside &= np.abs(az) <= self.fov[0] / 2.0
        return inside

    def sample_direction(self, rng: Rng) -> np.ndarray:
        """Random unit vector inside the field of view."""
        if self.id == "lidar_conic":
            cos_half = math.cos(math.radians(self.fov[0]))
            cz = rng.uniform(cos_half, 1.0)
            phi = rng.uniform(0.0, 2 * math.pi)
            s = math.sqrt(max(0.0, 1 - cz * cz))
            return np.array([s * math.cos(phi), s * math.sin(phi), cz])
        half_az = min(self.fov[0], 360.0) / 2.0
        az = math.radians(rng.uniform(-half_az, half_az))
        el = math.radians(self.tilt + rng.uniform(-self.fov[1] / 2.0, self.fov[1] / 2.0))
        return np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])


def default_sensors(noise_sigma: float = 0.05, dropout_prob: float = 0.0,
                    ids: Sequence[str] = SENSOR_ORDER) -> List[SensorSpec]:
    specs = {
        "lidar_conic": SensorSpec("lidar_conic", (35.0,), 300.0, 10.0, noise_sigma, dropout_prob),
        "lidar_peri": SensorSpec("lidar_peri", (360.0, 59.0), 70.0, 10.0, noise_sigma, dropout_prob),
        "radar": SensorSpec("radar", (120.0, 30.0), 350.0, 15.0, 4 * noise_sigma, dropout_prob,
                            point_scale=1.0 / 3.0, tilt=15.0),
    }
    return [specs[i] for i in ids]


@dataclass
class Scenario:
    seed: int
    duration: float
    uav_class: str
    waypoints: List[Tuple[float, Sequence[float]]]
    clutter_rate: float = 2.0
    bias_gain: float = 0.0
    uav_present: bool = True
    n_birds: int = 2
    gt_rate: float = 10.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.clutter_rate < 0:
            raise ValueError("clutter_rate must be non-negative")
        if self.uav_class not in UAV_CLASSES:
            raise ValueError(f"unknown uav class {self.uav_class!r}")
        ts = [float(t) for t, _ in self.waypoints]
        if any(b < a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoints must be time-sorted")


def uav_path(waypoints):
    """Position as a function of time: interpolating cubic spline, held constant outside."""
    if not waypoints:
        raise ValueError("empty waypoint list")
    ts = np.array([float(t) for t, _ in waypoints])
    ps = np.array([np.asarray(p, dtype=np.float64) for _, p in waypoints]).reshape(-1, 3)
    if len(ts) == 1:
        return lambda t: np.broadcast_to(ps[0], (np.size(t), 3)).copy()
    k = min(3, len(ts) - 1)
    spline = make_interp_spline(ts, ps, k=k)

    def path(t):
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=np.float64)), ts[0], ts[-1])
        return spline(t)

    return path


def radial_bias(p: np.ndarray, gain: float) -> np.ndarray:
    """Outward displacement of magnitude ``gain * |p|**2 / 100``."""
    r = float(np.linalg.norm(p))
    if r == 0.0 or gain == 0.0:
        return np.zeros(3)
    return (gain * r * r / 100.0) * (p / r)


def uav_point_count(rng_range: float, scale: float = 1.0) -> int:
    n = max(3, int(round(30.0 * math.exp(-rng_range / 60.0))))
    return max(1, int(round(n * scale)))


def _body_offsets(rng: Rng, n: int, size: float) -> np.ndarray:
    rad = size / 2.0 * np.sqrt(rng.random(n))
    ang = rng.uniform(0.0, 2 * math.pi, n)
    off = np.stack([rad * np.cos(ang), rad * np.sin(ang), rng.uniform(-0.05, 0.05, n)], axis=1)
    return off - off.mean(axis=0)


@dataclass
class _Bird:
    origin: np.ndarray
    velocity: np.ndarray
    wobble: float
    period: float

    def at(self, t: float) -> np.ndarray:
        w = self.wobble * math.sin(2 * math.pi * t / self.period)
        return self.origin + self.velocity * t + np.array([0.0, 0.0, w])


def _make_birds(rng: Rng, n: int, sensors) -> List[_Bird]:
    birds = []
    ref = sensors[0]
    for _ in range(n):
        d = ref.sample_direction(rng)
        origin = d * rng.uniform(15.0, min(80.0, ref.max_range * 0.8))
        heading = rng.uniform(0.0, 2 * math.pi)
        speed = rng.uniform(0.3, 1.2)
        vel = speed * np.array([math.cos(heading), math.sin(heading), rng.uniform(-0.1, 0.1)])
        birds.append(_Bird(origin, vel, rng.uniform(0.2, 0.8), rng.uniform(6.0, 12.0)))
    return birds


def _sensor_frames(sc: Scenario, spec: SensorSpec, path, birds, root: Rng) -> List[Frame]:
    rng_uav = root.spawn(f"uav/{spec.id}")
    rng_clutter = root.spawn(f"clutter/{spec.id}")
    rng_drop = root.spawn(f"dropout/{spec.id}")
    rng_ground = root.spawn(f"ground/{spec.id}")
    ground = None
    if spec.id == "lidar_peri":
        az = rng_ground.uniform(0.0, 2 * math.pi, 64)
        rad = rng_ground.uniform(3.0, min(30.0, spec.max_range), 64)
        ground = np.stack([rad * np.cos(az), rad * np.sin(az), np.full(64, -1.5)], axis=1)
    size = BODY_SIZE[sc.uav_class]
    n_frames = int(math.floor(sc.duration * spec.rate - 1e-9)) + 1
    frames = []
    for k in range(n_frames):
        t = k / spec.rate
        chunks = []
        if sc.uav_present:
            center = path(t)[0]
            rng_c = float(np.linalg.norm(center))
            if spec.contains(center[None])[0]:
                n = uav_point_count(rng_c, spec.point_scale)
                pts = center + _body_offsets(rng_uav, n, size) + radial_bias(center, sc.bias_gain)
                if spec.noise_sigma > 0:
                    pts = pts + rng_uav.normal(0.0, spec.noise_sigma, (n, 3))
                chunks.append(pts)
        for _ in range(rng_clutter.poisson(sc.clutter_rate)):
            if birds and rng_clutter.random() < 0.3:
                b = birds[rng_clutter.integers(0, len(birds))]
                m = rng_clutter.integers(1, 3)
                chunks.append(b.at(t) + rng_clutter.normal(0.0, 0.05, (m, 3)))
            else:
                d = spec.sample_direction(rng_clutter)
                c = d * rng_clutter.uniform(5.0, min(spec.max_range, 150.0))
                m = rng_clutter.integers(3, 9)
                spread = rng_clutter.uniform(0.1, 0.3)
                chunks.append(c + rng_clutter.normal(0.0, spread, (m, 3)))
        if ground is not None:
            g = ground
            if spec.noise_sigma > 0:
                g = g + rng_ground.normal(0.0, spec.noise_sigma, g.shape)
            chunks.append(g)
        pts = np.concatenate(chunks, axis=0) if chunks else np.zeros((0, 3))
        if len(pts):
            pts = pts[spec.contains(pts)]
        if spec.dropout_prob > 0 and rng_drop.random() < spec.dropout_prob:
            continue
        frames.append(Frame(t, spec.id, pts))
    return frames


def merge_streams(streams: Sequence[Sequence[Frame]]) -> List[Frame]:
    """Time-ordered merge; equal timestamps ordered lidar_conic < lidar_peri < radar."""
    order = {s: i for i, s in enumerate(SENSOR_ORDER)}
    allf = [f for s in streams for f in s]
    return sorted(allf, key=lambda f: (f.t, order[f.sensor]))


def generate_scenario(sc: Scenario, sensors: Sequence[SensorSpec]):
    """Render a scenario into a merged frame stream and its ground truth.

    Returns
    -------
    frames : list of Frame, time-sorted across sensors
    gt : GroundTruth sampled at ``sc.gt_rate`` over ``[0, duration)``
    """
    if not sc.waypoints:
        raise ValueError("empty waypoint list")
    root = Rng(sc.seed)
    path = uav_path(sc.waypoints)
    birds = _make_birds(root.spawn("birds"), sc.n_birds, sensors) if sensors else []
    streams = [_sensor_frames(sc, spec, path, birds, root) for spec in sensors]
    n_gt = int(math.floor(sc.duration * sc.gt_rate - 1e-9)) + 1
    gt_t = np.arange(n_gt) / sc.gt_rate
    gt = GroundTruth(gt_t, path(gt_t), sc.uav_class if sc.uav_present else None)
    if sc.uav_present and sensors:
        covered = np.zeros(n_gt, dtype=bool)
        for spec in sensors:
            covered |= spec.contains(gt.positions)
        if not covered.any():
            log.warning("UAV path never enters any sensor coverage")
    return merge_streams(streams), gt


def random_waypoints(rng: Rng, duration: float, every: float = 4.0, max_speed: float = 3.0,
                     half_angle: float = 35.0) -> List[Tuple[float, np.ndarray]]:
    """Waypoints inside the conic lidar cone at 15-60 m altitude."""
    slope = 0.8 * math.tan(math.radians(half_angle))
    times = list(np.arange(0.0, duration + 1e-9, every))
    if times[-1] < duration:
        times.append(duration)

    def ok(p):
        return 15.0 <= p[2] <= 60.0 and math.hypot(p[0], p[1]) <= slope * p[2]

    z = rng.uniform(20.0, 45.0)
    r = rng.uniform(0.0, 0.8) * slope * z
    phi = rng.uniform(0.0, 2 * math.pi)
    p = np.array([r * math.cos(phi), r * math.sin(phi), z])
    wps = [(float(times[0]), p)]
    for t0, t1 in zip(times, times[1:]):
        step = max_speed * (t1 - t0)
        for _ in range(100):
            d = rng.normal(0.0, 1.0, 3)
            d[2] *= 0.4
            cand = p + d / np.linalg.norm(d) * rng.uniform(0.4, 1.0) * step
            if ok(cand):
                break
        else:
            cand = p.copy()
        p = cand
        wps.append((float(t1), p))
    return wps


def default_scenario(seed: int, duration: float = 20.0, clutter_rate: float = 2.0,
                     bias_gain: float = 0.01, uav_present: bool = True,
                     uav_class: Optional[str] = None) -> Scenario:
    rng = Rng(seed).spawn("scenario")
    cls = uav_class or UAV_CLASSES[rng.integers(0, len(UAV_CLASSES))]
    return Scenario(seed=seed, duration=duration, uav_class=cls,
                    waypoints=random_waypoints(rng, duration), clutter_rate=clutter_rate,
                    bias_gain=bias_gain, uav_present=uav_present)


def hover_scenario(seed: int, position=(0.0, 0.0, 10.0), duration: float = 5.0, **kw) -> Scenario:
    p = np.asarray(position, dtype=np.float64)
    kw.setdefault("clutter_rate", 0.0)
    kw.setdefault("n_birds", 0)
    return Scenario(seed=seed, duration=duration, uav_class=kw.pop("uav_class", "mavic3"),
                    waypoints=[(0.0, p), (duration, p)], **kw)


# -- score streams for type classification --------------------------------------

@dataclass
class ScoreStreamConfig:
    n_real: int = 500
    seqs_per_real: Tuple[int, int] = (1, 4)
    frames_per_seq: Tuple[int, int] = (40, 160)
    frame_accuracy: float = 0.6
    emb_dim: int = 16
    seq_noise: float = 0.03
    frame_noise: float = 0.05


def generate_score_stream(seed: int, cfg: ScoreStreamConfig = ScoreStreamConfig()):
    """Simulated per-frame outputs of the external image models.

    Detector confidence ``c`` is uniform and the frame is classified
    correctly with probability ``a0 + (1 - a0) * c`` where ``a0`` is chosen so
    the average top-1 accuracy equals ``cfg.frame_accuracy``.

    Returns
    -------
    records : list of FrameRecord in recording order
    labels : dict seq_id -> true class
    """
    rng = Rng(seed).spawn("scores")
    a0 = 2.0 * cfg.frame_accuracy - 1.0
    if not -1e-12 <= a0 <= 1.0:
        raise ValueError("frame_accuracy must lie in [0.5, 1]")
    a0 = max(a0, 0.0)
    n_cls = len(UAV_CLASSES)
    records, labels = [], {}
    for r in range(cfg.n_real):
        cls = rng.integers(0, n_cls)
        base = rng.normal(0.0, 1.0, cfg.emb_dim)
        base /= np.linalg.norm(base)
        for j in range(rng.integers(cfg.seqs_per_real[0], cfg.seqs_per_real[1] + 1)):
            sid = f"r{r:04d}_s{j}"
            labels[sid] = UAV_CLASSES[cls]
            seq_vec = base + rng.normal(0.0, cfg.seq_noise, cfg.emb_dim)
            n = rng.integers(cfg.frames_per_seq[0], cfg.frames_per_seq[1] + 1)
            conf = rng.random(n)
            correct = rng.random(n) < a0 + (1.0 - a0) * conf
            pred = np.where(correct, cls, (cls + rng.integers(1, n_cls, n)) % n_cls)
            peak = rng.uniform(0.5, 0.95, n)
            rest = rng.random((n, n_cls - 1)) + 1e-3
            rest = (1.0 - peak)[:, None] * rest / rest.sum(axis=1, keepdims=True)
            embs = seq_vec + rng.normal(0.0, cfg.frame_noise, (n, cfg.emb_dim))
            for f in range(n):
                sm = np.empty(n_cls)
                sm[pred[f]] = peak[f]
                sm[[k for k in range(n_cls) if k != pred[f]]] = rest[f]
                records.append(FrameRecord(sid, f, embs[f], float(conf[f]), sm))
    return records, labels
