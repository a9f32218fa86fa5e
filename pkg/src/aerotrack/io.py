"""Readers and writers for every on-disk format used by the pipeline.

Floats are written with 9 significant digits. Readers are generators and
hold one line in memory at a time.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, List, Optional, Sequence

import numpy as np

SENSOR_ORDER = ("lidar_conic", "lidar_peri", "radar")
UAV_CLASSES = ("phantom4", "m300", "m30t", "mavic3")
TRAJ_FLAGS = ("tracked", "completed", "interpolated")


class FormatError(ValueError):
    """Malformed or out-of-order input; carries the path and 1-based line."""

    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


def fmt(x: float) -> str:
    return format(float(x), ".9g")


def _num(x: float):
    # json.dumps of a float parsed back from 9 significant digits
    return float(fmt(x))


@dataclass
class Frame:
    t: float
    sensor: str
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)

    def __eq__(self, other):
        return (isinstance(other, Frame) and self.t == other.t and self.sensor == other.sensor
                and np.array_equal(self.points, other.points))


@dataclass
class GroundTruth:
    times: np.ndarray
    positions: np.ndarray
    uav_class: Optional[str]

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)

    def samples(self):
        return [(float(t), p) for t, p in zip(self.times, self.positions)]

    def at(self, t: float) -> np.ndarray:
        """Linear interpolation; raises ValueError outside the sampled span."""
        if len(self.times) == 0 or t < self.times[0] or t > self.times[-1]:
            raise ValueError(f"t={t} outside ground-truth span")
        return np.array([np.interp(t, self.times, self.positions[:, k]) for k in range(3)])


@dataclass
class Detection:
    t: float
    center: np.ndarray
    score: float
    n_points: int

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)


@dataclass
class FrameRecord:
    seq_id: str
    frame: int
    embedding: np.ndarray
    det_conf: float
    softmax: np.ndarray

    def __post_init__(self):
        self.embedding = np.asarray(self.embedding, dtype=np.float64)
        self.softmax = np.asarray(self.softmax, dtype=np.float64)


def _jsonl_lines(path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(obj, dict):
                raise FormatError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _finite(path, lineno, value, what):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise FormatError(path, lineno, f"{what} is not a number") from None
    if not math.isfinite(v):
        raise FormatError(path, lineno, f"{what} is not finite")
    return v


def _vec3(path, lineno, value, what):
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise FormatError(path, lineno, f"{what} must have 3 components")
    return [_finite(path, lineno, v, what) for v in value]


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"))


# -- frames.jsonl ------------------------------------------------------------

def write_frames(path, frames: Iterable[Frame]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for fr in frames:
            pts = [[_num(v) for v in p] for p in fr.points]
            fh.write(_dump({"t": _num(fr.t), "sensor": fr.sensor, "points": pts}) + "\n")


def read_frames(path) -> Iterator[Frame]:
    last_t = -math.inf
    for lineno, obj in _jsonl_lines(path):
        for key in ("t", "sensor", "points"):
            if key not in obj:
                raise FormatError(path, lineno, f"missing key '{key}'")
        t = _finite(path, lineno, obj["t"], "t")
        if t < last_t:
            raise FormatError(path, lineno, f"timestamp {t} goes backwards")
        last_t = t
        if obj["sensor"] not in SENSOR_ORDER:
            raise FormatError(path, lineno, f"unknown sensor {obj['sensor']!r}")
        if not isinstance(obj["points"], list):
            raise FormatError(path, lineno, "points must be a list")
        pts = [_vec3(path, lineno, p, "point") for p in obj["points"]]
        yield Frame(t, obj["sensor"], np.array(pts, dtype=np.float64).reshape(-1, 3))


# -- gt.csv --------------------------------------------------------------------

def write_gt(path, gt: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,x,y,z,class\n")
        cls = gt.uav_class or ""
        for t, p in zip(gt.times, gt.positions):
            fh.write(",".join([fmt(t), fmt(p[0]), fmt(p[1]), fmt(p[2]), cls]) + "\n")


def _csv_rows(path, header: Sequence[str]):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return
        if [h.strip() for h in first] != list(header):
            raise FormatError(path, 1, f"expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise FormatError(path, reader.line_num,
                                  f"expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, row


def read_gt(path) -> GroundTruth:
    times, pos, cls = [], [], None
    for lineno, row in _csv_rows(path, ("t", "x", "y", "z", "class")):
        t = _finite(path, lineno, row[0], "t")
        if times and t <= times[-1]:
            raise FormatError(path, lineno, f"timestamp {t} is not strictly increasing")
        c = row[4].strip() or None
        if c is not None and c not in UAV_CLASSES:
            raise FormatError(path, lineno, f"unknown class {c!r}")
        if cls is None:
            cls = c
        times.append(t)
        pos.append([_finite(path, lineno, v, "coordinate") for v in row[1:4]])
    return GroundTruth(np.array(times), np.array(pos).reshape(-1, 3), cls)


# -- detections.jsonl ----------------------------------------------------------

def write_detections(path, detections: Iterable[Detection]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for d in detections:
            fh.write(_dump({"t": _num(d.t), "center": [_num(v) for v in d.center],
                            "score": _num(d.score), "n_points": int(d.n_points)}) + "\n")


def read_detections(path) -> Iterator[Detection]:
    last_t = -math.inf
    for lineno, obj in _jsonl_lines(path):
        for key in ("t", "center", "score", "n_points"):
            if key not in obj:
                raise FormatError(path, lineno, f"missing key '{key}'")
        t = _finite(path, lineno, obj["t"], "t")
        if t < last_t:
            raise FormatError(path, lineno, f"timestamp {t} goes backwards")
        last_t = t
        score = _finite(path, lineno, obj["score"], "score")
        if not 0.0 <= score <= 1.0:
            raise FormatError(path, lineno, "score outside [0, 1]")
        n = obj["n_points"]
        if not isinstance(n, int) or n < 0:
            raise FormatError(path, lineno, "n_points must be a non-negative integer")
        yield Detection(t, _vec3(path, lineno, obj["center"], "center"), score, n)


# -- tracks.csv ----------------------------------------------------------------

def write_tracks(path, rows: Iterable[tuple]) -> None:
    """``rows`` are ``(track_id, t, (x, y, z))`` tuples."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("track_id,t,x,y,z\n")
        for tid, t, p in rows:
            fh.write(f"{int(tid)},{fmt(t)},{fmt(p[0])},{fmt(p[1])},{fmt(p[2])}\n")


def read_tracks(path) -> Iterator[tuple]:
    last = {}
    for lineno, row in _csv_rows(path, ("track_id", "t", "x", "y", "z")):
        try:
            tid = int(row[0])
        except ValueError:
            raise FormatError(path, lineno, "track_id must be an integer") from None
        t = _finite(path, lineno, row[1], "t")
        if tid in last and t <= last[tid]:
            raise FormatError(path, lineno, f"track {tid} timestamps not increasing")
        last[tid] = t
        yield tid, t, np.array([_finite(path, lineno, v, "coordinate") for v in row[2:5]])


# -- traj.csv ------------------------------------------------------------------

def write_traj(path, samples: Iterable[tuple]) -> None:
    """``samples`` are ``(t, (x, y, z), flag)``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,x,y,z,flag\n")
        for t, p, flag in samples:
            fh.write(f"{fmt(t)},{fmt(p[0])},{fmt(p[1])},{fmt(p[2])},{flag}\n")


def read_traj(path) -> List[tuple]:
    out = []
    for lineno, row in _csv_rows(path, ("t", "x", "y", "z", "flag")):
        t = _finite(path, lineno, row[0], "t")
        if out and t <= out[-1][0]:
            raise FormatError(path, lineno, f"timestamp {t} is not strictly increasing")
        flag = row[4].strip()
        if flag not in TRAJ_FLAGS:
            raise FormatError(path, lineno, f"unknown flag {flag!r}")
        out.append((t, np.array([_finite(path, lineno, v, "coordinate") for v in row[1:4]]),
                    flag))
    return out


# -- scores.jsonl / predictions.csv / labels.csv -------------------------------

def write_scores(path, records: Iterable[FrameRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(_dump({
                "seq_id": str(r.seq_id),
                "frame": int(r.frame),
                "embedding": [_num(v) for v in r.embedding],
                "det_conf": _num(r.det_conf),
                "softmax": [_num(v) for v in r.softmax],
            }) + "\n")


def read_scores(path) -> Iterator[FrameRecord]:
    for lineno, obj in _jsonl_lines(path):
        for key in ("seq_id", "frame", "embedding", "det_conf", "softmax"):
            if key not in obj:
                raise FormatError(path, lineno, f"missing key '{key}'")
        if not isinstance(obj["frame"], int):
            raise FormatError(path, lineno, "frame must be an integer")
        emb = obj["embedding"]
        if not isinstance(emb, list) or not emb:
            raise FormatError(path, lineno, "embedding must be a non-empty list")
        sm = obj["softmax"]
        if not isinstance(sm, list) or len(sm) != len(UAV_CLASSES):
            raise FormatError(path, lineno, f"softmax must have {len(UAV_CLASSES)} entries")
        yield FrameRecord(
            str(obj["seq_id"]), obj["frame"],
            [_finite(path, lineno, v, "embedding") for v in emb],
            _finite(path, lineno, obj["det_conf"], "det_conf"),
            [_finite(path, lineno, v, "softmax") for v in sm],
        )


def write_predictions(path, rows: Iterable[tuple]) -> None:
    """``rows`` are ``(seq_id, class, 4-vector)``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("seq_id,class,score0,score1,score2,score3\n")
        for sid, cls, scores in rows:
            fh.write(",".join([sid, cls] + [fmt(v) for v in scores]) + "\n")


def read_predictions(path) -> List[tuple]:
    out = []
    header = ("seq_id", "class", "score0", "score1", "score2", "score3")
    for lineno, row in _csv_rows(path, header):
        if row[1] not in UAV_CLASSES:
            raise FormatError(path, lineno, f"unknown class {row[1]!r}")
        out.append((row[0], row[1], np.array([_finite(path, lineno, v, "score") for v in row[2:]])))
    return out


def write_labels(path, labels: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("seq_id,class\n")
        for sid in sorted(labels):
            fh.write(f"{sid},{labels[sid]}\n")


def read_labels(path) -> dict:
    out = {}
    for lineno, row in _csv_rows(path, ("seq_id", "class")):
        if row[1] not in UAV_CLASSES:
            raise FormatError(path, lineno, f"unknown class {row[1]!r}")
        out[row[0]] = row[1]
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
