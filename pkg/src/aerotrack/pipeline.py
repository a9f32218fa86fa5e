"""Stage functions behind the command line: synth, train, detect, track, finish,
classify and eval, each reading and writing files under one work directory.

Layout::

    <workdir>/train/seq_000/{frames.jsonl, gt.csv}
    <workdir>/test/seq_000/{frames.jsonl, gt.csv, detections.jsonl, tracks.csv, traj.csv, traj.svg}
    <workdir>/{model.json, bias.json, train_metrics.json, scores.jsonl, labels.csv,
               predictions.csv, report.json, runtime.json}

Every random draw comes from ``derive_seed(root_seed, <stage name>)``.
"""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import io
from .centerfix import PolyBasis, apply_bias, fit_bias, load_bias, save_bias
from .config import Config
from .core import derive_seed, mse_3d
from .dynpoints import label_clusters, window_features
from .mot import TrackerConfig, run_tracker, track_rows
from .plot import emit_plot
from .seqcls import ClassifyConfig, classify, frame_accuracy
from .seqnet import TrainConfig, gradcheck, load_model, regress_center, save_model, train
from .synth import ScoreStreamConfig, default_scenario, default_sensors, generate_scenario, \
    generate_score_stream
from .trajfinish import FinishConfig, finish

log = logging.getLogger(__name__)

STAGES = ("synth", "train", "detect", "track", "finish", "classify", "eval")


def workdir(cfg: Config) -> Path:
    return Path(cfg["paths.workdir"])


def seq_dirs(cfg: Config, split: str) -> List[Path]:
    root = workdir(cfg) / split
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: no such directory (run the synth stage first)")
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name.startswith("seq_"))


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get("AEROTRACK_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    """Ordered map over independent sequences, in a process pool when allowed."""
    items = list(items)
    workers = min(n_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_json(path: Path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FileNotFoundError(f"{path}: {exc.strerror or exc}") from None


# -- synth ---------------------------------------------------------------------

def _synth_one(job):
    path, seed, cfg_d, uav_present = job
    sc = default_scenario(seed, cfg_d["synth.duration"], cfg_d["synth.clutter_rate"],
                          cfg_d["synth.bias_gain"], uav_present=uav_present)
    sensors = default_sensors(cfg_d["synth.noise_sigma"], cfg_d["synth.dropout_prob"],
                              tuple(cfg_d["synth.sensors"]))
    frames, gt = generate_scenario(sc, sensors)
    io.ensure_dir(path)
    io.write_frames(path / "frames.jsonl", frames)
    io.write_gt(path / "gt.csv", gt)
    return path.name


def stage_synth(cfg: Config) -> None:
    wd = io.ensure_dir(workdir(cfg))
    root = cfg["seed"]
    d = cfg.as_dict()
    jobs = []
    n_uav, n_clutter = cfg["synth.n_train"], cfg["synth.n_train_clutter"]
    for i in range(n_uav + n_clutter):
        jobs.append((wd / "train" / f"seq_{i:03d}", derive_seed(root, f"synth/train/{i}"), d, i < n_uav))
    for i in range(cfg["synth.n_test"]):
        jobs.append((wd / "test" / f"seq_{i:03d}", derive_seed(root, f"synth/test/{i}"), d,
                     cfg["synth.test_uav_present"]))
    _map(_synth_one, jobs)
    scfg = ScoreStreamConfig(n_real=cfg["synth.scores_n_real"],
                             frame_accuracy=cfg["synth.scores_frame_accuracy"])
    records, labels = generate_score_stream(derive_seed(root, "synth/scores"), scfg)
    io.write_scores(wd / "scores.jsonl", records)
    io.write_labels(wd / "labels.csv", labels)


# -- train ---------------------------------------------------------------------

def _dyn_args(cfg: Config):
    return (cfg["dynpoints.W"], cfg["dynpoints.stride"], cfg["dynpoints.eps"], cfg["dynpoints.min_points"])


def _label_one(job):
    path, dyn, r_pos, r_neg = job
    gt = io.read_gt(path / "gt.csv")
    out = []
    for _, feats in window_features(io.read_frames(path / "frames.jsonl"), *dyn):
        out.extend(label_clusters(feats, gt, r_pos, r_neg))
    return out


def build_training_set(cfg: Config):
    jobs = [(p, _dyn_args(cfg), cfg["dynpoints.r_pos"], cfg["dynpoints.r_neg"])
            for p in seq_dirs(cfg, "train")]
    return [s for batch in _map(_label_one, jobs) for s in batch]


def train_config(cfg: Config) -> TrainConfig:
    s = cfg.section("seqnet")
    return TrainConfig(epochs=s["epochs"], batch_size=s["batch_size"], lr=s["lr"],
                       momentum=s["momentum"], seed=derive_seed(cfg["seed"], "seqnet"),
                       uav_weight=s["uav_weight"], hidden=s["hidden"], holdout=s["holdout"],
                       threshold=s["threshold"], reg_lr=s["reg_lr"], p_drop=s["p_drop"],
                       p_reverse=s["p_reverse"], p_rotate=s["p_rotate"])


def bias_basis(cfg: Config) -> PolyBasis:
    if cfg["centerfix.basis"] is not None:
        return PolyBasis(tuple(tuple(int(v) for v in e) for e in cfg["centerfix.basis"]))
    return PolyBasis.full(cfg["centerfix.degree"])


def stage_train(cfg: Config) -> dict:
    wd = workdir(cfg)
    samples = build_training_set(cfg)
    model, metrics = train(samples, train_config(cfg))
    uavs = [s for s in samples if s.is_uav]
    pred = np.array([regress_center(model.reg, s.feature.anchor_points) for s in uavs])
    truth = np.array([s.target_center for s in uavs])
    bias = fit_bias(pred, truth, bias_basis(cfg), cfg["centerfix.ridge"])
    after = apply_bias(bias, pred)
    save_model(model, wd / "model.json")
    save_bias(bias, wd / "bias.json")
    out = metrics.as_dict()
    out["n_samples"] = len(samples)
    out["n_uav_samples"] = len(uavs)
    out["bias_mse_before"] = float(np.mean(np.sum((pred - truth) ** 2, axis=1)))
    out["bias_mse_after"] = float(np.mean(np.sum((after - truth) ** 2, axis=1)))
    _write_json(wd / "train_metrics.json", out)
    return out


# -- detect --------------------------------------------------------------------

def detect_frames(frames, model, bias, dyn, threshold: float, gap=(), dump=None) -> List[io.Detection]:
    """Windowed cluster classification followed by center regression and bias correction.

    Overlapping windows can report the same anchor frame twice; identical
    (time, center) pairs are merged keeping the higher score.
    """
    dets: Dict[tuple, io.Detection] = {}
    for t_end, feats in window_features(frames, *dyn):
        if not feats:
            continue
        X = np.stack([f.seq for f in feats])
        M = np.stack([f.mask for f in feats])
        probs = model.predict_proba(X, M)
        if dump is not None:
            clusters = [{"centroid": [io._num(v) for v in f.centroid], "n": f.n_points,
                         "p_uav": io._num(p)} for f, p in zip(feats, probs)]
            dump.write(json.dumps({"t_end": io._num(t_end), "clusters": clusters}) + "\n")
        for f, p in zip(feats, probs):
            if p < threshold:
                continue
            if gap and gap[0] <= f.t_anchor < gap[1]:
                continue
            center = apply_bias(bias, regress_center(model.reg, f.anchor_points))
            key = (f.t_anchor, tuple(center))
            if key not in dets or dets[key].score < p:
                dets[key] = io.Detection(f.t_anchor, center, float(p), len(f.anchor_points))
    return sorted(dets.values(), key=lambda d: (d.t, tuple(d.center)))


def _detect_one(job):
    path, model_path, bias_path, dyn, threshold, gap, dump = job
    model = load_model(model_path)
    bias = load_bias(bias_path)
    fh = open(path / "windows.jsonl", "w", encoding="utf-8") if dump else None
    try:
        dets = detect_frames(io.read_frames(path / "frames.jsonl"), model, bias, dyn, threshold, gap, fh)
    finally:
        if fh:
            fh.close()
    io.write_detections(path / "detections.jsonl", dets)
    return len(dets)


def stage_detect(cfg: Config) -> None:
    wd = workdir(cfg)
    for name in ("model.json", "bias.json"):
        if not (wd / name).is_file():
            raise FileNotFoundError(f"{wd / name}: no such file (run the train stage first)")
    gap = tuple(float(v) for v in cfg["detect.gap"])
    if gap and len(gap) != 2:
        raise ValueError("detect.gap must be empty or [start, end]")
    jobs = [(p, wd / "model.json", wd / "bias.json", _dyn_args(cfg), cfg["seqnet.threshold"], gap,
             cfg["dynpoints.dump_windows"]) for p in seq_dirs(cfg, "test")]
    _map(_detect_one, jobs)


# -- track ---------------------------------------------------------------------

def tracker_config(cfg: Config) -> TrackerConfig:
    s = cfg.section("mot")
    return TrackerConfig(q=s["q"], r=s["r"], gate=s["gate"], cov_kill=s["cov_kill"], n_confirm=s["n_confirm"])


def _track_one(job):
    path, tcfg = job
    tracks = run_tracker(io.read_detections(path / "detections.jsonl"), tcfg)
    io.write_tracks(path / "tracks.csv", track_rows(tracks))
    return len(tracks)


def stage_track(cfg: Config) -> None:
    tcfg = tracker_config(cfg)
    _map(_track_one, [(p, tcfg) for p in seq_dirs(cfg, "test")])


# -- finish --------------------------------------------------------------------

def read_histories(path) -> List[list]:
    hist: Dict[int, list] = {}
    for tid, t, p in io.read_tracks(path):
        hist.setdefault(tid, []).append((t, p))
    return [hist[k] for k in sorted(hist)]


def _finish_one(job):
    path, fcfg = job
    gt = io.read_gt(path / "gt.csv")
    histories = read_histories(path / "tracks.csv")
    samples = finish(histories, gt.times, fcfg) if histories else []
    if not samples:
        log.warning("%s: no confirmed track, trajectory left empty", path.name)
    io.write_traj(path / "traj.csv", samples)
    (path / "traj.svg").write_text(emit_plot(samples, gt.samples() if gt.uav_class else []),
                                   encoding="utf-8")
    return len(samples)


def stage_finish(cfg: Config) -> None:
    s = cfg.section("trajfinish")
    fcfg = FinishConfig(max_extrap=s["max_extrap"], knot_spacing=s["knot_spacing"],
                        smooth_weight=s["smooth_weight"], ridge=s["ridge"])
    _map(_finish_one, [(p, fcfg) for p in seq_dirs(cfg, "test")])


# -- classify ------------------------------------------------------------------

def classify_config(cfg: Config) -> ClassifyConfig:
    s = cfg.section("seqcls")
    return ClassifyConfig(tau=s["tau"], k=s["k"], sample_ratio=s["sample_ratio"],
                          adjacency_only=s["adjacency_only"])


def stage_classify(cfg: Config) -> None:
    wd = workdir(cfg)
    records = list(io.read_scores(wd / "scores.jsonl"))
    io.write_predictions(wd / "predictions.csv", classify(records, classify_config(cfg)))


# -- eval ----------------------------------------------------------------------

@dataclass
class EvalReport:
    pose_mse: Optional[float]
    per_sequence: List[dict]
    accuracy: Optional[float]
    confusion: List[List[int]]
    frame_accuracy: Optional[float] = None
    detector: dict = field(default_factory=dict)
    runtime: Dict[str, float] = field(default_factory=dict)

    def as_dict(self, with_runtime: bool = False) -> dict:
        d = {"pose_mse": self.pose_mse, "per_sequence": self.per_sequence, "accuracy": self.accuracy,
             "confusion": self.confusion, "frame_accuracy": self.frame_accuracy,
             "classes": list(io.UAV_CLASSES), "detector": self.detector}
        if with_runtime:
            d["runtime"] = self.runtime
        return d


def confusion_matrix(pred: Dict[str, str], truth: Dict[str, str]):
    """Rows are true classes, columns predicted; returns (matrix, accuracy)."""
    idx = {c: i for i, c in enumerate(io.UAV_CLASSES)}
    C = [[0] * len(idx) for _ in idx]
    for sid, cls in truth.items():
        if sid not in pred:
            raise KeyError(f"no prediction for sequence {sid}")
        C[idx[cls]][idx[pred[sid]]] += 1
    total = sum(map(sum, C))
    acc = sum(C[i][i] for i in range(len(C))) / total if total else None
    return C, acc


def pose_errors(cfg: Config) -> List[dict]:
    out = []
    for p in seq_dirs(cfg, "test"):
        gt = io.read_gt(p / "gt.csv")
        traj = io.read_traj(p / "traj.csv")
        n_tracks = len({tid for tid, _, _ in io.read_tracks(p / "tracks.csv")})
        row = {"seq": p.name, "n_confirmed_tracks": n_tracks, "mse": None}
        if gt.uav_class is not None:
            if not traj:
                row["error"] = "empty trajectory"
            else:
                row["mse"] = mse_3d([(t, q) for t, q, _ in traj], gt.samples())
        out.append(row)
    return out


def stage_eval(cfg: Config, runtime: Optional[Dict[str, float]] = None) -> EvalReport:
    wd = workdir(cfg)
    rows = pose_errors(cfg)
    scored = [r["mse"] for r in rows if r["mse"] is not None]
    failed = [r for r in rows if r.get("error")]
    pose = float(np.mean(scored)) if scored and not failed else (math.inf if failed else None)
    acc, C, facc = None, [[0] * 4 for _ in range(4)], None
    if (wd / "predictions.csv").is_file():
        truth = io.read_labels(wd / "labels.csv")
        pred = {sid: cls for sid, cls, _ in io.read_predictions(wd / "predictions.csv")}
        C, acc = confusion_matrix(pred, truth)
        facc = frame_accuracy(list(io.read_scores(wd / "scores.jsonl")), truth)
    detector = _read_json(wd / "train_metrics.json") if (wd / "train_metrics.json").is_file() else {}
    report = EvalReport(pose, rows, acc, C, facc, detector, dict(runtime or {}))
    _write_json(wd / "report.json", report.as_dict())
    return report


# -- whole pipeline ------------------------------------------------------------

def run_pipeline(cfg: Config) -> EvalReport:
    """synth, train, detect, track, finish, classify and eval in order.

    Stage runtimes go to runtime.json so that report.json stays byte-stable.
    """
    funcs = {"synth": stage_synth, "train": stage_train, "detect": stage_detect,
             "track": stage_track, "finish": stage_finish, "classify": stage_classify}
    runtime = {}
    for name, fn in funcs.items():
        t0 = time.perf_counter()
        fn(cfg)
        runtime[name] = time.perf_counter() - t0
    t0 = time.perf_counter()
    report = stage_eval(cfg, runtime)
    runtime["eval"] = time.perf_counter() - t0
    report.runtime = runtime
    _write_json(workdir(cfg) / "runtime.json", runtime)
    return report


def run_gradcheck(cfg: Config) -> dict:
    errs = gradcheck(seed=derive_seed(cfg["seed"], "gradcheck"))
    return {"max_rel_error": max(errs.values()), "per_tensor": errs}

