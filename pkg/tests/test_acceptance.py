"""One test per acceptance criterion; each records a PASS/FAIL line for the run summary."""
import json
import shutil
import time

import numpy as np
import pytest

from aerotrack import io, pipeline
from aerotrack.centerfix import apply_bias, fit_bias
from aerotrack.config import Config
from aerotrack.seqcls import ClassifyConfig, classify, frame_accuracy
from aerotrack.seqnet import gradcheck
from aerotrack.synth import ScoreStreamConfig, generate_score_stream
from aerotrack.trajfinish import ar_fit, eval_at, smooth_bspline
from oracles import run_against_oracle, z2_fixture

RESULTS = []


def record(name, ok, detail):
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def _cfg(workdir, *overrides):
    cfg = Config()
    cfg.apply_overrides([f"paths.workdir={json.dumps(str(workdir))}", *overrides])
    return cfg


def _snapshot(wd):
    return {str(p.relative_to(wd)): p.read_bytes() for p in sorted(wd.rglob("*"))
            if p.is_file() and p.name != "runtime.json"}


@pytest.fixture(scope="module")
def benchmark_run(tmp_path_factory):
    """Default scenario with a 2 s detection gap, 10 test seeds."""
    wd = tmp_path_factory.mktemp("bench")
    cfg = _cfg(wd, "detect.gap=[9, 11]")
    t0 = time.perf_counter()
    report = pipeline.run_pipeline(cfg)
    return cfg, wd, report, time.perf_counter() - t0


def test_kalman_oracle_equivalence():
    t0 = time.perf_counter()
    worst = max(run_against_oracle(seed, steps=50) for seed in range(100))
    dt = time.perf_counter() - t0
    record("kalman oracle", worst < 1e-9 and dt < 1.0,
           f"max abs diff {worst:.2e} over 100x50 steps in {dt:.2f} s")


def test_gradient_checks():
    t0 = time.perf_counter()
    errs = gradcheck(seed=0, hidden=4, W=5)
    dt = time.perf_counter() - t0
    worst = max(errs, key=errs.get)
    groups = {k.split(".")[0] for k in errs}
    record("gradient checks", errs[worst] < 1e-4 and dt < 30 and groups == {"lstm", "mlp", "reg"},
           f"{len(errs)} tensors, max rel err {errs[worst]:.2e} ({worst}) in {dt:.2f} s")


def test_ar_annihilation():
    t = np.arange(30.0)
    errs = {}
    for name, x in {"constant": 0 * t + 3.5, "linear": 2 * t - 1, "quadratic": 0.5 * t ** 2 - t + 2}.items():
        m = ar_fit(x)
        errs[name] = max(abs(m.predict_next(x[k - 3:k, None])[0] - x[k]) for k in range(3, 30))
    worst = max(errs.values())
    record("AR annihilation", worst < 1e-6,
           ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))


def test_polynomial_bias_recovery():
    pred, true = z2_fixture(200)
    m = fit_bias(pred, true)
    c = m.coefficient((0, 0, 2), 2)
    before = np.mean(np.sum((pred - true) ** 2, axis=1))
    after = np.mean(np.sum((apply_bias(m, pred) - true) ** 2, axis=1))
    drop = 1 - after / before
    record("bias recovery", abs(c - 0.01) <= 1e-6 and drop >= 0.95,
           f"z^2 coefficient {c:.9f}, MSE drop {100 * drop:.4f}%")


def test_bspline_smoothing():
    rng = np.random.default_rng(2024)
    ts = np.linspace(0, 20, 200)
    clean = np.column_stack([5 * np.sin(0.3 * ts), 3 * np.cos(0.2 * ts), 20 + np.sin(0.5 * ts)])
    noisy = clean + rng.normal(0, 0.1, clean.shape)
    pos, _ = eval_at(smooth_bspline(ts, noisy, 1.0, 1e-2), ts)
    rms = np.sqrt(np.mean((pos - clean) ** 2))
    record("B-spline smoothing", rms <= 0.7 * 0.1, f"RMS {rms:.4f} vs sigma 0.1 ({100 * (1 - rms / 0.1):.1f}% lower)")


def test_end_to_end_benchmark(benchmark_run):
    cfg, wd, report, dt = benchmark_run
    det = report.detector
    n_seq = len(report.per_sequence)
    ok = (report.pose_mse is not None and report.pose_mse <= 0.25 and n_seq == 10
          and det["heldout_accuracy"] >= 0.95 and det["heldout_recall"] >= 0.90 and dt < 300)
    record("end-to-end benchmark", ok,
           f"pose MSE {report.pose_mse:.4f} m^2 over {n_seq} seeds, detector acc "
           f"{det['heldout_accuracy']:.4f} recall {det['heldout_recall']:.4f}, {dt:.1f} s")


def test_clutter_rejection(benchmark_run, tmp_path):
    _, wd, _, _ = benchmark_run
    cfg = _cfg(tmp_path, "synth.test_uav_present=false", "synth.scores_n_real=5")
    pipeline.stage_synth(cfg)
    for name in ("model.json", "bias.json"):
        shutil.copy(wd / name, tmp_path / name)
    pipeline.stage_detect(cfg)
    pipeline.stage_track(cfg)
    counts = [len({tid for tid, _, _ in io.read_tracks(p / "tracks.csv")})
              for p in pipeline.seq_dirs(cfg, "test")]
    clean = sum(c == 0 for c in counts)
    record("clutter rejection", len(counts) == 10 and clean >= 9,
           f"{clean}/10 pure-clutter sequences without confirmed tracks (counts {counts})")


def test_soft_vote_lift():
    records, labels = generate_score_stream(11, ScoreStreamConfig(n_real=500, frame_accuracy=0.6))
    fa = frame_accuracy(records, labels)

    def acc(k):
        out = classify(records, ClassifyConfig(k=k))
        return float(np.mean([c == labels[s] for s, c, _ in out]))

    k5, k1 = acc(5), acc(1)
    record("soft-vote lift", k5 >= 0.95 and k1 > fa,
           f"frame acc {fa:.4f}, k=1 {k1:.4f}, k=5 {k5:.4f}")


def test_determinism(benchmark_run, tmp_path):
    _, wd, _, _ = benchmark_run
    cfg = _cfg(tmp_path, "detect.gap=[9, 11]")
    pipeline.run_pipeline(cfg)
    a, b = _snapshot(wd), _snapshot(tmp_path)
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    diff = sorted(k for k in a if a.get(k) != b.get(k))
    record("determinism", same, f"{len(a)} files byte-identical" if same else f"differs: {diff[:5]}")
