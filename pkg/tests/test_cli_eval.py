import json
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aerotrack import io, pipeline
from aerotrack.cli import main
from aerotrack.config import SCHEMA, Config, ConfigError
from aerotrack.pipeline import confusion_matrix
from aerotrack.plot import emit_plot

SMALL = ["synth.n_train=2", "synth.n_train_clutter=1", "synth.n_test=2", "synth.duration=10.0",
         "synth.scores_n_real=20", "seqnet.epochs=2", "seqnet.hidden=8"]


def small_config(workdir, extra=()):
    cfg = Config()
    cfg.apply_overrides([f"paths.workdir={json.dumps(str(workdir))}", *SMALL, *extra])
    return cfg


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    wd = tmp_path_factory.mktemp("small")
    cfg = small_config(wd)
    report = pipeline.run_pipeline(cfg)
    return cfg, wd, report


def _snapshot(wd):
    return {str(p.relative_to(wd)): p.read_bytes() for p in sorted(wd.rglob("*"))
            if p.is_file() and p.name != "runtime.json"}


# -- configuration -------------------------------------------------------------

def test_config_round_trip():
    cfg = Config()
    cfg.apply_overrides(["seed=9", "dynpoints.W=12", "seqnet.uav_weight=3.5", "detect.gap=[9, 11]",
                         "paths.workdir=elsewhere", "centerfix.basis=[[0,0,0],[0,0,2]]"])
    back = Config.loads(cfg.dumps())
    assert back == cfg
    assert back.dumps() == cfg.dumps()
    assert back["paths.workdir"] == "elsewhere"


def test_config_covers_every_module():
    prefixes = {k.split(".")[0] for k in SCHEMA}
    assert {"synth", "dynpoints", "seqnet", "centerfix", "mot", "trajfinish", "seqcls", "paths"} <= prefixes


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError) as exc:
        Config().apply_overrides(["dynpoints.WW=3"])
    assert exc.value.key == "dynpoints.WW"


@pytest.mark.parametrize("item", ["dynpoints.W=1.5", "mot.q=true", "seqcls.adjacency_only=1",
                                  "synth.sensors=3", "seed=\"x\""])
def test_config_type_checked(item):
    with pytest.raises(ConfigError):
        Config().apply_overrides([item])


def test_config_file_errors_name_line(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("# comment\nseed = 3\nmot.gate = nope nope\n")
    with pytest.raises(ConfigError) as exc:
        Config.load(p)
    assert "c.txt:3" in str(exc.value)
    with pytest.raises(FileNotFoundError):
        Config.load(tmp_path / "missing.txt")


def test_int_promotes_to_float():
    cfg = Config()
    cfg.apply_overrides(["mot.q=2"])
    assert cfg["mot.q"] == 2.0 and isinstance(cfg["mot.q"], float)


# -- metrics -------------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(io.UAV_CLASSES), st.sampled_from(io.UAV_CLASSES)),
                min_size=1, max_size=40))
def test_confusion_trace_equals_accuracy(pairs):
    truth = {f"s{i}": t for i, (t, _) in enumerate(pairs)}
    pred = {f"s{i}": p for i, (_, p) in enumerate(pairs)}
    C, acc = confusion_matrix(pred, truth)
    assert sum(C[i][i] for i in range(4)) / sum(map(sum, C)) == acc
    assert acc == sum(t == p for t, p in pairs) / len(pairs)
    for i, cls in enumerate(io.UAV_CLASSES):
        assert sum(C[i]) == sum(t == cls for t, _ in pairs)


def _write_eval_fixture(wd, traj_shift=0.0):
    seq = io.ensure_dir(wd / "test" / "seq_000")
    ts = np.arange(0.0, 5.01, 0.5)
    pos = np.column_stack([ts, 2 * ts, 10 + 0 * ts])
    io.write_gt(seq / "gt.csv", io.GroundTruth(ts, pos, "m300"))
    io.write_traj(seq / "traj.csv", [(t, p + traj_shift, "tracked") for t, p in zip(ts, pos)])
    io.write_tracks(seq / "tracks.csv", [(0, t, p) for t, p in zip(ts, pos)])


def test_eval_perfect_trajectory_is_zero(tmp_path, capsys):
    _write_eval_fixture(tmp_path)
    code = main(["eval", "--set", f"paths.workdir={json.dumps(str(tmp_path))}"])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["pose_mse"] == 0.0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["per_sequence"][0]["mse"] == 0.0


def test_eval_offset_trajectory(tmp_path):
    _write_eval_fixture(tmp_path, traj_shift=0.5)
    rep = pipeline.stage_eval(small_config(tmp_path))
    assert rep.pose_mse == pytest.approx(3 * 0.25)


# -- CLI -----------------------------------------------------------------------

def _err(capsys):
    line = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(line)


def test_cli_unknown_key_exit_2(capsys):
    assert main(["synth", "--set", "bogus.key=1"]) == 2
    err = _err(capsys)
    assert err["code"] == 2 and "bogus.key" in err["message"]


def test_cli_missing_config_file_exit_3(tmp_path, capsys):
    assert main(["synth", "--config", str(tmp_path / "nope.txt")]) == 3
    assert _err(capsys)["error"] == "io"


def test_cli_missing_inputs_exit_3(tmp_path, capsys):
    assert main(["detect", "--set", f"paths.workdir={json.dumps(str(tmp_path))}"]) == 3
    assert "model.json" in _err(capsys)["message"]


def test_cli_gradcheck(capsys):
    assert main(["gradcheck"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["max_rel_error"] < 1e-4


def test_cli_synth_dump_config(tmp_path, capsys):
    args = ["synth", "--dump-config", "--set", f"paths.workdir={json.dumps(str(tmp_path))}"]
    for item in SMALL:
        args += ["--set", item]
    assert main(args) == 0
    cfg = Config.load(tmp_path / "config.txt")
    assert cfg["synth.n_test"] == 2
    assert len(list((tmp_path / "test").iterdir())) == 2


# -- plot ----------------------------------------------------------------------

def _traj_fixture():
    out = []
    for i in range(8):
        flag = "completed" if i in (2, 3, 4) else ("interpolated" if i == 7 else "tracked")
        out.append((0.5 * i, np.array([i, -i, 10 + 0.1 * i]), flag))
    return out


def test_plot_empty_is_valid_svg():
    svg = emit_plot([])
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "<circle" not in svg
    assert "warning" in svg


def test_plot_deterministic_and_counts_completed():
    a = emit_plot(_traj_fixture(), [(0.0, [0, 0, 10]), (3.5, [7, -7, 10.7])])
    b = emit_plot(_traj_fixture(), [(0.0, [0, 0, 10]), (3.5, [7, -7, 10.7])])
    assert a == b
    assert len(re.findall(r'<circle class="completed"', a)) == 3
    assert len(re.findall(r'<circle class="tracked"', a)) == 4
    assert a.count('class="gt"') == 2
    assert a.count('class="completed-curve"') == 1


def test_plot_single_panel_counts():
    svg = emit_plot(_traj_fixture())
    xy = svg.split("</g>")[0]
    assert len(re.findall(r'class="completed"', xy)) == 3


def test_plot_unknown_flag():
    with pytest.raises(ValueError):
        emit_plot([(0.0, [0, 0, 0], "mystery")])


def test_cli_plot(tmp_path, capsys):
    io.write_traj(tmp_path / "traj.csv", _traj_fixture())
    out = tmp_path / "p.svg"
    assert main(["plot", "--traj", str(tmp_path / "traj.csv"), "--out", str(out)]) == 0
    assert out.read_text() == emit_plot(io.read_traj(tmp_path / "traj.csv"))


# -- pipeline ------------------------------------------------------------------

def test_small_pipeline_outputs(small_run):
    cfg, wd, report = small_run
    for name in ("model.json", "bias.json", "train_metrics.json", "scores.jsonl", "labels.csv",
                 "predictions.csv", "report.json", "runtime.json"):
        assert (wd / name).is_file()
    for seq in pipeline.seq_dirs(cfg, "test"):
        for name in ("frames.jsonl", "gt.csv", "detections.jsonl", "tracks.csv", "traj.csv", "traj.svg"):
            assert (seq / name).is_file()
    assert 0.0 <= report.accuracy <= 1.0
    C = report.confusion
    assert sum(C[i][i] for i in range(4)) / sum(map(sum, C)) == report.accuracy
    assert set(json.loads((wd / "runtime.json").read_text())) == set(pipeline.STAGES)


def test_stages_are_restartable(small_run):
    cfg, wd, _ = small_run
    before = _snapshot(wd)
    for stage in ("detect", "track", "finish", "classify"):
        getattr(pipeline, f"stage_{stage}")(cfg)
    pipeline.stage_eval(cfg)
    assert _snapshot(wd) == before


def test_thread_count_does_not_change_outputs(small_run, monkeypatch):
    cfg, wd, _ = small_run
    before = _snapshot(wd)
    monkeypatch.setenv("AEROTRACK_THREADS", "2")
    for stage in ("detect", "track", "finish"):
        getattr(pipeline, f"stage_{stage}")(cfg)
    pipeline.stage_eval(cfg)
    assert _snapshot(wd) == before
