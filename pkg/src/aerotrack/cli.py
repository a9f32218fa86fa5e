"""Command line entry point: ``aerotrack <subcommand> [--config PATH] [--set key=value ...]``.

Exit codes: 0 ok, 2 configuration error, 3 input/output error, 4 numeric failure.
Errors are printed to stderr as one JSON line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import Config, ConfigError
from .core import MissingTimestampError, NumericError
from .io import FormatError, read_gt, read_traj
from .plot import emit_plot
from .seqnet import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


def _stage(name):
    def run(cfg, args):
        getattr(pipeline, f"stage_{name}")(cfg)
        return {"stage": name, "workdir": str(pipeline.workdir(cfg))}
    return run


def _eval(cfg, args):
    rep = pipeline.stage_eval(cfg)
    return {"pose_mse": rep.pose_mse, "accuracy": rep.accuracy}


def _pipeline(cfg, args):
    rep = pipeline.run_pipeline(cfg)
    return {"pose_mse": rep.pose_mse, "accuracy": rep.accuracy,
            "detector_accuracy": rep.detector.get("heldout_accuracy"),
            "detector_recall": rep.detector.get("heldout_recall"),
            "runtime": {k: round(v, 3) for k, v in rep.runtime.items()}}


def _gradcheck(cfg, args):
    return pipeline.run_gradcheck(cfg)


def _plot(cfg, args):
    traj = read_traj(args.traj)
    gt = read_gt(args.gt).samples() if args.gt else []
    svg = emit_plot(traj, gt)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(svg)
        return {"written": args.out}
    sys.stdout.write(svg)
    return None


COMMANDS = {
    "synth": _stage("synth"),
    "train": _stage("train"),
    "detect": _stage("detect"),
    "track": _stage("track"),
    "finish": _stage("finish"),
    "classify": _stage("classify"),
    "eval": _eval,
    "pipeline": _pipeline,
    "gradcheck": _gradcheck,
    "plot": _plot,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aerotrack", description="UAV detection, tracking and typing pipeline")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="dotted-key configuration file")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "plot":
            p.add_argument("--traj", required=True)
            p.add_argument("--gt")
            p.add_argument("--out")
        if name == "synth":
            p.add_argument("--dump-config", action="store_true",
                           help="also write the effective configuration to <workdir>/config.txt")
    return ap


def _fail(code: int, kind: str, exc: BaseException) -> int:
    msg = str(exc) if not isinstance(exc, KeyError) else str(exc.args[0] if exc.args else exc)
    sys.stderr.write(json.dumps({"error": kind, "code": code, "message": msg}) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = Config.load(args.config) if args.config else Config()
        cfg.apply_overrides(args.overrides)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (FileNotFoundError, OSError) as exc:
        return _fail(EXIT_IO, "io", exc)
    try:
        if getattr(args, "dump_config", False):
            d = pipeline.io.ensure_dir(pipeline.workdir(cfg))
            (d / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
        result = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (FileNotFoundError, FormatError, CheckpointError, OSError) as exc:
        return _fail(EXIT_IO, "io", exc)
    except (NumericError, MissingTimestampError, ArithmeticError, FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numeric", exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, "value", exc)
    if result is not None:
        sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
