"""``bench`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import OUT_ENV, BenchConfig, ConfigError


def _config(args) -> BenchConfig:
    return BenchConfig.load(args.config).with_overrides(seed=getattr(args, "seed", None),
                                                        out=getattr(args, "out", None))


def cmd_run(args) -> int:
    from .bench import run_benchmark

    cfg = _config(args)
    summary = run_benchmark(cfg, cfg.out_dir())
    for det, m in summary["clean"].items():
        print(f"{det}: clean mAP {m['mAP']:.4f} NDS {m['NDS']:.4f}")
    for f in summary["failures"]:
        print(f"FAILED {f['detector']}/{f['cell']}: {f['error']}", file=sys.stderr)
    print(f"{len(summary['reports'])} reports in {cfg.out_dir()}")
    return 0 if not summary["failures"] else 1


def cmd_blackbox(args) -> int:
    from .bench import run_blackbox

    cfg = _config(args)
    rep = run_blackbox(cfg, cfg.out_dir())
    tm = rep["transfer_matrix"]
    print("source \\ target", *tm["targets"])
    for s, row in zip(tm["sources"], tm["values"]):
        print(s, *(f"{v:.3f}" for v in row))
    return 0


def cmd_temporal(args) -> int:
    from .bench import run_temporal

    cfg = _config(args)
    rep = run_temporal(cfg, cfg.out_dir())
    for mode, trace in rep["bev_error"].items():
        print(mode, " ".join(f"{v:.3f}" for v in trace))
    return 0


def cmd_plot(args) -> int:
    from .plots import emit_plots, load_reports

    out = Path(args.out) if args.out else Path(args.reports) / "plots"
    for p in emit_plots(load_reports(args.reports), out):
        print(p)
    return 0


def cmd_validate(args) -> int:
    from .scene import SceneError, load_scene

    try:
        seq = load_scene(args.scene)
    except SceneError as e:
        print(f"invalid scene: {e}", file=sys.stderr)
        return 1
    n_ann = sum(len(f.annotations) for f in seq.frames)
    print(json.dumps({"scene_id": seq.scene_id, "frames": len(seq), "cameras": len(seq.frames[0].cameras)
                      if len(seq) else 0, "annotations": n_ann}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Adversarial robustness benchmark for "
                                "multi-camera 3D detectors.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", cmd_run, "run the experiment matrix"),
                            ("blackbox", cmd_blackbox, "universal patch transfer matrix"),
                            ("temporal", cmd_temporal, "BEV error under sequence attacks")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./bench_out)")
        if name == "run":
            s.add_argument("--seed", type=int)
        s.set_defaults(func=fn)
    s = sub.add_parser("plot", help="plot persisted reports")
    s.add_argument("--reports", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_plot)
    s = sub.add_parser("validate", help="check a scene directory")
    s.add_argument("--scene", required=True)
    s.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
