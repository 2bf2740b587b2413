"""Run a small experiment matrix and re-plot it from the saved reports.

This is the library route to what ``bench run`` followed by ``bench plot``
does on the command line. The sweep is kept short (6 scenes) so it finishes
in about a minute; ``demos/bench_config.json`` has the full-size version.

    python3 demos/severity_sweep.py [outdir]
"""

import sys
from pathlib import Path

from advbench3d.bench import run_benchmark
from advbench3d.config import BenchConfig
from advbench3d.plots import emit_plots, load_reports

CONFIG = {
    "dataset": {"generator": {"n_scenes": 6}},
    "detectors": ["toy-a", "toy-b"],
    "attacks": [{"engine": "pgd", "grid": [1, 5, 20]},
                {"engine": "patch", "grid": [0.1, 0.3], "params": {"iterations": 20}}],
    "objectives": ["cls"],
    "seed": 0,
}


def main(outdir="demo_out/sweep"):
    outdir = Path(outdir)
    cfg = BenchConfig.from_dict(CONFIG)
    summary = run_benchmark(cfg, outdir)
    for det, m in summary["clean"].items():
        print(f"{det}: clean mAP {m['mAP']:.3f}, severity-averaged mAP "
              f"{summary['severity_average'][det]['mAP']:.3f}")

    # everything below only reads JSON; no detector is run again
    for path in emit_plots(load_reports(outdir), outdir / "plots"):
        print("wrote", path)
    print((outdir / "plots" / "severity.csv").read_text())


if __name__ == "__main__":
    main(*sys.argv[1:])
