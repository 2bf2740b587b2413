"""Re-plot persisted benchmark reports; never runs a detector."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .scene import q9  # noqa: E402

# fixed metadata keeps PNG bytes reproducible
_PNG_META = {"Software": None}


def load_reports(root) -> list:
    """Every cell report under ``root/reports`` plus blackbox/temporal reports if present."""
    root = Path(root)
    out = []
    for p in sorted((root / "reports").rglob("*.json")):
        out.append(json.loads(p.read_text()))
    for extra in ("blackbox/transfer.json", "temporal/temporal.json"):
        if (root / extra).exists():
            out.append(json.loads((root / extra).read_text()))
    if not out:
        raise FileNotFoundError(f"no reports under {root}")
    return out


def severity_rows(reports) -> list:
    """Flatten cell reports to ``(attack, objective, detector, axis, severity, mAP, NDS)``."""
    rows = []
    for r in reports:
        if "per_severity" not in r or r.get("attack") == "clean":
            continue
        for entry in r["per_severity"]:
            rows.append((r["attack"], r.get("objective"), r.get("detector"), r["severity_axis"],
                         entry["severity"], entry["mAP"], entry["NDS"]))
    return rows


def emit_plots(reports, outdir) -> list:
    """Line charts of mAP per (attack, objective), a transfer heat map and a BEV-error chart.

    Writes ``severity.csv`` next to the images and returns the written paths.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    rows = severity_rows(reports)
    groups: dict = {}
    for row in rows:
        groups.setdefault((row[0], row[1]), []).append(row)
    for key, grp in groups.items():
        axes = {r[3] for r in grp}
        if len(axes) > 1:
            raise ValueError(f"mixed severity axes for {key}: {sorted(axes)}")
    csv_path = outdir / "severity.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["attack", "objective", "detector", "axis", "severity", "mAP", "NDS"])
        for r in sorted(rows, key=lambda r: (r[0], str(r[1]), str(r[2]), float(r[4]))):
            w.writerow([*r[:5], repr(q9(r[5])), repr(q9(r[6]))])
    written.append(csv_path)
    for (attack, objective), grp in sorted(groups.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for det in sorted({r[2] for r in grp}):
            pts = sorted((float(r[4]), r[5]) for r in grp if r[2] == det)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=det)
        ax.set_xlabel(grp[0][3])
        ax.set_ylabel("mAP")
        ax.set_title(f"{attack} ({objective})")
        ax.legend()
        fig.tight_layout()
        path = outdir / f"{attack}-{objective}.png"
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
        written.append(path)
    for r in reports:
        if "transfer_matrix" in r and r.get("attack") == "universal_patch":
            written.append(_heatmap(r["transfer_matrix"], outdir / "transfer.png"))
        if r.get("attack") == "temporal":
            written.append(_bev_plot(r, outdir / "bev_error.png"))
    return written


def _heatmap(tm, path) -> Path:
    fig, ax = plt.subplots(figsize=(3.8, 3.2))
    im = ax.imshow(tm["values"], cmap="viridis")
    ax.set_xticks(range(len(tm["targets"])), tm["targets"])
    ax.set_yticks(range(len(tm["sources"])), tm["sources"])
    ax.set_xlabel("target")
    ax.set_ylabel("patch source")
    for i, row in enumerate(tm["values"]):
        for j, v in enumerate(row):
            ax.text(j, i, f"{v:.2f}", ha="center", va="center", color="w")
    fig.colorbar(im)
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path


def _bev_plot(rep, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for mode, trace in rep["bev_error"].items():
        ax.plot(rep["frames"], trace, marker="o", label=mode)
    ax.set_xlabel("frame")
    ax.set_ylabel("relative BEV feature error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata=_PNG_META)
    plt.close(fig)
    return path
