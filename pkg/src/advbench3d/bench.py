"""Deterministic experiment matrix: detectors x attacks x objectives x severities.

Every cell writes one JSON report; all JSON goes through the canonical
serializer so reruns with the same config are byte-identical.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import metrics
from .attacks import (AttackBudget, apply_universal, attack_sequence, make_engine, random_patch,
                      train_universal_patch)
from .config import BenchConfig, ConfigError, cell_seed
from .detectors import make_detector
from .geometry import box_corners, project_box
from .objectives import Objective, normalize_scores
from .scene import canonical_json, dataset_stats, load_scene
from .synth import synth_generate

log = logging.getLogger(__name__)

GENERATOR_DEFAULTS = {"n_scenes": 20, "n_frames": 1, "n_cameras": 3, "n_objects": 6}
BLACKBOX_DEFAULTS = {"train_scenes": 20, "test_scenes": 20, "epochs": 3, "scale": 0.3}
TEMPORAL_DEFAULTS = {"detector": "toy-temporal", "n_sequences": 1, "n_frames": 11, "n_objects": 6,
                     "engine": "pgd", "iterations": 10, "attack_frame": None}
# scene seeds for the different splits live in disjoint ranges
SPLIT_OFFSET = {"eval": 0, "train": 50_000, "test": 70_000, "temporal": 90_000}
SEED_STRIDE = 100_003


def scene_seed(seed: int, split: str, i: int) -> int:
    return seed * SEED_STRIDE + SPLIT_OFFSET[split] + i


def generate_split(seed, split, n, n_frames=1, n_cameras=3, n_objects=6) -> list:
    return [synth_generate(scene_seed(seed, split, i), n_frames=n_frames, n_cameras=n_cameras,
                           n_objects=n_objects) for i in range(n)]


def load_dataset(cfg: BenchConfig, split: str = "eval", n: int | None = None) -> list:
    """Scenes for a split, from disk or from the generator."""
    if "path" in cfg.dataset:
        root = Path(cfg.dataset["path"])
        dirs = [root] if (root / "scene.json").exists() else sorted(
            p for p in root.iterdir() if (p / "scene.json").exists())
        if not dirs:
            raise ConfigError(f"no scene directories under {root}")
        seqs = [load_scene(d) for d in dirs]
        if split == "eval":
            return seqs
        half = len(seqs) // 2
        return seqs[:half] if split == "train" else seqs[half:]
    gen = {**GENERATOR_DEFAULTS, **cfg.dataset["generator"]}
    count = gen["n_scenes"] if n is None else n
    return generate_split(cfg.seed, split, count, gen["n_frames"], gen["n_cameras"], gen["n_objects"])


# -- evaluation --------------------------------------------------------------


def visible(ann, cameras) -> bool:
    bc = box_corners(ann)
    return any(project_box(bc, cam).center_visible for cam in cameras)


def eval_boxes(dets, classes, sample_id) -> list:
    out = []
    for d in dets:
        s = normalize_scores(d.class_scores)
        k = int(np.argmax(s))
        out.append(metrics.EvalBox(sample_id, classes[k], tuple(d.location), tuple(d.size),
                                   float(d.yaw), tuple(d.velocity), float(s[k])))
    return out


def gt_boxes(frame, sample_id) -> list:
    return [metrics.EvalBox(sample_id, a.class_label, tuple(a.center), tuple(a.size), a.yaw,
                            tuple(a.velocity), 1.0, a.attribute)
            for a in frame.annotations if visible(a, frame.cameras)]


def evaluate_frames(detector, frames_by_scene) -> dict:
    """Metrics over a list of per-scene frame lists, threading detector state."""
    D, G = [], []
    for s, frames in enumerate(frames_by_scene):
        state = None
        for t, frame in enumerate(frames):
            dets, state = detector.forward(frame, state)
            sid = f"{s}:{t}"
            D.extend(eval_boxes(dets, detector.classes, sid))
            G.extend(gt_boxes(frame, sid))
    return metrics.evaluate(D, G, detector.classes)


def _objective(name):
    return Objective(name)


def _engine_for(spec, objective, severity):
    params = dict(spec.params)
    if spec.axis == "iterations":
        budget = AttackBudget(int(severity), early_stop=bool(params.pop("early_stop", False)))
        if spec.engine == "fgsm":
            return make_engine("fgsm", _objective(objective), **params)
        if spec.engine == "cw":
            return make_engine("cw", budget=budget, **params)
        return make_engine(spec.engine, _objective(objective), budget=budget, **params)
    budget = AttackBudget(int(params.pop("iterations", 50)), bool(params.pop("early_stop", False)))
    return make_engine("patch", _objective(objective), scale=float(severity), budget=budget, **params)


def run_cell(detector, seqs, spec, objective, severity, seed) -> dict:
    engine = _engine_for(spec, objective, severity)
    adv, its, succ, linf = [], [], [], []
    for i, seq in enumerate(seqs):
        res = attack_sequence(seq, detector, engine, "continuous", seed=seed + 1000 * i)
        adv.append([r.frame for r in res.results])
        for r in res.results:
            its.append(r.iterations)
            succ.append(r.success)
            linf.append(r.perturbation.linf if r.perturbation else 0.0)
    m = evaluate_frames(detector, adv)
    m["attack_stats"] = {"mean_iterations": float(np.mean(its)), "success_rate": float(np.mean(succ)),
                         "max_linf": float(np.max(linf))}
    return m


def cells(cfg: BenchConfig) -> list:
    """Experiment matrix coordinates ``(detector, spec, objective, severity)`` in run order."""
    out = []
    for det in cfg.detectors:
        for spec in cfg.attacks:
            objectives = ("cw",) if spec.engine == "cw" else cfg.objectives
            for obj in objectives:
                for sev in spec.grid:
                    out.append((det, spec, obj, sev))
    return out


def _sev_key(sev) -> str:
    return f"{sev:g}" if isinstance(sev, float) else str(sev)


def cell_name(spec, objective, severity) -> str:
    return f"{spec.engine}-{objective}-{spec.axis}={_sev_key(severity)}"


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj) + "\n")


def run_benchmark(cfg: BenchConfig, out: Path | None = None) -> dict:
    """Run clean baselines and every attack cell; returns the summary dict.

    A failing cell is logged into ``failures`` and the run carries on.
    """
    out = Path(out or cfg.out_dir())
    chash = cfg.hash()
    seqs = load_dataset(cfg)
    write_json(out / "config.json", cfg.to_dict() | {"out": None, "config_hash": chash})
    detectors, failures, files = {}, [], []
    clean, grids = {}, {}
    for det_id in cfg.detectors:
        detectors[det_id] = make_detector(det_id)
        m = evaluate_frames(detectors[det_id], [list(s.frames) for s in seqs])
        clean[det_id] = m
        rep = metrics.EvalReport(chash, cfg.seed, "clean", "none", [{"severity": None, **m}],
                                 extra={"detector": det_id, "objective": None})
        rel = f"reports/{det_id}/clean.json"
        write_json(out / rel, rep.to_dict())
        files.append(rel)
    for det_id, spec, obj, sev in cells(cfg):
        name = cell_name(spec, obj, sev)
        seed = cell_seed(cfg.seed, det_id, spec.engine, obj, _sev_key(sev))
        log.info("cell %s/%s", det_id, name)
        try:
            m = run_cell(detectors[det_id], seqs, spec, obj, sev, seed)
        except Exception as e:  # isolate the cell, keep the run going
            failures.append({"detector": det_id, "cell": name, "error": f"{type(e).__name__}: {e}"})
            log.warning("cell %s/%s failed: %s", det_id, name, e)
            continue
        rep = metrics.EvalReport(chash, cfg.seed, spec.engine, spec.axis, [{"severity": sev, **m}],
                                 extra={"detector": det_id, "objective": obj, "cell_seed": seed})
        rel = f"reports/{det_id}/{name}.json"
        write_json(out / rel, rep.to_dict())
        files.append(rel)
        grids.setdefault(det_id, {}).setdefault(f"{spec.engine}-{obj}", {})[_sev_key(sev)] = m
    summary = {"config_hash": chash, "seed": cfg.seed, "reports": files, "failures": failures,
               "clean": {d: {"mAP": m["mAP"], "NDS": m["NDS"]} for d, m in clean.items()},
               "severity_average": {}}
    for det_id, grid in grids.items():
        entry = {}
        for key in ("mAP", "NDS"):
            try:
                entry[key] = metrics.severity_average(
                    {a: {s: v[key] for s, v in cells_.items()} for a, cells_ in grid.items()})
            except ValueError as e:
                entry[key] = None
                failures.append({"detector": det_id, "cell": "severity_average", "error": str(e)})
        summary["severity_average"][det_id] = entry
    write_json(out / "summary.json", summary)
    return summary


def run_blackbox(cfg: BenchConfig, out: Path | None = None) -> dict:
    """Universal patches per source detector, evaluated on every target.

    The random-patch baseline is evaluated once per target and reused for
    every source row.
    """
    out = Path(out or cfg.out_dir())
    bb = {**BLACKBOX_DEFAULTS, **cfg.blackbox}
    ids = list(cfg.detectors)
    warnings = []
    if len(ids) < 2:
        warnings.append("only one detector: the transfer matrix is 1x1")
        log.warning(warnings[-1])
    train = load_dataset(cfg, "train", bb["train_scenes"])
    test = load_dataset(cfg, "test", bb["test_scenes"])
    stats = dataset_stats(train)
    dets = {d: make_detector(d) for d in ids}
    rnd = random_patch(stats, cell_seed(cfg.seed, "random-patch"))
    write_json(out / "blackbox/patches/random.json", {"artifact": rnd.to_json()})

    def patched(art):
        return [[apply_universal(f, art, bb["scale"]) for f in s.frames] for s in test]

    rnd_frames = patched(rnd)
    clean_map = {t: evaluate_frames(dets[t], [list(s.frames) for s in test])["mAP"] for t in ids}
    baseline = {t: evaluate_frames(dets[t], rnd_frames)["mAP"] for t in ids}
    adv_map, traces = {}, {}
    for src in ids:
        art = train_universal_patch(train, dets[src], epochs=bb["epochs"],
                                    seed=cell_seed(cfg.seed, "universal", src), scale=bb["scale"],
                                    stats=stats)
        (out / "blackbox/patches").mkdir(parents=True, exist_ok=True)
        art.save(out / f"blackbox/patches/{src}.json")
        traces[src] = art.trace
        frames = patched(art)
        for t in ids:
            adv_map[(src, t)] = evaluate_frames(dets[t], frames)["mAP"]
    report = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "attack": "universal_patch",
        "transfer_matrix": metrics.transfer_matrix(adv_map, baseline, ids, ids),
        "adversarial_mAP": {"sources": ids, "targets": ids,
                            "values": [[adv_map[(s, t)] for t in ids] for s in ids]},
        "random_patch_mAP": baseline,
        "clean_mAP": clean_map,
        "training_gain": traces,
        "warnings": warnings,
    }
    write_json(out / "blackbox/transfer.json", report)
    return report


def run_temporal(cfg: BenchConfig, out: Path | None = None) -> dict:
    """Benign, continuous and single-frame attacks on sequences for a temporal detector."""
    out = Path(out or cfg.out_dir())
    tc = {**TEMPORAL_DEFAULTS, **cfg.temporal}
    if tc["n_frames"] < 2:
        raise ConfigError("temporal scenarios need sequences of at least 2 frames")
    det = make_detector(tc["detector"])
    if not det.temporal:
        raise ConfigError(f"detector {tc['detector']!r} is not temporal")
    if "path" in cfg.dataset:
        seqs = load_dataset(cfg)
    else:
        gen = {**GENERATOR_DEFAULTS, **cfg.dataset["generator"]}
        seqs = generate_split(cfg.seed, "temporal", tc["n_sequences"], tc["n_frames"],
                              gen["n_cameras"], tc["n_objects"])
    if any(len(s) < 2 for s in seqs):
        raise ConfigError("temporal scenarios need sequences of at least 2 frames")
    engine = make_engine(tc["engine"], Objective("cls"), budget=AttackBudget(int(tc["iterations"])))
    runs = {"benign": [], "continuous": [], "single_frame": []}
    errors = {"continuous": [], "single_frame": []}
    for i, seq in enumerate(seqs):
        k = len(seq) - 1 if tc["attack_frame"] is None else int(tc["attack_frame"])
        seed = cell_seed(cfg.seed, "temporal", i)
        res = {m: attack_sequence(seq, det, engine, m, k=k, seed=seed) for m in runs}
        for m, r in res.items():
            runs[m].append([x.frame for x in r.results])
        for m in errors:
            errors[m].append(metrics.bev_feature_error(res[m].bev_trace, res["benign"].bev_trace))
    n = min(len(s) for s in seqs)
    report = {
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
        "attack": "temporal",
        "detector": tc["detector"],
        "frames": list(range(1, n + 1)),
        "bev_error": {m: [float(np.mean([e[t] for e in errs])) for t in range(n)]
                      for m, errs in errors.items()},
        "metrics": {m: evaluate_frames(det, frames) for m, frames in runs.items()},
    }
    write_json(out / "temporal/temporal.json", report)
    return report

