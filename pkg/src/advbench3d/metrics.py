"""nuScenes-style detection scoring plus the robustness summaries built on it.

Boxes are compared by ground-plane center distance. AP follows the devkit
recipe: score-ranked greedy matching, precision sampled at 101 recall
points, recall and precision below 0.1 clipped away.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import wrap_angle

DIST_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)
TP_THRESHOLD = 2.0
MIN_RECALL = 0.1
MIN_PRECISION = 0.1
N_RECALL = 101
TP_NAMES = ("mATE", "mASE", "mAOE", "mAVE", "mAAE")


@dataclass(frozen=True)
class EvalBox:
    """A box in evaluation form: one label and one score per box."""

    sample_id: object
    label: str
    center: tuple
    size: tuple = (1.0, 1.0, 1.0)
    yaw: float = 0.0
    velocity: tuple = (0.0, 0.0)
    score: float = 1.0
    attribute: str | None = None


@dataclass(frozen=True)
class TPErrors:
    mATE: float
    mASE: float
    mAOE: float
    mAVE: float
    mAAE: float | None = None

    def as_dict(self) -> dict:
        return {name: getattr(self, name) for name in TP_NAMES}


@dataclass
class EvalReport:
    """Metrics for one benchmark cell, swept over a severity axis."""

    config_hash: str
    seed: int
    attack: str
    severity_axis: str
    per_severity: list = field(default_factory=list)
    transfer_matrix: dict | None = None
    extra: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "attack": self.attack,
            "severity_axis": self.severity_axis,
            "per_severity": self.per_severity,
        }
        if self.transfer_matrix is not None:
            d["transfer_matrix"] = self.transfer_matrix
        if self.extra:
            d.update(self.extra)
        return d


def center_distance(a: EvalBox, b: EvalBox) -> float:
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])


def _ranked(dets, label):
    idx = [i for i, d in enumerate(dets) if d.label == label]
    # stable: equal scores keep input order
    return sorted(idx, key=lambda i: -dets[i].score)


def greedy_match(dets, gts, label, threshold):
    """Score-ranked greedy matching for one class.

    Returns ``(order, is_tp, pairs, n_gt)`` where ``order`` lists detection
    indices by descending score, ``is_tp`` flags each ranked detection and
    ``pairs`` holds the ``(det_index, gt_index)`` matches.
    """
    gt_idx = [j for j, g in enumerate(gts) if g.label == label]
    by_sample: dict = {}
    for j in gt_idx:
        by_sample.setdefault(gts[j].sample_id, []).append(j)
    taken = set()
    order = _ranked(dets, label)
    is_tp = np.zeros(len(order), dtype=bool)
    pairs = []
    for k, i in enumerate(order):
        best, best_d = None, math.inf
        for j in by_sample.get(dets[i].sample_id, ()):
            if j in taken:
                continue
            d = center_distance(dets[i], gts[j])
            if d < best_d:
                best, best_d = j, d
        if best is not None and best_d < threshold:
            taken.add(best)
            is_tp[k] = True
            pairs.append((i, best))
    return order, is_tp, pairs, len(gt_idx)


def precision_recall(is_tp: np.ndarray, n_gt: int):
    """Precision sampled on the 101-point recall grid (zero past max recall)."""
    grid = np.linspace(0.0, 1.0, N_RECALL)
    if n_gt == 0 or len(is_tp) == 0:
        return grid, np.zeros(N_RECALL)
    tp = np.cumsum(is_tp).astype(np.float64)
    fp = np.cumsum(~is_tp).astype(np.float64)
    prec = tp / (tp + fp)
    rec = tp / float(n_gt)
    return grid, np.interp(grid, rec, prec, right=0.0)


def ap_from_precision(prec: np.ndarray) -> float:
    p = np.maximum(np.asarray(prec[int(round(100 * MIN_RECALL)) + 1:], dtype=np.float64), MIN_PRECISION)
    # same as mean(max(p - 0.1, 0)) / 0.9, but exact for a perfect detector
    return (math.fsum(p) / len(p) - MIN_PRECISION) / (1.0 - MIN_PRECISION)


def average_precision(dets, gts, label, threshold) -> float | None:
    """AP of one class at one center-distance threshold.

    None when the class appears in neither detections nor ground truth.
    """
    if not any(d.label == label for d in dets) and not any(g.label == label for g in gts):
        return None
    _, is_tp, _, n_gt = greedy_match(dets, gts, label, threshold)
    if n_gt == 0:
        return 0.0
    _, prec = precision_recall(is_tp, n_gt)
    return ap_from_precision(prec)


def mean_ap(dets, gts, classes, thresholds=DIST_THRESHOLDS):
    """mAP over classes and thresholds; undefined classes are skipped."""
    per_class = {}
    for label in classes:
        aps = [average_precision(dets, gts, label, th) for th in thresholds]
        if aps[0] is None:
            continue
        per_class[label] = {f"{th:g}": ap for th, ap in zip(thresholds, aps)}
    if not per_class:
        return 0.0, per_class
    means = [float(np.mean(list(v.values()))) for v in per_class.values()]
    return float(np.mean(means)), per_class


def match_at(dets, gts, classes, threshold=TP_THRESHOLD) -> list:
    pairs = []
    for label in classes:
        pairs.extend(greedy_match(dets, gts, label, threshold)[2])
    return pairs


def _pair_errors(d: EvalBox, g: EvalBox):
    ate = center_distance(d, g)
    ratio = 1.0
    for ps, gs in zip(d.size, g.size):
        ratio *= min(ps, gs) / max(ps, gs)
    ase = 1.0 - ratio
    aoe = abs(float(wrap_angle(d.yaw - g.yaw)))
    ave = math.hypot(d.velocity[0] - g.velocity[0], d.velocity[1] - g.velocity[1])
    aae = None if g.attribute is None else float(d.attribute != g.attribute)
    return ate, ase, aoe, ave, aae


def tp_errors(dets, gts, matches=None, classes=None) -> TPErrors:
    """Mean TP errors over matched pairs, averaged per class then across classes.

    ``matches`` are ``(det_index, gt_index)`` pairs found at the 2 m
    threshold (computed here when omitted). A class with ground truth but
    no match scores 1 on every error, as does an input with no match at all.
    AAE is None when no ground-truth box carries an attribute.
    """
    if classes is None:
        classes = sorted({g.label for g in gts})
    if matches is None:
        matches = match_at(dets, gts, classes)
    attributes = any(g.attribute is not None for g in gts)
    by_class: dict = {}
    for i, j in matches:
        by_class.setdefault(gts[j].label, []).append(_pair_errors(dets[i], gts[j]))
    rows = []
    for label in classes:
        if not any(g.label == label for g in gts):
            continue
        errs = by_class.get(label)
        if not errs:
            rows.append((1.0, 1.0, 1.0, 1.0, 1.0))
            continue
        cols = list(zip(*errs))
        aae = [v for v in cols[4] if v is not None]
        rows.append(
            tuple(float(np.mean(c)) for c in cols[:4]) + (float(np.mean(aae)) if aae else 1.0,)
        )
    if not rows:
        return TPErrors(1.0, 1.0, 1.0, 1.0, 1.0 if attributes else None)
    m = np.mean(np.array(rows), axis=0)
    return TPErrors(float(m[0]), float(m[1]), float(m[2]), float(m[3]),
                    float(m[4]) if attributes else None)


def nds(mAP: float, tp: TPErrors) -> float:
    """nuScenes detection score; drops the AAE term when attributes are off."""
    errors = [tp.mATE, tp.mASE, tp.mAOE, tp.mAVE]
    if tp.mAAE is not None:
        errors.append(tp.mAAE)
    score = 5.0 * mAP + sum(1.0 - min(1.0, e) for e in errors)
    return score / (5.0 + len(errors))


def evaluate(dets, gts, classes) -> dict:
    """Full metric bundle for one detection set."""
    mAP, per_class = mean_ap(dets, gts, classes)
    tp = tp_errors(dets, gts, classes=classes)
    return {
        "mAP": mAP,
        "NDS": nds(mAP, tp),
        "tp_errors": tp.as_dict(),
        "per_class_ap": per_class,
        "attributes": tp.mAAE is not None,
    }


def severity_average(grid: dict, exclude=("blackbox",), expected: dict | None = None) -> float:
    """Unweighted mean over every (attack type, severity) cell.

    ``grid`` maps attack type to ``{severity: value}``; attack types named in
    ``exclude`` are skipped. ``expected`` optionally gives the severity axis
    each attack type must cover. Missing or empty cells raise ``ValueError``.
    """
    values, missing = [], []
    for attack, cells in grid.items():
        if attack in exclude:
            continue
        want = list(expected.get(attack, cells)) if expected else list(cells)
        if not want:
            missing.append(f"{attack}: no severities")
        for sev in want:
            v = cells.get(sev)
            if v is None or (isinstance(v, float) and math.isnan(v)):
                missing.append(f"{attack}@{sev}")
            else:
                values.append(float(v))
    if missing:
        raise ValueError("ragged severity grid, missing cells: " + ", ".join(missing))
    if not values:
        raise ValueError("severity grid is empty")
    return float(np.mean(values))


def relative_drop(baseline: float, adversarial: float) -> float:
    if baseline <= 0:
        raise ValueError("relative drop is undefined for a non-positive baseline")
    return (baseline - adversarial) / baseline


def transfer_matrix(adv_map: dict, baseline: dict, sources, targets) -> dict:
    """Relative drops, rows = patch source, columns = attacked target.

    ``adv_map[(source, target)]`` is the target's mAP under the source's
    patch and ``baseline[target]`` its mAP under a random patch.
    """
    rows = []
    for s in sources:
        row = []
        for t in targets:
            if t not in baseline:
                raise ValueError(f"missing random-patch baseline for target {t!r}")
            row.append(relative_drop(baseline[t], adv_map[(s, t)]))
        rows.append(row)
    return {"sources": list(sources), "targets": list(targets), "values": rows}


def bev_feature_error(adv_trace, benign_trace) -> list:
    """Per-frame relative L1 error between two aligned BEV feature traces."""
    if len(adv_trace) != len(benign_trace):
        raise ValueError("BEV traces differ in length")
    out = []
    for a, b in zip(adv_trace, benign_trace):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError(f"BEV feature shape mismatch {a.shape} vs {b.shape}")
        out.append(float(np.abs(a - b).sum() / (np.abs(b).sum() + 1e-12)))
    return out
