"""Prediction-to-target matching and the adversarial loss objectives.

Every objective returns ``(loss, LossSpec)``. The spec is self-contained:
it pins which anchors are attacked and carries the targets, so a detector
oracle can re-evaluate the same scalar on a perturbed input and
differentiate it through its own heads. Engines always *ascend*
``spec.gain_sign * loss``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import ground_center_distance, wrap_angle

EPS_CLIP = 1e-7
DEFAULT_MATCH_THRESHOLD = 2.0
OBJECTIVES = ("untargeted_cls", "targeted_cls", "localization", "cw")


def normalize_scores(logits):
    """Elementwise sigmoid; scores are independent, not a distribution."""
    z = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class MatchSet:
    pairs: tuple
    unmatched_targets: tuple
    threshold: float

    def __len__(self):
        return len(self.pairs)


def match(dets, gts, threshold: float = DEFAULT_MATCH_THRESHOLD) -> MatchSet:
    """Class-agnostic greedy matching on ground-plane center distance.

    Detections are visited by descending best normalized score; each claims
    the nearest unclaimed target within ``threshold`` (lower index on ties).
    """
    if threshold <= 0:
        raise ValueError("matching threshold must be positive")
    best = [float(normalize_scores(d.class_scores).max()) for d in dets]
    order = sorted(range(len(dets)), key=lambda i: -best[i])
    claimed = set()
    pairs = []
    for i in order:
        pick, pick_d = None, math.inf
        for j, g in enumerate(gts):
            if j in claimed:
                continue
            d = ground_center_distance(dets[i].location, g.center)
            if d <= threshold and d < pick_d:
                pick, pick_d = j, d
        if pick is not None:
            claimed.add(pick)
            pairs.append((i, pick))
    unmatched = tuple(j for j in range(len(gts)) if j not in claimed)
    return MatchSet(tuple(pairs), unmatched, float(threshold))


@dataclass(frozen=True)
class LossSpec:
    """A differentiable attack objective bound to specific anchors.

    Row ``k`` of every array refers to matched pair ``k``; ``anchor_ids``
    names the detector anchor that produced that pair's detection.
    """

    objective: str
    matches: MatchSet
    anchor_ids: tuple
    true_labels: np.ndarray
    n_targets: int
    adversarial_labels: np.ndarray | None = None
    target_location: np.ndarray | None = None
    target_yaw: np.ndarray | None = None
    target_velocity: np.ndarray | None = None
    kappa: float = 0.0
    wrap_yaw: bool = False
    reduction: str = "mean"

    @property
    def gain_sign(self) -> float:
        return -1.0 if self.objective == "cw" else 1.0

    @property
    def n_unmatched(self) -> int:
        return self.n_targets - len(self.anchor_ids)

    def evaluate(self, heads: dict):
        """Loss and its gradient w.r.t. the matched rows of the head outputs.

        ``heads`` maps ``logits`` (P, C), ``location`` (P, 3), ``yaw`` (P,)
        and ``velocity`` (P, 2) to arrays whose rows follow ``anchor_ids``.
        Returns ``(loss, grads)`` with ``grads`` keyed like ``heads``.
        """
        logits = np.asarray(heads["logits"], dtype=np.float64)
        P = len(self.anchor_ids)
        grads = {
            "logits": np.zeros_like(logits),
            "location": np.zeros((P, 3)),
            "yaw": np.zeros(P),
            "velocity": np.zeros((P, 2)),
        }
        N = max(self.n_targets, 1)
        rows = np.arange(P)
        if self.objective == "untargeted_cls":
            s = normalize_scores(logits[rows, self.true_labels]) if P else np.zeros(0)
            live = s > EPS_CLIP
            total = float(np.sum(-np.log(np.maximum(s, EPS_CLIP))))
            total += self.n_unmatched * math.log(1.0 / EPS_CLIP)
            if P:
                grads["logits"][rows, self.true_labels] = np.where(live, -(1.0 - s), 0.0) / N
            return total / N, grads
        if self.objective == "targeted_cls":
            if not P:
                return 0.0, grads
            s_adv = normalize_scores(logits[rows, self.adversarial_labels])
            s_true = normalize_scores(logits[rows, self.true_labels])
            grads["logits"][rows, self.adversarial_labels] += s_adv * (1.0 - s_adv) / N
            grads["logits"][rows, self.true_labels] -= s_true * (1.0 - s_true) / N
            return float(np.sum(s_adv - s_true)) / N, grads
        if self.objective == "localization":
            if not P:
                return 0.0, grads
            dl = np.asarray(heads["location"]) - self.target_location
            dy = np.asarray(heads["yaw"]) - self.target_yaw
            if self.wrap_yaw:
                dy = wrap_angle(dy)
            dv = np.asarray(heads["velocity"]) - self.target_velocity
            total = np.abs(dl).sum() + np.abs(dy).sum() + np.abs(dv).sum()
            grads["location"] = np.sign(dl) / N
            grads["yaw"] = np.sign(dy) / N
            grads["velocity"] = np.sign(dv) / N
            return float(total) / N, grads
        if self.objective == "cw":
            if not P:
                return 0.0, grads
            z = logits.copy()
            z_true = z[rows, self.true_labels]
            z[rows, self.true_labels] = -np.inf
            other = np.argmax(z, axis=1)
            margin = z_true - z[rows, other]
            active = margin > -self.kappa
            grads["logits"][rows, self.true_labels] = active / N
            grads["logits"][rows, other] -= active / N
            return float(np.sum(np.maximum(margin, -self.kappa))) / N, grads
        raise ValueError(f"unknown objective {self.objective!r}")


def _class_index(classes, label):
    try:
        return list(classes).index(label)
    except ValueError:
        raise ValueError(f"label {label!r} not in detector classes {tuple(classes)}") from None


def _heads_of(dets, pairs, n_classes):
    return {
        "logits": np.array([dets[i].class_scores for i, _ in pairs], dtype=np.float64).reshape(
            len(pairs), n_classes
        ),
        "location": np.array([dets[i].location for i, _ in pairs], dtype=np.float64).reshape(-1, 3),
        "yaw": np.array([dets[i].yaw for i, _ in pairs], dtype=np.float64),
        "velocity": np.array([dets[i].velocity for i, _ in pairs], dtype=np.float64).reshape(-1, 2),
    }


def _base(objective, dets, gts, matches, classes, **kw) -> LossSpec:
    pairs = matches.pairs
    return LossSpec(
        objective=objective,
        matches=matches,
        anchor_ids=tuple(dets[i].anchor_id for i, _ in pairs),
        true_labels=np.array([_class_index(classes, gts[j].class_label) for _, j in pairs], dtype=int),
        n_targets=len(gts),
        **kw,
    )


def untargeted_cls_loss(dets, gts, matches: MatchSet, classes):
    """Mean cross-entropy of the true label under sigmoid scores.

    Targets left unmatched count at the ceiling ``log(1 / EPS_CLIP)``.
    """
    spec = _base("untargeted_cls", dets, gts, matches, classes)
    loss, _ = spec.evaluate(_heads_of(dets, matches.pairs, len(classes)))
    return loss, spec


def targeted_cls_loss(dets, gts, matches: MatchSet, classes, adversarial_labels):
    """Mean of ``score[adv] - score[true]``; positive means the attack is winning.

    ``adversarial_labels`` is indexed by target and holds class names.
    """
    for j, g in enumerate(gts):
        if adversarial_labels[j] == g.class_label:
            raise ValueError(f"target {j}: adversarial label equals true label {g.class_label!r}")
    adv = np.array([_class_index(classes, adversarial_labels[j]) for _, j in matches.pairs], dtype=int)
    spec = _base("targeted_cls", dets, gts, matches, classes, adversarial_labels=adv)
    loss, _ = spec.evaluate(_heads_of(dets, matches.pairs, len(classes)))
    return loss, spec


def localization_loss(dets, gts, matches: MatchSet, classes, wrap_yaw: bool = False):
    """Mean L1 error of location, yaw and velocity over matched targets."""
    pairs = matches.pairs
    spec = _base(
        "localization", dets, gts, matches, classes,
        target_location=np.array([gts[j].center for _, j in pairs], dtype=np.float64).reshape(-1, 3),
        target_yaw=np.array([gts[j].yaw for _, j in pairs], dtype=np.float64),
        target_velocity=np.array([gts[j].velocity for _, j in pairs], dtype=np.float64).reshape(-1, 2),
        wrap_yaw=wrap_yaw,
    )
    loss, _ = spec.evaluate(_heads_of(dets, pairs, len(classes)))
    return loss, spec


def cw_loss(dets, gts, matches: MatchSet, classes, kappa: float = 0.0):
    """Mean clamped logit margin ``max(z_true - max_other, -kappa)``."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    if len(classes) < 2:
        raise ValueError("the margin loss needs at least two classes")
    spec = _base("cw", dets, gts, matches, classes, kappa=float(kappa))
    loss, _ = spec.evaluate(_heads_of(dets, matches.pairs, len(classes)))
    return loss, spec


def default_target_map(classes) -> dict:
    """Every class becomes ``Car``; ``Car`` becomes ``Pedestrian``."""
    return {c: ("Pedestrian" if c == "Car" else "Car") for c in classes}


@dataclass(frozen=True)
class Objective:
    """Builds a fresh LossSpec from the current detections.

    ``name`` is one of ``cls`` (untargeted), ``targeted``, ``loc`` or ``cw``.
    """

    name: str = "cls"
    threshold: float = DEFAULT_MATCH_THRESHOLD
    target_map: dict | None = None
    kappa: float = 0.0
    wrap_yaw: bool = False

    def __call__(self, dets, gts, classes):
        m = match(dets, gts, self.threshold)
        if self.name == "cls":
            return untargeted_cls_loss(dets, gts, m, classes)
        if self.name == "targeted":
            tmap = self.target_map or default_target_map(classes)
            return targeted_cls_loss(dets, gts, m, classes, [tmap[g.class_label] for g in gts])
        if self.name == "loc":
            return localization_loss(dets, gts, m, classes, self.wrap_yaw)
        if self.name == "cw":
            return cw_loss(dets, gts, m, classes, self.kappa)
        raise ValueError(f"unknown objective {self.name!r}")
