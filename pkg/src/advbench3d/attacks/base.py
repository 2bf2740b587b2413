"""Shared attack types and the gain/gradient plumbing every engine uses."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..objectives import Objective, match
from ..scene import Frame


@dataclass(frozen=True)
class Perturbation:
    deltas: tuple
    epsilon: float
    step: float

    @property
    def linf(self) -> float:
        return max((float(np.abs(d).max(initial=0.0)) for d in self.deltas), default=0.0)


@dataclass(frozen=True)
class AttackBudget:
    max_iters: int = 50
    early_stop: bool = False
    severity_id: object = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class AttackResult:
    """Outcome of one attack run on one frame.

    ``loss_trace[i]`` is the attack gain after iteration ``i + 1`` and
    ``match_trace`` the number of matched targets at the same points;
    ``success`` records that matching came back empty.
    """

    frame: Frame
    loss_trace: list = field(default_factory=list)
    iterations: int = 0
    success: bool = False
    match_trace: list = field(default_factory=list)
    perturbation: Perturbation | None = None
    best_trace: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)


def as_objective(objective) -> Objective:
    if isinstance(objective, Objective):
        return objective
    return Objective(str(objective))


class GainOracle:
    """Evaluates the attack gain of a frame and its pixel gradient.

    Gain is ``gain_sign * loss`` so that every engine ascends. Matching is
    redone on every call.
    """

    def __init__(self, oracle, objective, gts, state=None):
        self.oracle = oracle
        self.objective = as_objective(objective)
        self.gts = tuple(gts)
        self.state = state
        self.classes = oracle.class_set()
        self.calls = 0

    def detections(self, frame):
        return self.oracle.forward(frame, self.state)[0]

    def n_matches(self, dets) -> int:
        return len(match(dets, self.gts, self.objective.threshold))

    def evaluate(self, frame, need_grad: bool = True):
        """Return ``(gain, grads, n_pairs)``; grads is None unless requested."""
        self.calls += 1
        dets = self.detections(frame)
        loss, spec = self.objective(dets, self.gts, self.classes)
        grads = None
        if need_grad:
            raw = self.oracle.input_gradient(frame, self.state, spec)
            grads = [spec.gain_sign * g for g in raw]
        return spec.gain_sign * loss, grads, len(spec.matches)


def project_linf(deltas, epsilon: float, clean) -> list:
    """Clamp to the L-inf ball, then keep ``clean + delta`` inside [0, 255]."""
    out = []
    for d, im in zip(deltas, clean):
        d = np.clip(np.asarray(d, dtype=np.float64), -epsilon, epsilon)
        adv = np.clip(im + d, 0.0, 255.0)
        adv = np.clip(adv, im - epsilon, im + epsilon)
        out.append(adv - im)
    return out


def compose(clean: Frame, deltas) -> Frame:
    """Adversarial frame ``clean + delta`` clipped into the valid box."""
    return clean.with_images(np.clip(im + d, 0.0, 255.0) for im, d in zip(clean.images, deltas))


def deltas_of(clean: Frame, adv: Frame) -> tuple:
    return tuple(a - c for a, c in zip(adv.images, clean.images))
