"""Attacks on sequences for detectors that carry state across frames."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .base import AttackResult, Perturbation

MODES = ("continuous", "single_frame", "benign")


@dataclass
class SequenceAttack:
    mode: str
    results: list = field(default_factory=list)
    bev_trace: list = field(default_factory=list)
    attacked: tuple = ()


def attack_sequence(seq, oracle, engine, mode: str = "continuous", k: int | None = None,
                    seed: int = 0) -> SequenceAttack:
    """Run ``engine`` over a sequence, threading the detector state.

    ``continuous`` attacks every frame; ``single_frame`` attacks only frame
    ``k`` (0-based) and leaves the rest clean; ``benign`` attacks nothing.
    Each frame's attack sees the history produced by the frames actually
    fed to the detector. A BEV snapshot is taken after every frame when
    the detector is temporal.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    n = len(seq)
    if mode == "single_frame":
        if k is None or not (0 <= k < n):
            raise ValueError(f"single_frame index {k!r} out of range for {n} frames")
        attacked = (k,)
    elif mode == "continuous":
        attacked = tuple(range(n))
    else:
        attacked = ()
    out = SequenceAttack(mode, attacked=attacked)
    state = None
    record = getattr(oracle, "temporal", False)
    for i, frame in enumerate(seq.frames):
        if i in attacked:
            res = engine(frame, oracle, state=state, seed=seed + i)
        else:
            zero = tuple(np.zeros_like(im) for im in frame.images)
            res = AttackResult(frame=frame, perturbation=Perturbation(zero, 0.0, 0.0))
        _, state = oracle.forward(res.frame, state)
        out.results.append(res)
        if record:
            out.bev_trace.append(oracle.bev_feature(state))
    return out
