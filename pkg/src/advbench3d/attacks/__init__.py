"""Attack engines. Every engine ascends ``gain_sign * loss`` of an objective."""

from __future__ import annotations

from functools import partial

from .base import AttackBudget, AttackResult, Perturbation, compose, project_linf
from .patch import (PatchArtifact, Placement, apply_patch, apply_universal, patch_attack,
                    random_patch, resize, resize_matrix, target_regions, train_universal_patch)
from .pixel import autopgd, autopgd_checkpoints, cw_attack, fgsm, pgd
from .temporal import SequenceAttack, attack_sequence

ENGINES = ("fgsm", "pgd", "autopgd", "cw", "patch")


def make_engine(name: str, objective="cls", **params):
    """Callable ``(frame, oracle, state=None, seed=0) -> AttackResult``.

    ``params`` are the engine's keyword arguments (epsilon, alpha, budget,
    scale, ...); ``seed`` is ignored by engines without randomness.
    """
    if name == "fgsm":
        fn = partial(fgsm, objective=objective, **params)
        return lambda frame, oracle, state=None, seed=0: fn(frame, oracle, state=state)
    if name == "cw":
        fn = partial(cw_attack, **params)
        return lambda frame, oracle, state=None, seed=0: fn(frame, oracle, state=state)
    table = {"pgd": pgd, "autopgd": autopgd, "patch": patch_attack}
    if name not in table:
        raise ValueError(f"unknown engine {name!r}; expected one of {ENGINES}")
    fn = partial(table[name], objective=objective, **params)
    return lambda frame, oracle, state=None, seed=0: fn(frame, oracle, state=state, seed=seed)


__all__ = [
    "AttackBudget", "AttackResult", "Perturbation", "PatchArtifact", "Placement", "SequenceAttack",
    "apply_patch", "apply_universal", "attack_sequence", "autopgd", "autopgd_checkpoints",
    "compose", "cw_attack", "fgsm", "make_engine", "patch_attack", "pgd", "project_linf",
    "random_patch", "resize", "resize_matrix", "target_regions", "train_universal_patch",
]
