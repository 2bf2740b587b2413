"""Benchmark configuration: parsing, validation and the canonical hash."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .detectors import REGISTRY
from .scene import canonical_json

OUT_ENV = "ADVBENCH_OUT"
DEFAULT_OUT = "bench_out"

ITERATION_GRID = (1, 2, 5, 10, 20, 50)
SCALE_GRID = (0.1, 0.2, 0.3, 0.4)
SEVERITY_AXIS = {"fgsm": "iterations", "pgd": "iterations", "autopgd": "iterations",
                 "cw": "iterations", "patch": "scale"}
OBJECTIVE_NAMES = ("cls", "loc")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AttackSpec:
    """One attack row of the experiment matrix."""

    engine: str
    grid: tuple = ()
    params: dict = field(default_factory=dict)

    @property
    def axis(self) -> str:
        return SEVERITY_AXIS[self.engine]

    @classmethod
    def from_dict(cls, d) -> "AttackSpec":
        if isinstance(d, str):
            d = {"engine": d}
        engine = d.get("engine")
        if engine not in SEVERITY_AXIS:
            raise ConfigError(f"attack engine must be one of {sorted(SEVERITY_AXIS)}, got {engine!r}")
        if "grid" in d:
            grid = tuple(d["grid"])
        elif engine == "fgsm":
            grid = (1,)
        else:
            grid = SCALE_GRID if SEVERITY_AXIS[engine] == "scale" else ITERATION_GRID
        if not grid:
            raise ConfigError(f"attack {engine!r}: severity grid is empty")
        if engine == "fgsm" and grid != (1,):
            raise ConfigError("fgsm is a single step; its grid must be [1]")
        for g in grid:
            if SEVERITY_AXIS[engine] == "iterations" and (int(g) != g or g < 1):
                raise ConfigError(f"attack {engine!r}: iteration counts must be positive integers")
            if SEVERITY_AXIS[engine] == "scale" and not (0 < g <= 1):
                raise ConfigError(f"attack {engine!r}: patch scales must lie in (0, 1]")
        return cls(engine, grid, dict(d.get("params", {})))

    def to_dict(self) -> dict:
        return {"engine": self.engine, "grid": list(self.grid), "params": self.params}


@dataclass(frozen=True)
class BenchConfig:
    """Everything a benchmark run depends on, apart from the output location.

    ``dataset`` is either ``{"path": DIR}`` (scene directories) or
    ``{"generator": {...}}`` with synthetic-scene parameters.
    """

    dataset: dict = field(default_factory=lambda: {"generator": {}})
    detectors: tuple = ("toy-a",)
    attacks: tuple = ()
    objectives: tuple = ("cls",)
    temporal: dict = field(default_factory=dict)
    blackbox: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if not self.detectors:
            raise ConfigError("at least one detector id is required")
        for d in self.detectors:
            if d not in REGISTRY:
                raise ConfigError(f"unknown detector id {d!r}; known: {sorted(REGISTRY)}")
        for o in self.objectives:
            if o not in OBJECTIVE_NAMES:
                raise ConfigError(f"objective must be one of {OBJECTIVE_NAMES}, got {o!r}")
        if not self.objectives:
            raise ConfigError("objective list is empty")
        if ("path" in self.dataset) == ("generator" in self.dataset):
            raise ConfigError("dataset needs exactly one of 'path' or 'generator'")

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            dataset=dict(d.get("dataset", {"generator": {}})),
            detectors=tuple(d.get("detectors", ("toy-a",))),
            attacks=tuple(AttackSpec.from_dict(a) for a in d.get("attacks", ())),
            objectives=tuple(d.get("objectives", ("cls",))),
            temporal=dict(d.get("temporal", {})),
            blackbox=dict(d.get("blackbox", {})),
            seed=int(d.get("seed", 0)),
            out=d.get("out"),
        )

    @classmethod
    def load(cls, path) -> "BenchConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["attacks"] = [a.to_dict() for a in self.attacks]
        d["detectors"] = list(self.detectors)
        d["objectives"] = list(self.objectives)
        return d

    def with_overrides(self, seed=None, out=None) -> "BenchConfig":
        return replace(self, seed=self.seed if seed is None else int(seed),
                       out=self.out if out is None else str(out))

    def hash(self) -> str:
        """SHA-256 of the canonical config, output location excluded."""
        d = self.to_dict()
        d.pop("out")
        return hashlib.sha256(canonical_json(d).encode()).hexdigest()

    def out_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def cell_seed(seed: int, *coords) -> int:
    """Per-cell seed from the config seed and the cell coordinates."""
    key = json.dumps([seed, *[str(c) for c in coords]])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:4], "little")
