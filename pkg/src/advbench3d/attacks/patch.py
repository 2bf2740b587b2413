"""Adversarial patches: per-target white-box patches and a universal patch."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import box_corners, patch_region, project_box
from ..objectives import Objective, default_target_map
from ..scene import DatasetStats, Frame, dataset_stats
from .base import AttackBudget, AttackResult, GainOracle, Perturbation, deltas_of

PATCH_STEP = 5.0
UNIVERSAL_SIZE = 100
UNIVERSAL_SCALE = 0.3
UNIVERSAL_LR = 10.0


@dataclass(frozen=True)
class Placement:
    """Where one patch goes: a region in one camera, for one target."""

    camera: int
    region: object
    target: int


def target_regions(frame: Frame, scale: float, mode: str = "dynamic", fixed_size=None) -> list:
    """Patch placements for every target whose center is visible, per camera."""
    out = []
    for j, ann in enumerate(frame.annotations):
        bc = box_corners(ann)
        for c, cam in enumerate(frame.cameras):
            r = patch_region(project_box(bc, cam), scale, mode, fixed_size, (cam.height, cam.width))
            if r is not None:
                out.append(Placement(c, r, j))
    return out


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic 1-D bilinear resampling matrix, half-pixel centers.

    Equal sizes give the identity, so a patch at native size is copied exactly.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("resize dimensions must be positive")
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    R = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(R, (rows, i0), 1.0 - frac)
    np.add.at(R, (rows, i1), frac)
    return R


def resize(patch: np.ndarray, height: int, width: int) -> np.ndarray:
    ph, pw = patch.shape[:2]
    if (ph, pw) == (height, width):
        return np.array(patch, dtype=np.float64)
    out = np.einsum("ai,ijc,bj->abc", resize_matrix(ph, height), patch, resize_matrix(pw, width))
    # convex weights, but rounding can step a hair outside the pixel range
    return np.clip(out, 0.0, 255.0)


def _paint_order(placements) -> list:
    # far first so the nearer target ends up on top
    return sorted(range(len(placements)), key=lambda k: -placements[k].region.depth)


def _composite(frame: Frame, patches, placements):
    """Patched frame plus, per camera, which placement wrote each pixel (-1: none)."""
    images = [np.array(im) for im in frame.images]
    owners = [np.full(im.shape[:2], -1, dtype=int) for im in images]
    for k in _paint_order(placements):
        p = placements[k]
        x0, y0, x1, y1 = p.region.bounds
        src = patches if isinstance(patches, np.ndarray) else patches[k]
        images[p.camera][y0:y1, x0:x1] = resize(src, y1 - y0, x1 - x0)
        owners[p.camera][y0:y1, x0:x1] = k
    return frame.with_images(images), owners


def apply_patch(frame: Frame, patches, placements) -> Frame:
    """Write patches over their regions; everything else stays bit-identical.

    ``patches`` is one (h, w, 3) array shared by all placements, or a list
    aligned with ``placements``.
    """
    if not placements:
        return frame
    return _composite(frame, patches, placements)[0]


def _patch_grads(grads, owners, patches, placements) -> list:
    out = []
    for k, p in enumerate(placements):
        x0, y0, x1, y1 = p.region.bounds
        g = grads[p.camera][y0:y1, x0:x1] * (owners[p.camera][y0:y1, x0:x1] == k)[..., None]
        src = patches if isinstance(patches, np.ndarray) else patches[k]
        ph, pw = src.shape[:2]
        if (ph, pw) == g.shape[:2]:
            out.append(g)
        else:
            out.append(np.einsum("ai,abc,bj->ijc", resize_matrix(ph, y1 - y0), g,
                                 resize_matrix(pw, x1 - x0)))
    return out


def gaussian_patch(shape, stats: DatasetStats, rng) -> np.ndarray:
    """Patch drawn per channel from the dataset pixel distribution."""
    h, w = shape
    noise = rng.normal(size=(h, w, 3))
    return np.clip(stats.pixel_mean + noise * np.sqrt(stats.pixel_var), 0.0, 255.0)


def _frame_stats(frame: Frame) -> DatasetStats:
    from ..scene import Sequence

    return dataset_stats([Sequence((frame,), "frame")])


def patch_attack(frame: Frame, oracle, objective="cls", scale: float = 0.3,
                 budget: AttackBudget | None = None, *, mode="dynamic", fixed_size=None,
                 stats: DatasetStats | None = None, alpha: float = PATCH_STEP, seed=0,
                 state=None) -> AttackResult:
    """Sign-gradient optimisation of one patch per visible target.

    Patches start from a Gaussian with the dataset's pixel statistics
    (the frame's own when ``stats`` is None) and move only their own pixels.
    """
    budget = budget or AttackBudget()
    placements = target_regions(frame, scale, mode, fixed_size)
    if not placements:
        zero = tuple(np.zeros_like(im) for im in frame.images)
        return AttackResult(frame=frame, perturbation=Perturbation(zero, 0.0, alpha),
                            extra={"placements": 0})
    stats = stats or _frame_stats(frame)
    rng = np.random.default_rng(seed)
    patches = [gaussian_patch(p.region.shape, stats, rng) for p in placements]
    t = GainOracle(oracle, objective, frame.annotations, state)
    adv, owners = _composite(frame, patches, placements)
    _, grads, n = t.evaluate(adv)
    trace, best, mtrace = [], [], []
    it = 0
    for it in range(1, budget.max_iters + 1):
        pg = _patch_grads(grads, owners, patches, placements)
        patches = [np.clip(p + alpha * np.sign(g), 0.0, 255.0) for p, g in zip(patches, pg)]
        adv, owners = _composite(frame, patches, placements)
        gain, grads, n = t.evaluate(adv, need_grad=it < budget.max_iters)
        trace.append(gain)
        best.append(max(gain, best[-1]) if best else gain)
        mtrace.append(n)
        if budget.early_stop and n == 0:
            break
    return AttackResult(
        frame=adv, loss_trace=trace, iterations=it, success=n == 0, match_trace=mtrace,
        perturbation=Perturbation(deltas_of(frame, adv), 255.0, alpha), best_trace=best,
        extra={"placements": len(placements)},
    )


@dataclass
class PatchArtifact:
    """A trained universal patch plus how it was made.

    ``trace`` (gain per optimisation step) is kept in memory only.
    """

    pixels: np.ndarray
    provenance: dict = field(default_factory=dict)
    trace: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float32)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"patch must be (h, w, 3), got {px.shape}")
        self.pixels = px

    def to_json(self) -> str:
        h, w, c = self.pixels.shape
        blob = np.ascontiguousarray(self.pixels, dtype="<f4").tobytes()
        return json.dumps(
            {
                "height": h,
                "width": w,
                "channels": c,
                "provenance": self.provenance,
                "pixels": base64.b64encode(blob).decode("ascii"),
            },
            sort_keys=True,
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "PatchArtifact":
        d = json.loads(text)
        try:
            h, w, c = int(d["height"]), int(d["width"]), int(d["channels"])
            raw = base64.b64decode(d["pixels"], validate=True)
        except (KeyError, TypeError, ValueError) as e:
            raise ValueError(f"malformed patch artifact: {e}") from None
        if len(raw) != h * w * c * 4:
            raise ValueError(f"patch artifact holds {len(raw)} bytes, expected {h * w * c * 4}")
        px = np.frombuffer(raw, dtype="<f4").reshape(h, w, c).astype(np.float32)
        return cls(px, d.get("provenance", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PatchArtifact":
        return cls.from_json(Path(path).read_text())

    @property
    def array(self) -> np.ndarray:
        return self.pixels.astype(np.float64)


def random_patch(stats: DatasetStats, seed: int, size: int = UNIVERSAL_SIZE) -> PatchArtifact:
    """Untrained baseline patch: the same Gaussian the trainer starts from."""
    px = gaussian_patch((size, size), stats, np.random.default_rng(seed))
    return PatchArtifact(px, {"kind": "random", "seed": seed, "size": size})


def apply_universal(frame: Frame, artifact: PatchArtifact, scale: float = UNIVERSAL_SCALE) -> Frame:
    return apply_patch(frame, artifact.array, target_regions(frame, scale))


def train_universal_patch(train_seqs, oracle, target_map=None, epochs: int = 1, seed: int = 0, *,
                          lr: float = UNIVERSAL_LR, size: int = UNIVERSAL_SIZE,
                          scale: float = UNIVERSAL_SCALE, stats: DatasetStats | None = None,
                          beta1: float = 0.9, beta2: float = 0.999) -> PatchArtifact:
    """Adam ascent of the targeted gain for one patch shared by every target.

    Each frame of each training sequence is one step; frames where nothing
    is matched leave the optimiser untouched.
    """
    train_seqs = list(train_seqs)
    frames = [f for s in train_seqs for f in s.frames]
    if not frames:
        raise ValueError("universal patch training needs at least one frame")
    classes = oracle.class_set()
    tmap = dict(target_map) if target_map is not None else default_target_map(classes)
    missing = [c for c in classes if c not in tmap]
    if missing:
        raise ValueError(f"target_map has no entry for {missing}")
    stats = stats or dataset_stats(train_seqs)
    rng = np.random.default_rng(seed)
    patch = gaussian_patch((size, size), stats, rng)
    objective = Objective("targeted", target_map=tmap)
    m = np.zeros_like(patch)
    v = np.zeros_like(patch)
    step = 0
    trace = []
    for _ in range(epochs):
        for frame in frames:
            placements = target_regions(frame, scale)
            if not placements:
                continue
            adv, owners = _composite(frame, patch, placements)
            t = GainOracle(oracle, objective, frame.annotations)
            gain, grads, n = t.evaluate(adv)
            trace.append(gain)
            if n == 0:
                continue
            g = np.sum(_patch_grads(grads, owners, patch, placements), axis=0)
            step += 1
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            mh = m / (1 - beta1**step)
            vh = v / (1 - beta2**step)
            patch = np.clip(patch + lr * mh / (np.sqrt(vh) + 1e-8), 0.0, 255.0)
    prov = {
        "kind": "universal",
        "detector": getattr(oracle, "name", type(oracle).__name__),
        "seed": seed,
        "epochs": epochs,
        "lr": lr,
        "scale": scale,
        "size": size,
        "steps": step,
        "frames": len(frames),
        "target_map": {k: tmap[k] for k in sorted(tmap)},
    }
    return PatchArtifact(patch, prov, trace)
