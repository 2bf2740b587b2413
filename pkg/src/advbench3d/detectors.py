"""White-box detector oracle contract and the analytic toy detectors.

The toy detector reads a fixed grid of ground-plane anchors. Each anchor
pools a window of pixels around the projection of a canonical 1.5 m cube
into a ``GRID x GRID x 3`` feature vector; pooling is linear in the pixels
and is stored as one sparse matrix per camera, so the input gradient is
the transpose product. A tanh perceptron maps features to class logits,
location offset, size, yaw and velocity. The random hidden layer is
followed by a one-shot weighted ridge fit of every head on generator
frames.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp

from .geometry import project_points
from .objectives import LossSpec, normalize_scores
from .scene import Frame

SCORE_THRESHOLD = 0.3
CUBE = 1.5
PIXEL_SCALE = 8.0


class UnsupportedOperation(RuntimeError):
    pass


@dataclass(frozen=True)
class Detection:
    class_scores: np.ndarray
    location: np.ndarray
    size: np.ndarray
    yaw: float
    velocity: np.ndarray
    attribute_scores: np.ndarray | None = None
    anchor_id: int = -1


class DetectorOracle(Protocol):
    """What an attack needs from a detector.

    ``forward`` must be deterministic in ``(frame, state)`` and
    ``input_gradient`` must return d loss / d pixel for every camera image,
    where the loss is ``spec.evaluate`` applied to the anchors it names.
    """

    name: str

    def class_set(self) -> tuple: ...

    def forward(self, frame: Frame, state=None): ...

    def loss(self, frame: Frame, state, spec: LossSpec) -> float: ...

    def input_gradient(self, frame: Frame, state, spec: LossSpec) -> list: ...

    def bev_feature(self, state) -> np.ndarray: ...


@dataclass(frozen=True)
class ToyDetectorConfig:
    """Architecture and seeds of a toy detector.

    ``extent`` bounds the anchor grid on the ground plane (meters around the
    rig) and ``fusion`` is the temporal weight on the previous fused
    feature map (0 gives a single-frame detector).
    """

    classes: tuple = ("Car", "Pedestrian", "Barrier")
    extent: float = 28.0
    stride: float = 1.0
    min_depth: float = 3.0
    max_depth: float = 27.0
    grid: int = 6
    supersample: int = 3
    context: float = 1.5
    hidden: int = 256
    weight_seed: int = 0
    fusion: float = 0.0
    temporal: bool = False
    calib_frames: int = 64
    calib_seed: int = 100_000
    calib_objects: int = 6
    calib_cameras: int = 3
    ridge: float = 1e-3
    positive_weight: float = 8.0
    logit_target: float = 4.0
    peak_radius: float = 1.6
    reg_radius: float = 1.6
    pixel_scale: float = PIXEL_SCALE
    score_threshold: float = SCORE_THRESHOLD

    def __post_init__(self):
        if self.stride <= 0:
            raise ValueError("anchor stride must be positive")
        if not (0.0 <= self.fusion < 1.0):
            raise ValueError("fusion weight must lie in [0, 1)")
        if len(self.classes) < 1:
            raise ValueError("need at least one class")


@dataclass(frozen=True)
class ToyState:
    """Temporal memory: fused per-anchor features after the last frame."""

    fused: np.ndarray | None = None
    frame_index: int = -1


@dataclass
class _Pooling:
    anchors: np.ndarray
    camera: np.ndarray
    mats: list = field(default_factory=list)
    reference: np.ndarray | None = None
    neighbours: list | None = None


def _rig_key(cameras) -> str:
    h = hashlib.sha1()
    for c in cameras:
        h.update(c.intrinsics.tobytes())
        h.update(c.extrinsics.tobytes())
        h.update(np.array([c.width, c.height]).tobytes())
    return h.hexdigest()


def _cube_corners(x, y):
    s = CUBE / 2.0
    pts = np.array([[dx, dy, dz] for dx in (-s, s) for dy in (-s, s) for dz in (0.0, CUBE)])
    return pts + np.array([x, y, 0.0])


def build_pooling(cameras, cfg: ToyDetectorConfig) -> _Pooling:
    """Anchor grid plus the sparse pixel-to-feature matrix of each camera.

    An anchor belongs to the camera that sees its center closest to the
    principal column; anchors no camera sees in range are dropped.
    """
    ticks = np.arange(-cfg.extent, cfg.extent + 1e-9, cfg.stride)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    grid = np.stack([gx.ravel(), gy.ravel()], axis=1)
    anchors, owner, windows = [], [], []
    for x, y in grid:
        center = np.array([[x, y, CUBE / 2.0]])
        best, best_off = None, math.inf
        for c, cam in enumerate(cameras):
            uv, z = project_points(center, cam)
            if not (cfg.min_depth <= z[0] <= cfg.max_depth):
                continue
            u, v = uv[0]
            if not (0 <= u < cam.width and 0 <= v < cam.height):
                continue
            off = abs(u - cam.intrinsics[0, 2]) / cam.width
            if off < best_off:
                best, best_off = c, off
        if best is None:
            continue
        cam = cameras[best]
        uv, _ = project_points(_cube_corners(x, y), cam)
        lo, hi = uv.min(axis=0), uv.max(axis=0)
        mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0 * cfg.context
        anchors.append((x, y))
        owner.append(best)
        windows.append((mid - half, mid + half))
    anchors = np.array(anchors, dtype=np.float64).reshape(-1, 2)
    owner = np.array(owner, dtype=int)
    G, S = cfg.grid, cfg.supersample
    cells = G * G
    # sub-sample offsets inside the unit window
    t = (np.arange(G * S) + 0.5) / (G * S)
    cell_of = np.arange(G * S) // S
    mats = []
    for c, cam in enumerate(cameras):
        rows, cols, vals = [], [], []
        H, W = cam.height, cam.width
        for a in np.flatnonzero(owner == c):
            (u0, v0), (u1, v1) = windows[a]
            us = u0 + t * (u1 - u0) - 0.5
            vs = v0 + t * (v1 - v0) - 0.5
            VV, UU = np.meshgrid(vs, us, indexing="ij")
            CY, CX = np.meshgrid(cell_of, cell_of, indexing="ij")
            row = a * cells + CY * G + CX
            x0 = np.floor(UU)
            y0 = np.floor(VV)
            fx, fy = UU - x0, VV - y0
            for dx, dy, w in (
                (0, 0, (1 - fx) * (1 - fy)),
                (1, 0, fx * (1 - fy)),
                (0, 1, (1 - fx) * fy),
                (1, 1, fx * fy),
            ):
                xi = np.clip(x0 + dx, 0, W - 1).astype(int)
                yi = np.clip(y0 + dy, 0, H - 1).astype(int)
                rows.append(row.ravel())
                cols.append((yi * W + xi).ravel())
                vals.append((w / (S * S)).ravel())
        n_rows = len(anchors) * cells
        if rows:
            m = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(n_rows, H * W),
            )
        else:
            m = sp.csr_matrix((n_rows, H * W))
        m.sum_duplicates()
        mats.append(m)
    return _Pooling(anchors, owner, mats)


class ToyDetector:
    """Analytic detector oracle with exact input gradients.

    Weights are derived from ``cfg`` alone; the first call on a camera rig
    builds the anchor pooling for that rig and, on the first rig seen,
    fits the heads on synthetic frames rendered with the same rig.
    """

    def __init__(self, cfg: ToyDetectorConfig | None = None, name: str = "toy"):
        self.cfg = cfg or ToyDetectorConfig()
        self.name = name
        self.classes = tuple(self.cfg.classes)
        self._pool_cache: dict = {}
        G = self.cfg.grid
        self.n_features = G * G * 3
        rng = np.random.default_rng(self.cfg.weight_seed)
        self.W1 = rng.normal(0.0, 1.5 / math.sqrt(self.n_features), (self.cfg.hidden, self.n_features))
        self.b1 = rng.normal(0.0, 0.5, self.cfg.hidden)
        self.Wo = None
        self.bo = None

    # layout of the output vector
    @property
    def _slices(self):
        C = len(self.classes)
        return {
            "logits": slice(0, C),
            "offset": slice(C, C + 3),
            "log_size": slice(C + 3, C + 6),
            "yaw": slice(C + 6, C + 7),
            "velocity": slice(C + 7, C + 9),
        }

    def class_set(self) -> tuple:
        return self.classes

    @property
    def temporal(self) -> bool:
        return self.cfg.temporal

    # -- pooling ----------------------------------------------------------

    def _pool_for(self, cameras) -> _Pooling:
        if not cameras:
            raise ValueError("frame has no calibrated cameras")
        key = _rig_key(cameras)
        pool = self._pool_cache.get(key)
        if pool is None:
            from .synth import background

            pool = build_pooling(cameras, self.cfg)
            # subtract what each anchor sees on an empty road
            pool.reference = self._pool_raw(pool, [background(c) for c in cameras])
            self._pool_cache[key] = pool
        return pool

    def _pooling(self, cameras) -> _Pooling:
        pool = self._pool_for(cameras)
        if self.Wo is None:
            self._calibrate()
        return pool

    def pooled_features(self, frame: Frame) -> np.ndarray:
        """(anchors, features) pooled from the frame's images, normalised."""
        pool = self._pool_for(frame.cameras)
        return (self._pool_raw(pool, frame.images) - pool.reference) / self.cfg.pixel_scale

    def _pool_raw(self, pool: _Pooling, images) -> np.ndarray:
        cells = self.cfg.grid * self.cfg.grid
        feats = np.zeros((len(pool.anchors) * cells, 3))
        for m, im in zip(pool.mats, images):
            feats += m @ np.asarray(im, dtype=np.float64).reshape(-1, 3)
        return feats.reshape(len(pool.anchors), self.n_features)

    def anchors(self, cameras) -> np.ndarray:
        """Ground-plane (x, y) of every anchor for this camera rig."""
        return self._pool_for(cameras).anchors

    # -- network ----------------------------------------------------------

    def _fuse(self, feats, state: ToyState | None):
        lam = self.cfg.fusion if self.cfg.temporal else 0.0
        if lam and state is not None and state.fused is not None:
            return (1.0 - lam) * feats + lam * state.fused
        return feats

    def _hidden(self, fused):
        return np.tanh(fused @ self.W1.T + self.b1)

    def _outputs(self, fused):
        h = self._hidden(fused)
        return h, h @ self.Wo.T + self.bo

    def _decode(self, anchors, out):
        sl = self._slices
        loc = np.zeros((len(anchors), 3))
        loc[:, :2] = anchors + out[:, sl["offset"]][:, :2]
        loc[:, 2] = out[:, sl["offset"]][:, 2]
        return {
            "logits": out[:, sl["logits"]],
            "location": loc,
            "size": np.exp(np.clip(out[:, sl["log_size"]], -3.0, 3.0)),
            "yaw": out[:, sl["yaw"]][:, 0],
            "velocity": out[:, sl["velocity"]],
        }

    def raw_outputs(self, frame: Frame, state: ToyState | None = None):
        """Decoded head outputs for every anchor plus the fused features."""
        pool = self._pooling(frame.cameras)
        fused = self._fuse(self.pooled_features(frame), state)
        _, out = self._outputs(fused)
        return self._decode(pool.anchors, out), fused

    def forward(self, frame: Frame, state: ToyState | None = None):
        heads, fused = self.raw_outputs(frame, state)
        scores = normalize_scores(heads["logits"]).max(axis=1)
        keep = scores >= self.cfg.score_threshold
        if self.cfg.peak_radius > 0:
            keep &= self._local_peaks(scores, self._pool_for(frame.cameras))
        dets = []
        for a in np.flatnonzero(keep):
            dets.append(
                Detection(
                    class_scores=heads["logits"][a].copy(),
                    location=heads["location"][a].copy(),
                    size=heads["size"][a].copy(),
                    yaw=float(heads["yaw"][a]),
                    velocity=heads["velocity"][a].copy(),
                    attribute_scores=None,
                    anchor_id=int(a),
                )
            )
        new_state = ToyState(fused.copy() if self.cfg.temporal else None,
                             (state.frame_index if state else -1) + 1)
        return dets, new_state

    def _local_peaks(self, scores, pool: _Pooling):
        """Anchors whose score is the maximum within ``peak_radius`` on the ground."""
        nbrs = self._neighbours(pool)
        peak = np.ones(len(scores), dtype=bool)
        for a, others in enumerate(nbrs):
            if len(others):
                best = scores[others].max()
                # ties go to the lower anchor index
                if best > scores[a] or (best == scores[a] and others[scores[others] == best].min() < a):
                    peak[a] = False
        return peak

    def _neighbours(self, pool: _Pooling):
        if pool.neighbours is None:
            A = pool.anchors
            d = np.hypot(A[:, None, 0] - A[None, :, 0], A[:, None, 1] - A[None, :, 1])
            np.fill_diagonal(d, np.inf)
            pool.neighbours = [np.flatnonzero(row <= self.cfg.peak_radius) for row in d]
        return pool.neighbours

    def _check_spec(self, spec: LossSpec, n_anchors: int):
        if any(a < 0 or a >= n_anchors for a in spec.anchor_ids):
            raise ValueError("loss spec references anchors this detector does not have")
        if len(spec.true_labels) and int(np.max(spec.true_labels)) >= len(self.classes):
            raise ValueError("loss spec class index out of range")

    def loss(self, frame: Frame, state, spec: LossSpec) -> float:
        heads, _ = self.raw_outputs(frame, state)
        self._check_spec(spec, len(heads["logits"]))
        ids = list(spec.anchor_ids)
        value, _ = spec.evaluate({k: heads[k][ids] for k in ("logits", "location", "yaw", "velocity")})
        return value

    def input_gradient(self, frame: Frame, state, spec: LossSpec) -> list:
        """Exact d loss / d pixel for each camera image (float64, image-shaped)."""
        pool = self._pooling(frame.cameras)
        self._check_spec(spec, len(pool.anchors))
        grads = [np.zeros_like(im) for im in frame.images]
        ids = np.array(spec.anchor_ids, dtype=int)
        if len(ids) == 0:
            return grads
        fused = self._fuse(self.pooled_features(frame), state)
        h, out = self._outputs(fused[ids])
        heads = self._decode(pool.anchors[ids], out)
        _, g = spec.evaluate({k: heads[k] for k in ("logits", "location", "yaw", "velocity")})
        sl = self._slices
        d_out = np.zeros_like(out)
        d_out[:, sl["logits"]] = g["logits"]
        d_out[:, sl["offset"]] = g["location"]
        d_out[:, sl["yaw"]] = g["yaw"][:, None]
        d_out[:, sl["velocity"]] = g["velocity"]
        d_h = d_out @ self.Wo
        d_pre = d_h * (1.0 - h * h)
        d_feat = d_pre @ self.W1
        lam = self.cfg.fusion if self.cfg.temporal else 0.0
        if lam and state is not None and state.fused is not None:
            d_feat = d_feat * (1.0 - lam)
        cells = self.cfg.grid * self.cfg.grid
        # accumulate per-anchor feature gradients back to (rows, 3) cell layout
        d_cells = np.zeros((len(pool.anchors), self.n_features))
        np.add.at(d_cells, ids, d_feat)
        d_cells = d_cells.reshape(len(pool.anchors) * cells, 3) / self.cfg.pixel_scale
        for c, m in enumerate(pool.mats):
            grads[c] = (m.T @ d_cells).reshape(frame.images[c].shape)
        return grads

    def bev_feature(self, state: ToyState | None) -> np.ndarray:
        if not self.cfg.temporal:
            raise UnsupportedOperation(f"{self.name} is a single-frame detector")
        if state is None or state.fused is None:
            raise UnsupportedOperation("no BEV feature before the first forward pass")
        return state.fused.copy()

    # -- calibration --------------------------------------------------------

    def _targets(self, anchors, anns):
        """Per-anchor training targets.

        The anchor nearest an object is its classification positive; every
        anchor within ``reg_radius`` of an object regresses that object's
        box. Returns ``(targets, positive_mask, regression_mask)``.
        """
        C = len(self.classes)
        T = np.zeros((len(anchors), C + 9))
        T[:, :C] = -self.cfg.logit_target
        pos = np.zeros(len(anchors), dtype=bool)
        reg = np.zeros(len(anchors), dtype=bool)
        best = np.full(len(anchors), np.inf)
        for ann in anns:
            if ann.class_label not in self.classes:
                continue
            d = np.hypot(anchors[:, 0] - ann.center[0], anchors[:, 1] - ann.center[1])
            a = int(np.argmin(d))
            if d[a] > self.cfg.stride:
                continue
            T[a, self.classes.index(ann.class_label)] = self.cfg.logit_target
            pos[a] = True
            for b in np.flatnonzero((d <= max(self.cfg.reg_radius, d[a])) & (d < best)):
                best[b] = d[b]
                T[b, C:C + 2] = ann.center[:2] - anchors[b]
                T[b, C + 2] = ann.center[2]
                T[b, C + 3:C + 6] = np.log(ann.size)
                T[b, C + 6] = ann.yaw
                T[b, C + 7:C + 9] = ann.velocity
                reg[b] = True
        return T, pos, reg

    def _calibrate(self):
        # always fit on the generator's reference rig so the weights do not
        # depend on which rig the detector happens to see first
        from .synth import synth_generate  # generator depends on nothing here

        cfg = self.cfg
        C = len(self.classes)
        # with zero fusion the temporal variant must equal the single-frame one
        n_frames_seq = 2 if cfg.temporal and cfg.fusion > 0 else 1
        H_all, T_all, P_all, R_all = [], [], [], []
        n_seq = max(1, cfg.calib_frames // n_frames_seq)
        for i in range(n_seq):
            seq = synth_generate(
                cfg.calib_seed + i,
                n_frames=n_frames_seq,
                n_cameras=cfg.calib_cameras,
                n_objects=cfg.calib_objects,
                class_set=self.classes,
            )
            pool = self._pool_for(seq.frames[0].cameras)
            state = None
            for frame in seq.frames:
                feats = self.pooled_features(frame)
                fused = self._fuse(feats, state)
                state = ToyState(fused, 0)
                T, pos, reg = self._targets(pool.anchors, frame.annotations)
                H_all.append(self._hidden(fused))
                T_all.append(T)
                P_all.append(pos)
                R_all.append(reg)
        Hm = np.vstack(H_all)
        Tm = np.vstack(T_all)
        Pm = np.concatenate(P_all)
        Rm = np.concatenate(R_all)
        X = np.hstack([Hm, np.ones((len(Hm), 1))])
        reg = cfg.ridge * len(X) * np.eye(X.shape[1])
        reg[-1, -1] = 0.0
        w = np.where(Pm, cfg.positive_weight, 1.0)
        Xw = X * w[:, None]
        coef_cls = np.linalg.solve(X.T @ Xw + reg, Xw.T @ Tm[:, :C])
        Xr = X[Rm]
        regr = cfg.ridge * max(len(Xr), 1) * np.eye(X.shape[1])
        regr[-1, -1] = 0.0
        coef_reg = np.linalg.solve(Xr.T @ Xr + regr, Xr.T @ Tm[Rm, C:])
        coef = np.hstack([coef_cls, coef_reg])
        self.Wo = np.ascontiguousarray(coef[:-1].T)
        self.bo = coef[-1].copy()


def make_detector(detector_id: str) -> ToyDetector:
    """Build a registered detector by id."""
    try:
        factory = REGISTRY[detector_id]
    except KeyError:
        raise KeyError(f"unknown detector id {detector_id!r}; known: {sorted(REGISTRY)}") from None
    return factory()


REGISTRY = {
    "toy-a": lambda: ToyDetector(ToyDetectorConfig(weight_seed=0), name="toy-a"),
    "toy-b": lambda: ToyDetector(ToyDetectorConfig(weight_seed=1), name="toy-b"),
    "toy-temporal": lambda: ToyDetector(
        ToyDetectorConfig(weight_seed=2, fusion=0.5, temporal=True), name="toy-temporal"
    ),
}
