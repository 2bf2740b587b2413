"""Scene data model, scene-directory persistence and dataset statistics.

Pixels live on a real-valued 0-255 scale throughout the package. Scene
directories hold a ``scene.json`` plus one 8-bit RGB PNG per camera per
frame; 8-bit images are widened to float64 on load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

SCENE_FILE = "scene.json"


class SceneError(Exception):
    """Base error for scene ingestion and persistence."""


class SceneLoadError(SceneError):
    """A file referenced by a scene directory is missing or unreadable."""


class ValidationError(SceneError, ValueError):
    """A field violates the scene schema or a data-model invariant."""


def q9(x: float) -> float:
    """Round ``x`` to the 9 significant digits used on disk."""
    return float(f"{float(x):.9g}")


def _as_vec(name: str, value: Any, n: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{name}: expected {n} numbers") from exc
    if arr.shape != (n,):
        raise ValidationError(f"{name}: expected {n} numbers, got {arr.size}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name}: non-finite value")
    return arr


@dataclass(frozen=True)
class CameraModel:
    """Calibrated pinhole camera.

    ``extrinsics`` maps homogeneous world points into the camera frame
    (x right, y down, z forward).
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64)
        T = np.array(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValidationError("intrinsics: expected a 3x3 matrix")
        if T.shape != (4, 4):
            raise ValidationError("extrinsics: expected a 4x4 matrix")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(T))):
            raise ValidationError("camera: non-finite calibration")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValidationError("intrinsics: focal lengths must be positive")
        R = T[:3, :3]
        if np.max(np.abs(R.T @ R - np.eye(3))) >= 1e-6:
            raise ValidationError("extrinsics: rotation block is not orthonormal")
        if int(self.width) <= 0 or int(self.height) <= 0:
            raise ValidationError("camera: width and height must be positive")
        K.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def rotation(self) -> np.ndarray:
        return self.extrinsics[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.extrinsics[:3, 3]

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) world points to (N, 3) camera-frame points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.intrinsics, other.intrinsics)
            and np.array_equal(self.extrinsics, other.extrinsics)
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "intrinsics": self.intrinsics.tolist(),
            "extrinsics": self.extrinsics.tolist(),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "camera") -> "CameraModel":
        for key in ("intrinsics", "extrinsics", "width", "height"):
            if key not in d:
                raise ValidationError(f"{where}.{key}: missing field")
        try:
            K = np.asarray(d["intrinsics"], dtype=np.float64)
            T = np.asarray(d["extrinsics"], dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"{where}: malformed calibration matrix") from exc
        return cls(K, T, int(d["width"]), int(d["height"]))


def look_camera(position, yaw: float, focal: float, width: int, height: int,
                horizon: float = 0.5) -> CameraModel:
    """Level camera at ``position`` looking along world heading ``yaw``.

    World frame is x forward, y left, z up; the camera has no pitch or roll.
    ``horizon`` places the principal point as a fraction of image height.
    """
    c, s = math.cos(yaw), math.sin(yaw)
    R = np.array([[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]])
    R = np.vectorize(q9)(R)
    t = np.vectorize(q9)(-R @ np.asarray(position, dtype=np.float64))
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    K = np.array([[focal, 0.0, width / 2.0], [0.0, focal, height * horizon], [0.0, 0.0, 1.0]])
    return CameraModel(np.vectorize(q9)(K), T, width, height)


@dataclass(frozen=True)
class Annotation:
    """Ground-truth 3D box. ``size`` is (w, l, h) in meters."""

    class_label: str
    center: np.ndarray
    size: np.ndarray
    yaw: float
    velocity: np.ndarray
    attribute: str | None = None
    track_id: int = 0

    def __post_init__(self):
        center = _as_vec("center", self.center, 3)
        size = _as_vec("size", self.size, 3)
        velocity = _as_vec("velocity", self.velocity, 2)
        if np.any(size <= 0):
            raise ValidationError("size: components must be positive")
        yaw = float(self.yaw)
        if not (-math.pi <= yaw < math.pi):
            raise ValidationError("yaw out of range [-pi, pi)")
        if not isinstance(self.class_label, str) or not self.class_label:
            raise ValidationError("class_label: expected a non-empty string")
        for arr in (center, size, velocity):
            arr.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "velocity", velocity)
        object.__setattr__(self, "yaw", yaw)
        object.__setattr__(self, "track_id", int(self.track_id))

    def __eq__(self, other):
        if not isinstance(other, Annotation):
            return NotImplemented
        return (
            self.class_label == other.class_label
            and np.array_equal(self.center, other.center)
            and np.array_equal(self.size, other.size)
            and self.yaw == other.yaw
            and np.array_equal(self.velocity, other.velocity)
            and self.attribute == other.attribute
            and self.track_id == other.track_id
        )

    __hash__ = None

    def to_dict(self) -> dict:
        return {
            "class_label": self.class_label,
            "center": self.center.tolist(),
            "size": self.size.tolist(),
            "yaw": self.yaw,
            "velocity": self.velocity.tolist(),
            "attribute": self.attribute,
            "track_id": self.track_id,
        }

    @classmethod
    def from_dict(cls, d: dict, where: str = "annotation") -> "Annotation":
        for key in ("class_label", "center", "size", "yaw", "velocity"):
            if key not in d:
                raise ValidationError(f"{where}.{key}: missing field")
        try:
            return cls(
                class_label=d["class_label"],
                center=d["center"],
                size=d["size"],
                yaw=d["yaw"],
                velocity=d["velocity"],
                attribute=d.get("attribute"),
                track_id=d.get("track_id", 0),
            )
        except ValidationError as exc:
            raise ValidationError(f"{where}.{exc}") from None


@dataclass(frozen=True)
class Frame:
    """One multi-camera capture: an (H, W, 3) float image per camera."""

    images: tuple
    cameras: tuple
    annotations: tuple = ()
    timestamp: int = 0

    def __post_init__(self):
        cameras = tuple(self.cameras)
        images = tuple(np.array(im, dtype=np.float64) for im in self.images)
        if len(images) != len(cameras):
            raise ValidationError(
                f"images: expected one image per camera ({len(cameras)}), got {len(images)}"
            )
        for i, (im, cam) in enumerate(zip(images, cameras)):
            if im.shape != (cam.height, cam.width, 3):
                raise ValidationError(
                    f"images[{i}]: shape {im.shape} does not match camera "
                    f"({cam.height}, {cam.width}, 3)"
                )
            if not np.all(np.isfinite(im)) or im.min(initial=0.0) < 0.0 or im.max(initial=0.0) > 255.0:
                raise ValidationError(f"images[{i}]: pixel values outside [0, 255]")
            im.setflags(write=False)
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "cameras", cameras)
        object.__setattr__(self, "annotations", tuple(self.annotations))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    def with_images(self, images) -> "Frame":
        """Copy of this frame with replaced images (same cameras and labels)."""
        return Frame(tuple(images), self.cameras, self.annotations, self.timestamp)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.timestamp == other.timestamp
            and self.cameras == other.cameras
            and self.annotations == other.annotations
            and len(self.images) == len(other.images)
            and all(np.array_equal(a, b) for a, b in zip(self.images, other.images))
        )

    __hash__ = None


@dataclass(frozen=True)
class Sequence:
    frames: tuple
    scene_id: str = "scene"

    def __post_init__(self):
        frames = tuple(self.frames)
        for a, b in zip(frames, frames[1:]):
            if b.timestamp <= a.timestamp:
                raise ValidationError("frames: timestamps must be strictly increasing")
            if b.cameras != a.cameras:
                raise ValidationError("frames: camera rig must be constant across frames")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)

    def __getitem__(self, i):
        return self.frames[i]


@dataclass(frozen=True)
class DatasetStats:
    pixel_mean: np.ndarray
    pixel_var: np.ndarray

    def __post_init__(self):
        mean = _as_vec("pixel_mean", self.pixel_mean, 3)
        var = _as_vec("pixel_var", self.pixel_var, 3)
        if np.any(var < 0):
            raise ValidationError("pixel_var: variance must be non-negative")
        object.__setattr__(self, "pixel_mean", mean)
        object.__setattr__(self, "pixel_var", var)


# ---------------------------------------------------------------------------
# persistence


def _quantize(obj):
    if isinstance(obj, float):
        return q9(obj)
    if isinstance(obj, dict):
        return {k: _quantize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_quantize(v) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Sorted-key JSON with floats rounded to 9 significant digits."""
    return json.dumps(_quantize(obj), sort_keys=True, indent=1, allow_nan=False) + "\n"


def _image_name(t: int, c: int) -> str:
    return f"frame_{t:04d}/cam_{c}.png"


def save_scene(seq: Sequence, path) -> None:
    """Write ``seq`` as a scene directory at ``path``.

    Images are rounded to 8 bits, so only integer-valued images round-trip
    exactly. Output bytes are deterministic.
    """
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise SceneError(f"cannot create scene directory {root}: {exc}") from exc
    cameras = seq.frames[0].cameras if seq.frames else ()
    frames = []
    for t, frame in enumerate(seq.frames):
        names = []
        for c, im in enumerate(frame.images):
            name = _image_name(t, c)
            out = root / name
            out.parent.mkdir(parents=True, exist_ok=True)
            pixels = np.clip(np.rint(im), 0, 255).astype(np.uint8)
            # no metadata chunks, so bytes depend only on pixels
            Image.fromarray(pixels, mode="RGB").save(out, format="PNG", optimize=False)
            names.append(name)
        frames.append(
            {
                "timestamp": frame.timestamp,
                "images": names,
                "annotations": [a.to_dict() for a in frame.annotations],
            }
        )
    doc = {
        "scene_id": seq.scene_id,
        "cameras": [c.to_dict() for c in cameras],
        "frames": frames,
    }
    try:
        (root / SCENE_FILE).write_text(canonical_json(doc))
    except OSError as exc:
        raise SceneError(f"cannot write {root / SCENE_FILE}: {exc}") from exc


def _read_png(path: Path) -> np.ndarray:
    if not path.is_file():
        raise SceneLoadError(f"missing image file: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except OSError as exc:
        raise SceneLoadError(f"unreadable image file: {path}") from exc
    return arr


def load_scene(path) -> Sequence:
    """Load and validate a scene directory written by :func:`save_scene`."""
    root = Path(path)
    meta = root / SCENE_FILE
    if not meta.is_file():
        raise SceneLoadError(f"missing scene file: {meta}")
    try:
        doc = json.loads(meta.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{SCENE_FILE}: invalid JSON ({exc})") from exc
    for key in ("cameras", "frames"):
        if key not in doc:
            raise ValidationError(f"{key}: missing field")
    cameras = tuple(
        CameraModel.from_dict(c, where=f"cameras[{i}]") for i, c in enumerate(doc["cameras"])
    )
    frames = []
    for t, fd in enumerate(doc["frames"]):
        where = f"frames[{t}]"
        for key in ("timestamp", "images", "annotations"):
            if key not in fd:
                raise ValidationError(f"{where}.{key}: missing field")
        if len(fd["images"]) != len(cameras):
            raise ValidationError(f"{where}.images: expected {len(cameras)} entries")
        images = [_read_png(root / name) for name in fd["images"]]
        anns = [
            Annotation.from_dict(a, where=f"{where}.annotations[{i}]")
            for i, a in enumerate(fd["annotations"])
        ]
        try:
            frames.append(Frame(tuple(images), cameras, tuple(anns), fd["timestamp"]))
        except ValidationError as exc:
            raise ValidationError(f"{where}.{exc}") from None
    return Sequence(tuple(frames), str(doc.get("scene_id", root.name)))


# ---------------------------------------------------------------------------
# statistics


def dataset_stats(seqs: Iterable[Sequence]) -> DatasetStats:
    """Per-channel population mean and variance over every image pixel.

    Per-image moments are merged with the pairwise (Chan et al.) update,
    so the whole dataset is never materialised at once.
    """
    n = 0
    mean = np.zeros(3)
    m2 = np.zeros(3)
    for seq in seqs:
        for frame in seq.frames:
            for im in frame.images:
                px = im.reshape(-1, 3)
                nb = px.shape[0]
                if nb == 0:
                    continue
                mb = px.mean(axis=0)
                m2b = ((px - mb) ** 2).sum(axis=0)
                delta = mb - mean
                tot = n + nb
                mean = mean + delta * (nb / tot)
                m2 = m2 + m2b + delta**2 * (n * nb / tot)
                n = tot
    if n == 0:
        raise ValueError("dataset_stats needs at least one image")
    return DatasetStats(mean, np.maximum(m2 / n, 0.0))
