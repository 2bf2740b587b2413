"""Deterministic synthetic multi-camera driving scenes.

Objects are flat-shaded cuboids in per-class colors standing on the ground
plane in front of a small camera rig. Everything is a pure function of the
arguments, and every float that ends up in an annotation or calibration is
pre-rounded to the on-disk precision so save/load is exact.
"""

from __future__ import annotations

import math

import numpy as np
from skimage.draw import polygon as fill_polygon

from .geometry import Z_NEAR, box_corners, project_points
from .scene import Annotation, CameraModel, Frame, Sequence, look_camera, q9

DEFAULT_CLASSES = ("Car", "Pedestrian", "Barrier")

# (w, l, h) in meters
CLASS_SIZES = {
    "Car": (1.9, 4.4, 1.6),
    "Pedestrian": (0.7, 0.7, 1.8),
    "Barrier": (2.0, 0.5, 1.0),
    "Truck": (2.5, 7.0, 3.0),
    "Bicycle": (0.6, 1.7, 1.3),
}
CLASS_COLORS = {
    "Car": (205, 45, 40),
    "Pedestrian": (40, 70, 215),
    "Barrier": (230, 205, 35),
    "Truck": (40, 170, 60),
    "Bicycle": (190, 60, 200),
}
_EXTRA_COLORS = [(30, 200, 200), (240, 140, 20), (120, 60, 20), (250, 250, 250), (20, 20, 20)]
CLASS_SPEED = {"Car": 4.0, "Pedestrian": 1.2, "Barrier": 0.0, "Truck": 3.0, "Bicycle": 2.5}

IMAGE_HEIGHT = 112
IMAGE_WIDTH = 192
FOCAL = 112.0
CAMERA_HEIGHT = 2.0
HORIZON = 0.3
CAMERA_SPACING = math.radians(70.0)
FRAME_DT = 0.5
DEPTH_RANGE = (5.0, 24.0)

# cuboid faces as vertex indices into box_corners() order, with flat shade
_FACES = (
    ((0, 1, 2, 3), 1.0),
    ((4, 5, 6, 7), 0.45),
    ((0, 1, 5, 4), 0.85),
    ((2, 3, 7, 6), 0.8),
    ((0, 3, 7, 4), 0.7),
    ((1, 2, 6, 5), 0.65),
)


class GenerationError(RuntimeError):
    """Object placement failed."""


def class_color(label: str, class_set) -> np.ndarray:
    if label in CLASS_COLORS:
        return np.array(CLASS_COLORS[label], dtype=np.float64)
    extras = [c for c in class_set if c not in CLASS_COLORS]
    return np.array(_EXTRA_COLORS[extras.index(label) % len(_EXTRA_COLORS)], dtype=np.float64)


def make_rig(n_cameras: int, width: int = IMAGE_WIDTH, height: int = IMAGE_HEIGHT,
             focal: float = FOCAL) -> tuple:
    """Level cameras fanned symmetrically about the forward axis."""
    yaws = (np.arange(n_cameras) - (n_cameras - 1) / 2.0) * CAMERA_SPACING
    return tuple(
        look_camera((0.0, 0.0, CAMERA_HEIGHT), float(y), focal, width, height, HORIZON) for y in yaws
    )


def background(cam: CameraModel) -> np.ndarray:
    """Fixed sky/ground gradient with a faint ground texture."""
    H, W = cam.height, cam.width
    horizon = cam.intrinsics[1, 2]
    v = np.arange(H, dtype=np.float64)[:, None] + 0.5
    u = np.arange(W, dtype=np.float64)[None, :] + 0.5
    img = np.empty((H, W, 3))
    sky_t = np.clip(v / max(horizon, 1.0), 0, 1)
    ground_t = np.clip((v - horizon) / max(H - horizon, 1.0), 0, 1)
    sky = np.array([140.0, 175.0, 220.0]) + sky_t[..., None] * np.array([55.0, 40.0, 15.0])
    ground = np.array([105.0, 100.0, 95.0]) + ground_t[..., None] * np.array([35.0, 30.0, 25.0])
    texture = 8.0 * np.sin(u / 6.0) * np.sin(v / 4.0)
    is_sky = np.broadcast_to(v < horizon, (H, W))
    img[:] = np.where(is_sky[..., None], np.broadcast_to(sky, (H, W, 3)),
                      np.broadcast_to(ground, (H, W, 3)) + texture[..., None])
    return np.clip(np.rint(img), 0, 255)


def render(anns, cameras, class_set) -> tuple:
    """Rasterise annotated cuboids into one image per camera.

    Objects are painted far-to-near; faces are back-face culled and carry
    flat shading plus horizontal stripes.
    """
    images = []
    for cam in cameras:
        img = background(cam)
        cam_center = -cam.rotation.T @ cam.translation
        order = sorted(
            range(len(anns)),
            key=lambda i: -float(cam.world_to_camera(anns[i].center[None])[0, 2]),
        )
        for i in order:
            ann = anns[i]
            pts = box_corners(ann).points
            uv, z = project_points(pts[:8], cam)
            if np.any(z[:8] <= Z_NEAR):
                continue
            color = class_color(ann.class_label, class_set)
            for idx, shade in _FACES:
                idx = list(idx)
                face = pts[idx]
                normal = np.cross(face[1] - face[0], face[3] - face[0])
                fc = face.mean(axis=0)
                if np.dot(normal, fc - ann.center) < 0:
                    normal = -normal
                if np.dot(normal, cam_center - fc) <= 0:
                    continue
                rr, cc = fill_polygon(uv[idx, 1] - 0.5, uv[idx, 0] - 0.5, shape=img.shape[:2])
                stripes = np.where((rr // 3) % 2 == 0, 1.0, 0.85)
                img[rr, cc] = np.clip(np.rint(color * shade * stripes[:, None]), 0, 255)
        images.append(img)
    return tuple(images)


def _place_objects(rng, n_objects, cameras, class_set):
    placed = []
    half_fov = math.atan2(cameras[0].width / 2.0, cameras[0].intrinsics[0, 0])
    for k in range(n_objects):
        label = class_set[int(rng.integers(len(class_set)))]
        w, l, h = CLASS_SIZES.get(label, (1.0, 1.0, 1.0))
        radius = 0.5 * math.hypot(w, l)
        for _ in range(1000):
            cam = cameras[int(rng.integers(len(cameras)))]
            depth = rng.uniform(*DEPTH_RANGE)
            bearing = rng.uniform(-0.75, 0.75) * half_fov
            cam_yaw = math.atan2(cam.rotation[2, 1], cam.rotation[2, 0])
            heading = cam_yaw - bearing
            rng_xy = depth / math.cos(bearing)
            x, y = rng_xy * math.cos(heading), rng_xy * math.sin(heading)
            if all(math.hypot(x - px, y - py) > radius + pr + 0.5 for px, py, pr, _ in placed):
                break
        else:
            raise GenerationError(f"could not place object {k} after 1000 tries")
        yaw = rng.uniform(-math.pi, math.pi)
        speed = CLASS_SPEED.get(label, 1.0) * rng.uniform(0.0, 1.0)
        placed.append((x, y, radius, (label, (w, l, h), yaw, speed)))
    return placed


def synth_generate(
    seed: int,
    n_frames: int = 1,
    n_cameras: int = 3,
    n_objects: int = 4,
    class_set=DEFAULT_CLASSES,
    *,
    width: int = IMAGE_WIDTH,
    height: int = IMAGE_HEIGHT,
    focal: float = FOCAL,
) -> Sequence:
    """Generate a synthetic sequence; a pure function of its arguments."""
    if n_frames < 0 or n_cameras < 0 or n_objects < 0:
        raise ValueError("counts must be non-negative")
    class_set = tuple(class_set)
    if not class_set:
        raise ValueError("class_set must be non-empty")
    rng = np.random.default_rng(seed)
    cameras = make_rig(n_cameras, width, height, focal)
    placed = _place_objects(rng, n_objects, cameras, class_set) if cameras else []
    frames = []
    for t in range(n_frames):
        anns = []
        for k, (x, y, _, (label, size, yaw, speed)) in enumerate(placed):
            vx, vy = speed * math.cos(yaw), speed * math.sin(yaw)
            vx, vy = q9(vx), q9(vy)
            cx, cy = x + vx * FRAME_DT * t, y + vy * FRAME_DT * t
            anns.append(
                Annotation(
                    class_label=label,
                    center=[q9(cx), q9(cy), q9(size[2] / 2.0)],
                    size=[q9(s) for s in size],
                    yaw=q9(yaw) if q9(yaw) < math.pi else -math.pi,
                    velocity=[vx, vy],
                    attribute=None,
                    track_id=k,
                )
            )
        frames.append(Frame(render(anns, cameras, class_set), cameras, tuple(anns), t))
    return Sequence(tuple(frames), f"synth-{seed:06d}")
