"""Box vertex math, pinhole projection and patch placement."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .scene import Annotation, CameraModel

Z_NEAR = 0.1

# local corner signs on (length, width, height) axes; index 8 is the center
_CORNER_SIGNS = np.array(
    [
        [1, 1, 1],
        [1, -1, 1],
        [-1, -1, 1],
        [-1, 1, 1],
        [1, 1, -1],
        [1, -1, -1],
        [-1, -1, -1],
        [-1, 1, -1],
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class BoxCorners:
    """(9, 3) world points: eight cuboid vertices followed by the center."""

    points: np.ndarray

    @property
    def vertices(self) -> np.ndarray:
        return self.points[:8]

    @property
    def center(self) -> np.ndarray:
        return self.points[8]


@dataclass(frozen=True)
class ProjectedBox:
    points2d: np.ndarray
    visible: np.ndarray
    depth: np.ndarray
    rect: tuple | None

    @property
    def center2d(self) -> np.ndarray:
        return self.points2d[8]

    @property
    def center_visible(self) -> bool:
        return bool(self.visible[8])


@dataclass(frozen=True)
class PatchRegion:
    """Axis-aligned image rectangle that receives a patch.

    ``width`` and ``height`` are the continuous extents after clipping;
    :attr:`bounds` gives the integer pixel slice ``(x0, y0, x1, y1)``.
    """

    center2d: np.ndarray
    width: float
    height: float
    mode: str
    scale: float
    bounds: tuple
    depth: float = 0.0

    @property
    def shape(self) -> tuple:
        x0, y0, x1, y1 = self.bounds
        return (y1 - y0, x1 - x0)

    @property
    def area(self) -> float:
        return self.width * self.height


def yaw_rotation(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_corners(ann: Annotation) -> BoxCorners:
    """Corners of the yaw-rotated cuboid; length runs along the heading."""
    w, l, h = ann.size
    half = np.array([l, w, h]) / 2.0
    local = _CORNER_SIGNS * half
    verts = local @ yaw_rotation(ann.yaw).T + ann.center
    return BoxCorners(np.vstack([verts, ann.center[None, :]]))


def project_points(points: np.ndarray, cam: CameraModel):
    """Pinhole-project (N, 3) world points.

    Returns ``(uv, depth)``; ``uv`` is NaN for points with depth <= Z_NEAR.
    """
    pc = cam.world_to_camera(points)
    z = pc[:, 2]
    K = cam.intrinsics
    uv = np.full((len(pc), 2), np.nan)
    front = z > Z_NEAR
    uv[front, 0] = K[0, 0] * pc[front, 0] / z[front] + K[0, 1] * pc[front, 1] / z[front] + K[0, 2]
    uv[front, 1] = K[1, 1] * pc[front, 1] / z[front] + K[1, 2]
    return uv, z


def backproject(uv: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Unit camera-frame ray directions through pixels ``uv`` (N, 2)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    homo = np.hstack([uv, np.ones((len(uv), 1))])
    rays = np.linalg.solve(cam.intrinsics, homo.T).T
    return rays / np.linalg.norm(rays, axis=1, keepdims=True)


def project_box(bc: BoxCorners, cam: CameraModel) -> ProjectedBox:
    uv, z = project_points(bc.points, cam)
    inside = (
        (z > Z_NEAR)
        & (uv[:, 0] >= 0)
        & (uv[:, 0] <= cam.width)
        & (uv[:, 1] >= 0)
        & (uv[:, 1] <= cam.height)
    )
    inside = np.where(np.isnan(uv[:, 0]), False, inside)
    rect = None
    if inside.sum() >= 2:
        vis = uv[inside]
        x0, y0 = vis.min(axis=0)
        x1, y1 = vis.max(axis=0)
        rect = (float(x0), float(y0), float(x1), float(y1))
    return ProjectedBox(uv, inside, z, rect)


def patch_region(
    pb: ProjectedBox,
    scale: float,
    mode: str = "dynamic",
    fixed_size=None,
    image_dims: tuple | None = None,
) -> PatchRegion | None:
    """Patch rectangle centered on the projected box center.

    In ``dynamic`` mode the patch is ``scale`` times the projected vertex
    rectangle along each axis; in ``fixed`` mode it is ``fixed_size``
    pixels (an int or a ``(width, height)`` pair). ``image_dims`` is
    ``(height, width)``. Returns None when the center is not visible or
    nothing of the patch survives clipping.
    """
    if not (0.0 < scale <= 1.0):
        raise ValueError(f"patch scale must lie in (0, 1], got {scale}")
    if mode not in ("dynamic", "fixed"):
        raise ValueError(f"unknown patch mode {mode!r}")
    if (mode == "fixed") != (fixed_size is not None):
        raise ValueError("fixed_size is required for, and only for, fixed mode")
    if not pb.center_visible:
        return None
    if mode == "dynamic":
        if pb.rect is None:
            return None
        x0, y0, x1, y1 = pb.rect
        w, h = scale * (x1 - x0), scale * (y1 - y0)
    else:
        if np.ndim(fixed_size) == 0:
            w = h = float(fixed_size)
        else:
            w, h = (float(v) for v in fixed_size)
    cx, cy = pb.center2d
    left, right = cx - w / 2.0, cx + w / 2.0
    top, bottom = cy - h / 2.0, cy + h / 2.0
    if image_dims is not None:
        H, W = image_dims
        left, right = max(left, 0.0), min(right, float(W))
        top, bottom = max(top, 0.0), min(bottom, float(H))
    cw, ch = right - left, bottom - top
    if cw <= 0 or ch <= 0 or cw * ch < 1.0:
        return None
    # round half up on every edge so equal extents give equal pixel counts
    ix0, iy0 = math.floor(left + 0.5), math.floor(top + 0.5)
    ix1, iy1 = math.floor(right + 0.5), math.floor(bottom + 0.5)
    if ix1 <= ix0 or iy1 <= iy0:
        return None
    return PatchRegion(
        center2d=np.array([cx, cy]),
        width=float(cw),
        height=float(ch),
        mode=mode,
        scale=float(scale),
        bounds=(ix0, iy0, ix1, iy1),
        depth=float(pb.depth[8]),
    )


def ground_center_distance(a, b) -> float:
    """Distance between the (x, y) ground-plane projections of two points."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def wrap_angle(x):
    """Wrap angles into [-pi, pi)."""
    return (np.asarray(x, dtype=np.float64) + np.pi) % (2 * np.pi) - np.pi
