"""Pinhole cameras and voxel-center projection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .grid import DenseGrid


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Ideal pinhole camera.

    Attributes:
        intrinsics: 3x3 matrix ``K`` with bottom row ``(0, 0, 1)``.
        extrinsics: 4x4 matrix ``T`` taking world (ego) homogeneous points into
            the camera frame (x right, y down, z forward).
        width: image width in pixels.
        height: image height in pixels.
    """

    intrinsics: np.ndarray
    extrinsics: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = np.array(self.intrinsics, dtype=np.float64)
        T = np.array(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3) or T.shape != (4, 4):
            raise ValueError(f"intrinsics must be 3x3 and extrinsics 4x4, got {K.shape} and {T.shape}")
        if not (K[2, 0] == 0 and K[2, 1] == 0 and K[2, 2] == 1):
            raise ValueError(f"intrinsics bottom row must be (0, 0, 1), got {K[2].tolist()}")
        if not np.array_equal(T[3], [0, 0, 0, 1]):
            raise ValueError(f"extrinsics bottom row must be (0, 0, 0, 1), got {T[3].tolist()}")
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        K.flags.writeable = False
        T.flags.writeable = False
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", T)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def image_size(self):
        return self.width, self.height

    def __eq__(self, other):
        if not isinstance(other, CameraModel):
            return NotImplemented
        return (self.image_size == other.image_size
                and np.array_equal(self.intrinsics, other.intrinsics)
                and np.array_equal(self.extrinsics, other.extrinsics))

    __hash__ = None


class PixelHit(NamedTuple):
    u: float
    v: float
    depth: float


def project_point(cam: CameraModel, p) -> Optional[PixelHit]:
    """Project one world point; ``None`` when behind the camera or off-image."""
    u, v, depth, ok = project_points(cam, np.asarray(p, dtype=np.float64).reshape(1, 3))
    if not ok[0]:
        return None
    return PixelHit(float(u[0]), float(v[0]), float(depth[0]))


def project_points(cam: CameraModel, points):
    """Vectorised :func:`project_point`.

    Returns ``(u, v, depth, visible)`` arrays; ``u``/``v`` are meaningless
    where ``visible`` is False.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    T = cam.extrinsics
    q = pts @ T[:3, :3].T + T[:3, 3]
    z = q[:, 2]
    front = z > 0
    safe = np.where(front, z, 1.0)
    K = cam.intrinsics
    u = K[0, 0] * q[:, 0] / safe + K[0, 2]
    v = K[1, 1] * q[:, 1] / safe + K[1, 2]
    visible = front & (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
    return u, v, z, visible


def voxel_center(grid: DenseGrid, coord):
    """World position of the center of cell ``coord``."""
    a, b, c = (int(x) for x in coord)
    dims = grid.dims
    if not (0 <= a < dims.x and 0 <= b < dims.y and 0 <= c < dims.z):
        raise IndexError(f"cell ({a}, {b}, {c}) outside grid {dims}")
    return tuple(o + (i + 0.5) * s for o, i, s in zip(grid.origin, (a, b, c), grid.voxel_size))


def voxel_centers(grid: DenseGrid) -> np.ndarray:
    """All cell centers as an ``(n, 3)`` array in linear-index order."""
    axes = [o + (np.arange(n) + 0.5) * s for o, n, s in zip(grid.origin, grid.dims, grid.voxel_size)]
    a, b, c = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel(), b.ravel(), c.ravel()], axis=-1)


def look_at_extrinsics(position, yaw: float, pitch: float = 0.0) -> np.ndarray:
    """World->camera matrix for a camera at ``position`` looking along ``yaw``.

    World frame is z-up; ``yaw`` is measured from +x toward +y, ``pitch``
    tilts the optical axis downward for positive values.
    """
    forward = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), -np.sin(pitch)])
    right = np.array([np.sin(yaw), -np.cos(yaw), 0.0])
    down = np.cross(forward, right)
    R = np.stack([right, down, forward])
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = -R @ np.asarray(position, dtype=np.float64)
    return T
