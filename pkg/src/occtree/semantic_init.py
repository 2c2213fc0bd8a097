"""Split-probability initialization from per-camera segmentation maps.

Every finest voxel center is projected into each camera; the semantic
category of the pixel it lands on adds a weight (foreground > background >
ground, void adds nothing). The weight volume is then average-pooled to every
split level and max-normalized into an :class:`~occtree.octree.OctreeMask`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .geometry import project_points, voxel_centers
from .grid import DenseGrid, block_average
from .octree import OctreeConfig, OctreeMask


class SemClass(enum.IntEnum):
    VOID = 0
    GROUND = 1
    BACKGROUND = 2
    FOREGROUND = 3

    @classmethod
    def parse(cls, name: str) -> "SemClass":
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise ConfigError(f"unknown semantic category {name!r}") from None


@dataclass(frozen=True, eq=False)
class SegMap:
    """Per-pixel semantic category, stored as an ``(height, width)`` uint8 array."""

    classes: np.ndarray
    class_table: str = "-"

    def __post_init__(self):
        arr = np.array(self.classes, dtype=np.uint8)
        if arr.ndim != 2:
            raise DimensionError(f"segmap must be 2D (height, width), got shape {arr.shape}")
        if arr.size and arr.max() > max(SemClass):
            raise ConfigError(f"segmap holds category id {arr.max()} > {int(max(SemClass))}")
        arr.flags.writeable = False
        object.__setattr__(self, "classes", arr)

    @classmethod
    def empty(cls, width, height, class_table="-"):
        return cls(np.zeros((height, width), dtype=np.uint8), class_table)

    @property
    def width(self) -> int:
        return self.classes.shape[1]

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SegMap):
            return NotImplemented
        return self.class_table == other.class_table and np.array_equal(self.classes, other.classes)

    __hash__ = None


@dataclass(frozen=True)
class InitWeights:
    foreground: float = 1.0
    background: float = 0.5
    ground: float = 0.1

    def __post_init__(self):
        if not self.foreground >= self.background >= self.ground >= 0:
            raise ConfigError(f"weights must satisfy foreground >= background >= ground >= 0, got {self}")

    def lookup(self) -> np.ndarray:
        """Weight per :class:`SemClass` id."""
        return np.array([0.0, self.ground, self.background, self.foreground])

    def scaled(self, factor: float) -> "InitWeights":
        return InitWeights(self.foreground * factor, self.background * factor, self.ground * factor)


# Label ids of the synthetic scenes produced by :mod:`occtree.synth`.
DEFAULT_CLASS_TABLE = {
    0: SemClass.VOID,
    1: SemClass.GROUND,       # road
    2: SemClass.GROUND,       # sidewalk
    3: SemClass.BACKGROUND,   # building
    4: SemClass.BACKGROUND,   # vegetation
    5: SemClass.FOREGROUND,   # car
    6: SemClass.FOREGROUND,   # pedestrian
    7: SemClass.FOREGROUND,   # traffic cone
}

# Occ3D-nuScenes ids (17 = free). Ground follows the "driveable surface, other
# flat, sidewalk" grouping; everything else that is not an object is background.
NUSCENES_CLASS_TABLE = {
    0: SemClass.BACKGROUND,
    **{i: SemClass.FOREGROUND for i in range(1, 11)},
    11: SemClass.GROUND,
    12: SemClass.GROUND,
    13: SemClass.GROUND,
    14: SemClass.BACKGROUND,
    15: SemClass.BACKGROUND,
    16: SemClass.BACKGROUND,
    17: SemClass.VOID,
}


def parse_class_table(text: str) -> dict:
    """Parse ``<label_id> <category>`` lines; ``#`` starts a comment."""
    table = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"class table line {lineno}: expected '<label_id> <category>', got {raw!r}")
        try:
            label = int(parts[0])
        except ValueError:
            raise ConfigError(f"class table line {lineno}: bad label id {parts[0]!r}") from None
        if label in table:
            raise ConfigError(f"class table line {lineno}: duplicate label id {label}")
        table[label] = SemClass.parse(parts[1])
    return table


def format_class_table(table: dict) -> str:
    return "".join(f"{label} {table[label].name.lower()}\n" for label in sorted(table))


def load_class_table(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return parse_class_table(fh.read())


def accumulate_weights(geometry: DenseGrid, cameras, segmaps, weights: InitWeights = InitWeights(),
                       mode: str = "sum") -> DenseGrid:
    """Per-voxel weight volume at the finest resolution.

    ``geometry`` supplies dims, voxel size and origin (its values are ignored).
    For ``mode="sum"`` every camera that sees a voxel center adds the weight of
    the hit pixel's category; ``mode="max"`` keeps the largest single weight.
    """
    cameras = list(cameras)
    segmaps = list(segmaps)
    if len(cameras) != len(segmaps):
        raise ConfigError(f"{len(cameras)} cameras but {len(segmaps)} segmaps")
    if mode not in ("sum", "max"):
        raise ConfigError(f"mode must be 'sum' or 'max', got {mode!r}")
    centers = voxel_centers(geometry)
    table = weights.lookup()
    acc = np.zeros(len(centers), dtype=np.float64)
    for cam, seg in zip(cameras, segmaps):
        if (seg.width, seg.height) != cam.image_size:
            raise ConfigError(f"segmap {seg.width}x{seg.height} does not match camera image "
                              f"{cam.width}x{cam.height}")
        u, v, _, visible = project_points(cam, centers)
        idx = np.flatnonzero(visible)
        cls = seg.classes[np.floor(v[idx]).astype(np.int64), np.floor(u[idx]).astype(np.int64)]
        w = table[cls]
        if mode == "sum":
            acc[idx] += w
        else:
            acc[idx] = np.maximum(acc[idx], w)
    return DenseGrid.scalars(acc.reshape(tuple(geometry.dims)), geometry.voxel_size, geometry.origin)


def build_initial_mask(weights: DenseGrid, config: OctreeConfig) -> OctreeMask:
    """Average-pool the weight volume to each split level and scale by the level max."""
    if weights.dims != config.finest_dims:
        raise DimensionError(f"weight dims {weights.dims} != finest dims {config.finest_dims}")
    levels = []
    for lev in range(config.depth - 1):
        pooled = block_average(weights, config.footprint(lev))
        v = pooled.values.astype(np.float64)
        peak = v.max()
        if peak > 0:
            v = v / peak
        levels.append(pooled.with_values(np.clip(v, 0.0, 1.0).astype(np.float32)))
    return OctreeMask(levels)
