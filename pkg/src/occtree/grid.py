"""Dense 3D fields: labels, scalars and binary masks on a regular lattice.

Values are stored as a C-ordered ``(x, y, z)`` numpy array, so the flat
position of cell ``(a, b, c)`` is ``((a * y) + b) * z + c`` (x-major,
z-fastest). Grids are immutable; every operation returns a new grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import DimensionError

LABEL = "label"
SCALAR = "scalar"
BINARY = "binary"

KIND_DTYPES = {LABEL: np.uint16, SCALAR: np.float32, BINARY: np.uint8}


class GridDims(NamedTuple):
    x: int
    y: int
    z: int

    @classmethod
    def of(cls, value) -> "GridDims":
        if isinstance(value, str):
            value = [int(v) for v in value.replace("x", ",").split(",")]
        dims = cls(*(int(v) for v in value))
        if min(dims) < 1:
            raise DimensionError(f"grid dims must be >= 1, got {tuple(dims)}")
        return dims

    @property
    def count(self) -> int:
        return self.x * self.y * self.z

    def scaled(self, factor: int) -> "GridDims":
        return GridDims(self.x * factor, self.y * factor, self.z * factor)

    def divisible_by(self, factor: int) -> bool:
        return all(d % factor == 0 for d in self)

    def __str__(self):
        return f"{self.x}x{self.y}x{self.z}"


def linear_index(dims, a, b, c) -> int:
    """Flat index of cell ``(a, b, c)``; raises ``IndexError`` outside the box."""
    dims = GridDims(*dims)
    if not (0 <= a < dims.x and 0 <= b < dims.y and 0 <= c < dims.z):
        raise IndexError(f"cell ({a}, {b}, {c}) outside grid {dims}")
    return ((a * dims.y) + b) * dims.z + c


def unravel(dims, index):
    """Inverse of :func:`linear_index` for an array of flat indices -> ``(n, 3)``."""
    return np.stack(np.unravel_index(np.asarray(index, dtype=np.int64), tuple(dims)), axis=-1)


def _as_triple(v, name):
    # geometry is kept float32-representable so it survives the on-disk format
    t = tuple(float(x) for x in np.broadcast_to(np.asarray(v, dtype=np.float32), (3,)))
    if name == "voxel_size" and min(t) <= 0:
        raise DimensionError(f"voxel_size must be positive, got {t}")
    return t


@dataclass(frozen=True, eq=False)
class DenseGrid:
    """A 3D field with lattice geometry.

    ``voxel_size`` is the cell edge in meters per axis and ``origin`` the world
    position of the minimum corner of cell ``(0, 0, 0)``. The payload kind is
    carried by the dtype: uint16 labels, float32 scalars, uint8 binary.
    """

    values: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise DimensionError(f"grid values must be 3D, got shape {values.shape}")
        GridDims.of(values.shape)
        if values.dtype not in (np.uint16, np.float32, np.uint8):
            raise TypeError(f"unsupported grid dtype {values.dtype}; use labels(), scalars() or binary()")
        values = np.array(values, order="C", copy=True)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "voxel_size", _as_triple(self.voxel_size, "voxel_size"))
        object.__setattr__(self, "origin", _as_triple(self.origin, "origin"))

    @classmethod
    def labels(cls, values, voxel_size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "DenseGrid":
        arr = np.asarray(values)
        if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max):
            raise ValueError("label ids must fit in uint16")
        return cls(arr.astype(np.uint16), voxel_size, origin)

    @classmethod
    def scalars(cls, values, voxel_size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "DenseGrid":
        return cls(np.asarray(values, dtype=np.float32), voxel_size, origin)

    @classmethod
    def binary(cls, values, voxel_size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> "DenseGrid":
        return cls(np.asarray(values).astype(np.uint8), voxel_size, origin)

    @classmethod
    def zeros(cls, dims, kind=SCALAR, voxel_size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        return cls(np.zeros(tuple(GridDims.of(dims)), dtype=KIND_DTYPES[kind]), voxel_size, origin)

    @property
    def dims(self) -> GridDims:
        return GridDims(*self.values.shape)

    @property
    def kind(self) -> str:
        for kind, dtype in KIND_DTYPES.items():
            if self.values.dtype == dtype:
                return kind
        raise AssertionError(self.values.dtype)

    def with_values(self, values) -> "DenseGrid":
        """Same geometry, new payload (dims may differ only via rescaling helpers)."""
        return DenseGrid(values, self.voxel_size, self.origin)

    def rescaled(self, values, factor: float) -> "DenseGrid":
        """New grid sharing the origin with cell edge multiplied by ``factor``."""
        return DenseGrid(values, tuple(v * factor for v in self.voxel_size), self.origin)

    def same_geometry(self, other: "DenseGrid") -> bool:
        return (self.dims == other.dims and self.voxel_size == other.voxel_size
                and self.origin == other.origin)

    def __eq__(self, other):
        if not isinstance(other, DenseGrid):
            return NotImplemented
        return (self.same_geometry(other) and self.values.dtype == other.values.dtype
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def __repr__(self):
        return (f"DenseGrid(dims={self.dims}, kind={self.kind}, voxel_size={self.voxel_size}, "
                f"origin={self.origin})")


def _check_even(grid):
    if not grid.dims.divisible_by(2):
        raise DimensionError(f"2x pooling needs even dims, got {grid.dims}")


def block_average(grid: DenseGrid, factor: int) -> DenseGrid:
    """Average-pool by an integer ``factor`` per axis (float32 result)."""
    if not grid.dims.divisible_by(factor):
        raise DimensionError(f"dims {grid.dims} not divisible by {factor}")
    if factor == 1:
        return DenseGrid.scalars(grid.values, grid.voxel_size, grid.origin)
    return grid.rescaled(kernels.block_mean(grid.values, factor), factor)


def block_mode(grid: DenseGrid, factor: int) -> DenseGrid:
    """Mode-pool a label grid by ``factor``; ties resolve to the smallest label id."""
    if grid.kind == SCALAR:
        raise TypeError("mode pooling needs a label or binary grid")
    if not grid.dims.divisible_by(factor):
        raise DimensionError(f"dims {grid.dims} not divisible by {factor}")
    if factor == 1:
        return grid
    return grid.rescaled(kernels.block_mode(grid.values, factor), factor)


def average_pool_2x(grid: DenseGrid) -> DenseGrid:
    """Halve every axis; each output cell is the mean of its 8 source cells."""
    _check_even(grid)
    return block_average(grid, 2)


def mode_pool_2x(grid: DenseGrid) -> DenseGrid:
    """Halve every axis keeping the most frequent label of each octant."""
    _check_even(grid)
    return block_mode(grid, 2)


def replicate_upsample(grid: DenseGrid, factor: int) -> DenseGrid:
    v = grid.values
    for axis in range(3):
        v = np.repeat(v, factor, axis=axis)
    return grid.rescaled(v, 1.0 / factor)


def replicate_upsample_2x(grid: DenseGrid) -> DenseGrid:
    """Double every axis, copying each cell into its 8 children."""
    return replicate_upsample(grid, 2)
