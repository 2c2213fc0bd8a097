"""Octree structures over dense grids.

Levels are numbered from the coarsest (level 0, ``base_dims``) to the finest
(level ``depth - 1``). A split mask, structure or ground truth has one grid per
split boundary, i.e. levels ``0 .. depth - 2``; the finest level never splits.
A level-``l`` node covers a cube of ``2 ** (depth - 1 - l)`` finest cells per
axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, LevelError, StructureError
from .grid import BINARY, LABEL, SCALAR, DenseGrid, GridDims, block_average, block_mode, unravel


def ceil_fraction(ratio, n: int) -> int:
    """``ceil(ratio * n)`` evaluated on the decimal value of ``ratio``.

    ``0.07 * 100`` is ``7.000000000000001`` in binary floating point, which
    would round up to 8; going through the shortest decimal repr keeps
    user-facing ratios exact.
    """
    return math.ceil(Fraction(str(float(ratio))) * n)


DEFAULT_SELECTION_RATIOS = (0.20, 0.60)


def default_ratios(depth: int) -> tuple:
    """The default ratios fitted to ``depth - 1`` boundaries (truncated, or padded with the last)."""
    n = max(int(depth) - 1, 1)
    base = DEFAULT_SELECTION_RATIOS
    return base[:n] + (base[-1],) * max(0, n - len(base))


@dataclass(frozen=True)
class OctreeConfig:
    """Depth, coarsest-level dims and per-boundary selection ratios.

    ``selection_ratios=None`` fits the defaults (0.2, 0.6) to the depth; a
    single ratio is broadcast to every boundary.
    """

    depth: int = 3
    base_dims: GridDims = GridDims(50, 50, 4)
    selection_ratios: tuple = None

    def __post_init__(self):
        if int(self.depth) < 2:
            raise ConfigError(f"octree depth must be >= 2, got {self.depth}")
        object.__setattr__(self, "depth", int(self.depth))
        object.__setattr__(self, "base_dims", GridDims.of(self.base_dims))
        given = self.selection_ratios if self.selection_ratios is not None else default_ratios(self.depth)
        ratios = tuple(float(r) for r in given)
        if len(ratios) == 1 and self.depth > 2:
            ratios = ratios * (self.depth - 1)
        if len(ratios) != self.depth - 1:
            raise ConfigError(f"need {self.depth - 1} selection ratios, got {len(ratios)}")
        for r in ratios:
            if not 0.0 < r <= 1.0:
                raise ConfigError(f"selection ratio {r} outside (0, 1]")
        object.__setattr__(self, "selection_ratios", ratios)

    @classmethod
    def for_finest(cls, finest_dims, depth=3, selection_ratios=None) -> "OctreeConfig":
        finest_dims = GridDims.of(finest_dims)
        f = 2 ** (int(depth) - 1)
        if not finest_dims.divisible_by(f):
            raise DimensionError(f"dims {finest_dims} not divisible by 2^(depth-1) = {f}")
        base = GridDims(finest_dims.x // f, finest_dims.y // f, finest_dims.z // f)
        return cls(depth, base, selection_ratios)

    @property
    def finest_dims(self) -> GridDims:
        return self.base_dims.scaled(2 ** (self.depth - 1))

    def level_dims(self, level: int) -> GridDims:
        if not 0 <= level < self.depth:
            raise LevelError(f"level {level} outside [0, {self.depth})")
        return self.base_dims.scaled(2**level)

    def footprint(self, level: int) -> int:
        """Finest cells per axis covered by one level-``level`` node."""
        return 2 ** (self.depth - 1 - level)


class _LevelStack:
    """Per-boundary grids with the doubling law checked on construction."""

    _kind = SCALAR

    def __init__(self, levels):
        levels = tuple(levels)
        if not levels:
            raise DimensionError("need at least one split level")
        for lev, g in enumerate(levels):
            if not isinstance(g, DenseGrid):
                raise TypeError("levels must be DenseGrid instances")
            if g.kind != self._kind:
                raise TypeError(f"level {lev} has kind {g.kind}, expected {self._kind}")
            want = levels[0].dims.scaled(2**lev)
            if g.dims != want:
                raise DimensionError(f"level {lev} dims {g.dims}, doubling law requires {want}")
        self.levels = levels

    @property
    def depth(self) -> int:
        return len(self.levels) + 1

    @property
    def base_dims(self) -> GridDims:
        return self.levels[0].dims

    @property
    def finest_dims(self) -> GridDims:
        return self.base_dims.scaled(2 ** (self.depth - 1))

    @property
    def finest_voxel_size(self):
        return tuple(v / 2 for v in self.levels[-1].voxel_size)

    @property
    def origin(self):
        return self.levels[0].origin

    def config(self, selection_ratios=None) -> OctreeConfig:
        ratios = selection_ratios if selection_ratios is not None else (1.0,) * (self.depth - 1)
        return OctreeConfig(self.depth, self.base_dims, ratios)

    def check_config(self, config: OctreeConfig):
        if config.depth != self.depth or config.base_dims != self.base_dims:
            raise DimensionError(
                f"{type(self).__name__} (depth {self.depth}, base {self.base_dims}) does not match "
                f"config (depth {config.depth}, base {config.base_dims})")

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return len(self.levels) == len(other.levels) and all(
            a == b for a, b in zip(self.levels, other.levels))

    __hash__ = None

    def __repr__(self):
        return f"{type(self).__name__}(depth={self.depth}, base_dims={self.base_dims})"


class OctreeMask(_LevelStack):
    """Per-level split probabilities in [0, 1]."""

    _kind = SCALAR

    def __init__(self, levels):
        super().__init__(levels)
        for lev, g in enumerate(self.levels):
            v = g.values
            if v.size and not (np.all(v >= 0.0) and np.all(v <= 1.0)):
                raise ConfigError(f"mask level {lev} has values outside [0, 1]")


class OctreeStructure(_LevelStack):
    """Per-level split decisions; ``split[l]`` is 1 where a level-``l`` node is a parent."""

    _kind = BINARY

    @property
    def split(self):
        return self.levels


class OctreeGT(_LevelStack):
    """1 where the labels inside a node's footprint are not all equal."""

    _kind = BINARY

    def as_structure(self) -> OctreeStructure:
        return OctreeStructure(self.levels)


def _geometry_levels(finest: DenseGrid, config: OctreeConfig, arrays, maker):
    out = []
    for lev, arr in enumerate(arrays):
        f = config.footprint(lev)
        out.append(maker(arr, tuple(v * f for v in finest.voxel_size), finest.origin))
    return out


def generate_octree_gt(gt: DenseGrid, config: OctreeConfig) -> OctreeGT:
    """Mark every node whose finest-voxel footprint mixes labels."""
    if gt.dims != config.finest_dims:
        raise DimensionError(f"ground truth dims {gt.dims} != finest dims {config.finest_dims}")
    if gt.kind == SCALAR:
        raise TypeError("octree ground truth needs a label grid")
    arrays = [kernels.block_nonuniform(gt.values, config.footprint(lev))
              for lev in range(config.depth - 1)]
    return OctreeGT(_geometry_levels(gt, config, arrays, DenseGrid.binary))


def _upsample_bool(a):
    return a.repeat(2, axis=0).repeat(2, axis=1).repeat(2, axis=2)


def derive_structure(mask: OctreeMask, config: OctreeConfig) -> OctreeStructure:
    """Top-k split selection, coarse to fine.

    Level 0 splits the ``ceil(ratio * n)`` most probable nodes. Deeper levels
    only consider children of the previous level's parents and split
    ``ceil(ratio * candidates)`` of them. Equal probabilities go to the
    smaller linear index.
    """
    mask.check_config(config)
    splits = []
    candidates = np.ones(tuple(config.base_dims), dtype=bool)
    for lev, (g, ratio) in enumerate(zip(mask.levels, config.selection_ratios)):
        vals = g.values.ravel()
        cidx = np.flatnonzero(candidates.ravel())
        k = ceil_fraction(ratio, cidx.size)
        order = np.argsort(-vals[cidx].astype(np.float64), kind="stable")
        chosen = cidx[order[:k]]
        s = np.zeros(vals.size, dtype=np.uint8)
        s[chosen] = 1
        s = s.reshape(g.values.shape)
        splits.append(DenseGrid.binary(s, g.voxel_size, g.origin))
        candidates = _upsample_bool(s.astype(bool))
    return OctreeStructure(splits)


def children_indices(level: int, coord, target_level: int, dims=None) -> np.ndarray:
    """Coordinates at ``target_level`` of every descendant of ``coord``.

    Returns an ``(8 ** (t - l), 3)`` int64 array in lexicographic order of the
    per-axis offset ``(da, db, dc)``, each offset in ``[0, 2 ** (t - l))``.
    ``dims``, when given, are the grid dims at ``level`` and bound ``coord``.
    """
    if target_level <= level:
        raise LevelError(f"target level {target_level} must be deeper than {level}")
    coord = np.asarray(coord, dtype=np.int64)
    if coord.shape != (3,) or np.any(coord < 0):
        raise IndexError(f"invalid node coordinate {coord.tolist()}")
    if dims is not None and np.any(coord >= np.asarray(tuple(dims))):
        raise IndexError(f"node coordinate {coord.tolist()} outside {GridDims(*dims)}")
    s = 2 ** (target_level - level)
    d = np.arange(s, dtype=np.int64)
    offsets = np.stack(np.meshgrid(d, d, d, indexing="ij"), axis=-1).reshape(-1, 3)
    return coord * s + offsets


def leaf_masks(structure: OctreeStructure):
    """Boolean leaf indicator per level ``0 .. depth - 1``.

    A node is a leaf when every ancestor splits and it does not (the finest
    level has no split bit). Split bits under an unsplit ancestor are inert.
    """
    active = np.ones(tuple(structure.base_dims), dtype=bool)
    out = []
    for g in structure.levels:
        s = g.values.astype(bool)
        out.append(active & ~s)
        active = _upsample_bool(active & s)
    out.append(active)
    return out


class Violation(NamedTuple):
    kind: str
    level: int
    coord: tuple

    def __str__(self):
        return f"{self.kind} violation at level {self.level}, node {self.coord}"


def validate_structure(structure: OctreeStructure) -> list:
    """List every invariant violation; empty means the structure is valid.

    Checks binary values and parent-chain monotonicity. With binary values the
    leaf partition follows from :func:`leaf_masks` (each finest cell's leaf is
    its first unsplit ancestor), so no separate partition check is needed.
    """
    violations = []
    for lev, g in enumerate(structure.levels):
        for idx in np.flatnonzero(g.values.ravel() > 1):
            violations.append(Violation("non-binary", lev, tuple(int(c) for c in unravel(g.dims, idx))))
    for lev in range(1, len(structure.levels)):
        parent = structure.levels[lev - 1].values.astype(bool)
        child = structure.levels[lev].values.astype(bool)
        bad = child & ~_upsample_bool(parent)
        for idx in np.flatnonzero(bad.ravel()):
            violations.append(Violation("monotonicity", lev,
                                        tuple(int(c) for c in unravel(structure.levels[lev].dims, idx))))
    return violations


def require_valid(structure: OctreeStructure):
    violations = validate_structure(structure)
    if violations:
        more = f" (+{len(violations) - 1} more)" if len(violations) > 1 else ""
        raise StructureError(f"invalid octree structure: {violations[0]}{more}")


class LeafCensus(NamedTuple):
    counts: tuple
    total: int


def leaf_census(structure: OctreeStructure) -> LeafCensus:
    """Leaf count per level (coarse to fine) and their sum ``N``."""
    require_valid(structure)
    counts = tuple(int(m.sum()) for m in leaf_masks(structure))
    return LeafCensus(counts, sum(counts))


@dataclass(frozen=True, eq=False)
class SparseOctreeField:
    """The leaf list of an octree: per leaf its level, node coordinate and payload.

    Leaves are ordered coarse level first, then by linear index within a level.
    Geometry (``voxel_size``, ``origin``) refers to the finest level.
    """

    depth: int
    base_dims: GridDims
    levels: np.ndarray
    coords: np.ndarray
    payload: np.ndarray
    voxel_size: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "base_dims", GridDims.of(self.base_dims))
        levels = np.array(self.levels, dtype=np.uint8).reshape(-1)
        coords = np.array(self.coords, dtype=np.int64).reshape(-1, 3)
        payload = np.array(self.payload)
        if payload.dtype not in (np.uint16, np.float32):
            raise TypeError(f"payload must be uint16 labels or float32 scalars, got {payload.dtype}")
        payload = payload.reshape(-1)
        if not (levels.size == coords.shape[0] == payload.size):
            raise StructureError("levels, coords and payload lengths differ")
        if levels.size and levels.max() >= self.depth:
            raise StructureError(f"leaf level {levels.max()} >= depth {self.depth}")
        for arr in (levels, coords, payload):
            arr.flags.writeable = False
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "payload", payload)
        object.__setattr__(self, "voxel_size", tuple(float(np.float32(v)) for v in self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(np.float32(v)) for v in self.origin))

    @property
    def kind(self) -> str:
        return LABEL if self.payload.dtype == np.uint16 else SCALAR

    @property
    def finest_dims(self) -> GridDims:
        return self.base_dims.scaled(2 ** (self.depth - 1))

    def level_counts(self) -> tuple:
        return tuple(int(n) for n in np.bincount(self.levels, minlength=self.depth))

    def __len__(self):
        return int(self.levels.size)

    def leaves(self):
        for lev, c, p in zip(self.levels, self.coords, self.payload):
            yield int(lev), (int(c[0]), int(c[1]), int(c[2])), p.item()

    def __eq__(self, other):
        if not isinstance(other, SparseOctreeField):
            return NotImplemented
        return (self.depth == other.depth and self.base_dims == other.base_dims
                and self.voxel_size == other.voxel_size and self.origin == other.origin
                and self.payload.dtype == other.payload.dtype
                and np.array_equal(self.levels, other.levels)
                and np.array_equal(self.coords, other.coords)
                and np.array_equal(self.payload, other.payload))

    __hash__ = None


def _leaf_list(structure):
    levels, coords = [], []
    for lev, m in enumerate(leaf_masks(structure)):
        c = np.argwhere(m)
        levels.append(np.full(len(c), lev, dtype=np.uint8))
        coords.append(c)
    return np.concatenate(levels), np.concatenate(coords).astype(np.int64)


def dense_to_octree(grid: DenseGrid, structure: OctreeStructure, pooling: str = "average") -> SparseOctreeField:
    """Pool ``grid`` onto the leaves of ``structure``.

    ``pooling="average"`` gives each leaf the mean of its footprint (float32
    payload); ``pooling="mode"`` gives the most frequent label of the whole
    footprint, smallest id on ties (uint16 payload).
    """
    if grid.dims != structure.finest_dims:
        raise DimensionError(f"field dims {grid.dims} != structure finest dims {structure.finest_dims}")
    if pooling not in ("average", "mode"):
        raise ConfigError(f"pooling must be 'average' or 'mode', got {pooling!r}")
    require_valid(structure)
    depth = structure.depth
    levels, coords = _leaf_list(structure)
    dtype = np.float32 if pooling == "average" else np.uint16
    payload = np.empty(levels.size, dtype=dtype)
    for lev in range(depth):
        sel = levels == lev
        if not sel.any():
            continue
        f = 2 ** (depth - 1 - lev)
        pooled = block_average(grid, f) if pooling == "average" else block_mode(grid, f)
        c = coords[sel]
        payload[sel] = pooled.values[c[:, 0], c[:, 1], c[:, 2]]
    return SparseOctreeField(depth, structure.base_dims, levels, coords, payload,
                             grid.voxel_size, grid.origin)


def octree_to_dense(sparse: SparseOctreeField, structure: OctreeStructure) -> DenseGrid:
    """Broadcast every leaf payload back over its footprint."""
    if sparse.depth != structure.depth or sparse.base_dims != structure.base_dims:
        raise StructureError("sparse field and structure disagree on depth or base dims")
    require_valid(structure)
    levels, coords = _leaf_list(structure)
    if not (np.array_equal(levels, sparse.levels) and np.array_equal(coords, sparse.coords)):
        raise StructureError("sparse field leaf set is inconsistent with the structure")
    values = kernels.scatter_leaves(tuple(sparse.finest_dims), sparse.payload.dtype, sparse.levels,
                                    sparse.coords, sparse.payload, sparse.depth)
    return DenseGrid(values, sparse.voxel_size, sparse.origin)


def full_split(config: OctreeConfig, voxel_size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> OctreeStructure:
    return _constant_structure(config, 1, voxel_size, origin)


def no_split(config: OctreeConfig, voxel_size=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> OctreeStructure:
    return _constant_structure(config, 0, voxel_size, origin)


def _constant_structure(config, value, voxel_size, origin):
    levels = []
    for lev in range(config.depth - 1):
        f = config.footprint(lev)
        levels.append(DenseGrid.binary(np.full(tuple(config.level_dims(lev)), value, dtype=np.uint8),
                                       tuple(v * f for v in np.broadcast_to(voxel_size, 3)), origin))
    return OctreeStructure(levels)
