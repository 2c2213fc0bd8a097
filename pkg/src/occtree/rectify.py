"""Iterative structure rectification.

Each round, per split level: keep the top ``keep_ratio`` most confident mask
values untouched, ask a :class:`SplitProbabilityProvider` for fresh split
probabilities on the rest, blend them with the old values, and finally
re-derive the octree structure with the configured selection ratios.
"""

from __future__ import annotations

import abc
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import ConfigError, DimensionError, ProviderError
from .grid import DenseGrid, unravel
from .octree import OctreeConfig, OctreeGT, OctreeMask, OctreeStructure, ceil_fraction, derive_structure


DEFAULT_KEEP_RATIOS = (0.10, 0.30)
DEFAULT_BLEND_NEW = (0.60, 0.50)


def _per_level(values, n, name):
    values = tuple(float(v) for v in values)
    if len(values) == 1 and n > 1:
        values = values * n
    if len(values) != n:
        raise ConfigError(f"{name}: need {n} values, got {len(values)}")
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise ConfigError(f"{name}: {v} outside [0, 1]")
    return values


def _fit(defaults, n):
    return defaults[:n] + (defaults[-1],) * max(0, n - len(defaults))


@dataclass(frozen=True)
class RectifyConfig:
    """Per-level keep ratios and blend weights plus the number of rounds.

    ``None`` fits the defaults (keep 0.1/0.3, blend 0.6/0.5) to the depth in
    :meth:`for_depth`.
    """

    keep_ratios: tuple = None
    blend_new: tuple = None
    iterations: int = 3

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        object.__setattr__(self, "iterations", int(self.iterations))
        for name in ("keep_ratios", "blend_new"):
            values = getattr(self, name)
            if values is not None:
                object.__setattr__(self, name, _per_level(values, len(tuple(values)), name))

    def for_depth(self, depth: int) -> "RectifyConfig":
        """Broadcast single values across ``depth - 1`` levels and check lengths."""
        n = depth - 1
        keep = self.keep_ratios if self.keep_ratios is not None else _fit(DEFAULT_KEEP_RATIOS, n)
        blend = self.blend_new if self.blend_new is not None else _fit(DEFAULT_BLEND_NEW, n)
        return RectifyConfig(_per_level(keep, n, "keep_ratios"), _per_level(blend, n, "blend_new"),
                             self.iterations)


class SplitProbabilityProvider(abc.ABC):
    """Source of fresh split probabilities for low-confidence nodes."""

    @abc.abstractmethod
    def __call__(self, level: int, coords: np.ndarray) -> np.ndarray:
        """Return one probability in [0, 1] per row of the ``(n, 3)`` ``coords``."""


class ConstantProvider(SplitProbabilityProvider):
    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, level, coords):
        return np.full(len(coords), self.value)


class OracleProvider(SplitProbabilityProvider):
    """Ground-truth split labels, each flipped with probability ``noise``.

    Flips are drawn from a generator seeded once at construction, so every
    call sees fresh noise while the whole sequence of calls is reproducible.
    """

    def __init__(self, gt: OctreeGT, noise: float = 0.0, seed: int = 0):
        if not 0.0 <= noise <= 1.0:
            raise ConfigError(f"noise rate {noise} outside [0, 1]")
        self.gt = gt
        self.noise = float(noise)
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def __call__(self, level, coords):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        truth = self.gt.levels[level].values[coords[:, 0], coords[:, 1], coords[:, 2]].astype(np.float64)
        if self.noise == 0.0:
            return truth
        flip = self._rng.random(len(coords)) < self.noise
        return np.where(flip, 1.0 - truth, truth)


class FileProvider(SplitProbabilityProvider):
    """Probabilities read from a stored :class:`OctreeMask`."""

    def __init__(self, mask: OctreeMask):
        self.mask = mask

    @classmethod
    def from_path(cls, path):
        from .io import read_mask

        return cls(read_mask(path))

    def __call__(self, level, coords):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
        return self.mask.levels[level].values[coords[:, 0], coords[:, 1], coords[:, 2]].astype(np.float64)


def partition_confidence(mask_level: DenseGrid, keep_ratio: float):
    """Split a level into high- and low-confidence node sets.

    Returns two ascending arrays of linear indices: the ``ceil(keep_ratio * n)``
    largest values (ties to the smaller index) and their complement.
    """
    if not 0.0 <= keep_ratio <= 1.0:
        raise ConfigError(f"keep ratio {keep_ratio} outside [0, 1]")
    vals = mask_level.values.ravel().astype(np.float64)
    k = ceil_fraction(keep_ratio, vals.size)
    order = np.argsort(-vals, kind="stable")
    high = np.sort(order[:k])
    low = np.sort(order[k:])
    return high, low


def rectify_level(mask_level: DenseGrid, keep_ratio: float, blend_new: float,
                  provider: SplitProbabilityProvider, level: int) -> DenseGrid:
    """One rectification pass over one level; high-confidence values are kept bit-for-bit."""
    if not 0.0 <= blend_new <= 1.0:
        raise ConfigError(f"blend weight {blend_new} outside [0, 1]")
    _, low = partition_confidence(mask_level, keep_ratio)
    out = mask_level.values.ravel().copy()
    if low.size:
        coords = unravel(mask_level.dims, low)
        p_new = np.asarray(provider(level, coords), dtype=np.float64).reshape(-1)
        if p_new.size != low.size:
            raise ProviderError(f"provider returned {p_new.size} values for {low.size} nodes at level {level}")
        if not (np.all(p_new >= 0.0) and np.all(p_new <= 1.0)):
            raise ProviderError(f"provider returned probabilities outside [0, 1] at level {level}")
        p_old = out[low].astype(np.float64)
        out[low] = (blend_new * p_new + (1.0 - blend_new) * p_old).astype(np.float32)
    return mask_level.with_values(out.reshape(mask_level.values.shape))


@dataclass
class RectifyResult:
    mask: OctreeMask
    structure: OctreeStructure
    masks: List[OctreeMask] = field(default_factory=list)
    structures: List[OctreeStructure] = field(default_factory=list)


def rectify_iterate(mask: OctreeMask, config: OctreeConfig, rcfg: RectifyConfig,
                    provider: SplitProbabilityProvider) -> RectifyResult:
    """Run ``rcfg.iterations`` rounds of rectify-then-reselect.

    ``masks[i]`` / ``structures[i]`` hold the state after round ``i + 1``.
    """
    mask.check_config(config)
    rcfg = rcfg.for_depth(config.depth)
    masks, structures = [], []
    current = mask
    for _ in range(rcfg.iterations):
        levels = [rectify_level(g, keep, blend, provider, lev)
                  for lev, (g, keep, blend) in enumerate(zip(current.levels, rcfg.keep_ratios, rcfg.blend_new))]
        current = OctreeMask(levels)
        masks.append(current)
        structures.append(derive_structure(current, config))
    return RectifyResult(current, structures[-1], masks, structures)


def parse_provider(spec: str, seed: int = 0) -> SplitProbabilityProvider:
    """Build a provider from ``oracle:<gt path>[:noise]``, ``const:<v>`` or ``file:<mask path>``."""
    kind, _, rest = spec.partition(":")
    if kind == "const":
        try:
            value = float(rest)
        except ValueError:
            raise ConfigError(f"bad constant provider {spec!r}") from None
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"constant provider value {value} outside [0, 1]")
        return ConstantProvider(value)
    if kind == "file":
        if not rest:
            raise ConfigError("file provider needs a path")
        return FileProvider.from_path(rest)
    if kind == "oracle":
        path, noise = rest, 0.0
        head, sep, tail = rest.rpartition(":")
        if sep:
            try:
                noise = float(tail)
                path = head
            except ValueError:
                pass
        if not path:
            raise ConfigError("oracle provider needs a ground-truth path")
        from .io import read_gt

        return OracleProvider(read_gt(path), noise, seed)
    raise ConfigError(f"unknown provider {spec!r}; use oracle:PATH[:NOISE], const:V or file:PATH")


def check_provider_geometry(provider, mask: OctreeMask):
    ref = getattr(provider, "gt", None) or getattr(provider, "mask", None)
    if ref is not None and (ref.depth != mask.depth or ref.base_dims != mask.base_dims):
        raise DimensionError(f"provider pyramid (depth {ref.depth}, base {ref.base_dims}) does not match "
                             f"mask (depth {mask.depth}, base {mask.base_dims})")
