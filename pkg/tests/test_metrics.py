import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occtree.metrics import (compression_stats, confusion_counts, focal_loss_mask, miou,
                             split_quality_miou)
from occtree.errors import ConfigError, DimensionError
from occtree.grid import DenseGrid
from occtree.octree import OctreeConfig, OctreeMask, derive_structure, full_split, no_split

from .oracles import naive_confusion, naive_miou


def test_perfect_prediction():
    g = np.array([0, 2, 2, 3])
    r = miou(g, g, 5)
    assert r.mean == 1.0
    assert np.isnan(r.per_class[1]) and np.isnan(r.per_class[4])


def test_hand_case():
    r = miou(np.array([0, 1, 1, 1]), np.array([0, 0, 1, 1]), 2)
    assert r.per_class.tolist() == [0.5, 2 / 3]
    assert r.mean == pytest.approx(7 / 12, abs=1e-15)


def test_unconditional_mean_divides_by_all_classes():
    r = miou(np.array([0, 1]), np.array([0, 1]), 4, unconditional=True)
    assert r.mean == 0.5


def test_ignore_ids():
    r = miou(np.array([1, 0, 1]), np.array([1, 1, 255 % 3]), 3, ignore=(0,))
    assert r.mean == pytest.approx(naive_miou([1, 0], [1, 1], 3))


def test_random_grids_match_oracle(rng):
    for _ in range(30):
        c = int(rng.integers(2, 9))
        g = rng.integers(0, c, (6, 5, 4))
        p = np.where(rng.random(g.shape) < 0.6, g, rng.integers(0, c, g.shape))
        counts = confusion_counts(p, g, c)
        tp, fp, fn = naive_confusion(p, g, c)
        assert counts.tp.tolist() == tp and counts.fp.tolist() == fp and counts.fn.tolist() == fn
        assert abs(miou(p, g, c).mean - naive_miou(p, g, c)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.permutations(list(range(5))))
def test_miou_permutation_invariant(seed, perm):
    rng = np.random.default_rng(seed)
    g = rng.integers(0, 5, 60)
    p = rng.integers(0, 5, 60)
    perm = np.array(perm)
    a, b = miou(p, g, 5), miou(perm[p], perm[g], 5)
    assert a.mean == pytest.approx(b.mean, abs=1e-12)
    np.testing.assert_allclose(b.per_class[perm], a.per_class)
    assert 0.0 <= a.mean <= 1.0


def test_metric_errors():
    with pytest.raises(DimensionError):
        miou(np.zeros(3, dtype=int), np.zeros(4, dtype=int), 2)
    with pytest.raises(ConfigError):
        miou(np.array([2]), np.array([0]), 2)


def test_split_quality_cases():
    g = np.array([1, 1, 0, 0])
    assert split_quality_miou(g, g).miou == 1.0
    assert split_quality_miou(1 - g, g).miou == 0.0
    q = split_quality_miou(np.array([1, 0, 0, 0]), g)
    assert (q.iou_split, q.iou_nosplit) == (0.5, 2 / 3)
    assert q.miou == pytest.approx(7 / 12)


def test_focal_confident_correct_is_tiny():
    g = np.array([1, 0, 1, 0])
    p = np.where(g == 1, 1 - 1e-7, 1e-7)
    assert focal_loss_mask(p, g) < 1e-5


def test_focal_reduces_to_bce(rng):
    assert abs(focal_loss_mask(np.array([0.5]), np.array([1]), alpha=1.0, gamma=0.0) - math.log(2)) < 1e-6
    p = rng.uniform(0.01, 0.99, 100)
    g = rng.integers(0, 2, 100)
    bce = -np.mean(g * np.log(p) + (1 - g) * np.log(1 - p))
    assert abs(focal_loss_mask(p, g, alpha=1.0, gamma=0.0) - bce) < 1e-6


def test_focal_monotone_toward_truth():
    ps = np.linspace(0.01, 0.99, 50)
    up = [focal_loss_mask(np.array([p]), np.array([1])) for p in ps]
    down = [focal_loss_mask(np.array([p]), np.array([0])) for p in ps]
    assert all(a > b for a, b in zip(up, up[1:]))
    assert all(a < b for a, b in zip(down, down[1:]))
    assert min(up + down) >= 0


def test_compression_examples():
    cfg = OctreeConfig()
    none = compression_stats(no_split(cfg), cfg)
    assert (none.total, none.leaf_fraction) == (10000, 0.015625)
    assert compression_stats(full_split(cfg)).leaf_fraction == 1.0
    mask = OctreeMask([DenseGrid.scalars(np.ones(tuple(cfg.level_dims(l)))) for l in range(2)])
    stats = compression_stats(derive_structure(mask, cfg))
    assert stats.leaf_counts == (8000, 6400, 76800)
    assert stats.total * 10000 == 1425 * stats.dense_count
    assert stats.split_fractions == (0.2, 0.12)  # 9600 parents of 80000 level-1 nodes


def test_fraction_monotone_in_ratios(rng):
    base = (3, 3, 2)
    mask = OctreeMask([DenseGrid.scalars(rng.random(tuple(d * 2**l for d in base))) for l in range(2)])
    grid = [0.1, 0.3, 0.5, 0.8, 1.0]
    for fixed in grid:
        fr0 = [compression_stats(derive_structure(mask, OctreeConfig(3, base, (r, fixed)))).leaf_fraction
               for r in grid]
        fr1 = [compression_stats(derive_structure(mask, OctreeConfig(3, base, (fixed, r)))).leaf_fraction
               for r in grid]
        assert fr0 == sorted(fr0) and fr1 == sorted(fr1)
