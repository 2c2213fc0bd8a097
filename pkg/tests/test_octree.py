import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occtree.errors import ConfigError, DimensionError, LevelError, StructureError
from occtree.grid import DenseGrid
from occtree.octree import (OctreeConfig, OctreeMask, OctreeStructure, SparseOctreeField, ceil_fraction,
                            children_indices, dense_to_octree, derive_structure, full_split,
                            generate_octree_gt, leaf_census, leaf_masks, no_split, octree_to_dense,
                            validate_structure)

from .oracles import footprint_cells, naive_decode, naive_octree_gt, naive_select, naive_violations


def uniform_mask(config, value=0.5):
    return OctreeMask([DenseGrid.scalars(np.full(tuple(config.level_dims(l)), value))
                       for l in range(config.depth - 1)])


def random_mask(config, rng):
    return OctreeMask([DenseGrid.scalars(rng.random(tuple(config.level_dims(l))))
                       for l in range(config.depth - 1)])


def structure_of(arrays):
    return OctreeStructure([DenseGrid.binary(a) for a in arrays])


def random_labels(rng, dims, classes=8):
    # blocky fields so that coarse nodes are sometimes uniform
    coarse = rng.integers(0, classes, tuple(max(1, d // 4) for d in dims))
    labels = np.repeat(np.repeat(np.repeat(coarse, 4, 0), 4, 1), 4, 2)[:dims[0], :dims[1], :dims[2]]
    noise = rng.random(dims) < 0.05
    labels = np.where(noise, rng.integers(0, classes, dims), labels)
    return DenseGrid.labels(labels)


def test_ceil_fraction_is_decimal_exact():
    assert 0.07 * 100 > 7
    assert ceil_fraction(0.07, 100) == 7
    assert ceil_fraction(0.55, 100) == 55
    assert ceil_fraction(0.6, 16000) == 9600
    assert ceil_fraction(0.2, 10000) == 2000
    assert ceil_fraction(0.1, 10) == 1
    assert ceil_fraction(0.0, 10) == 0


def test_config_validation():
    with pytest.raises(ConfigError):
        OctreeConfig(depth=1)
    with pytest.raises(ConfigError):
        OctreeConfig(selection_ratios=(0.0, 0.5))
    with pytest.raises(ConfigError):
        OctreeConfig(selection_ratios=(0.2, 0.6, 0.5))
    assert OctreeConfig(depth=4, selection_ratios=(0.3,)).selection_ratios == (0.3, 0.3, 0.3)
    with pytest.raises(DimensionError):
        OctreeConfig.for_finest((6, 8, 8), depth=3)
    cfg = OctreeConfig()
    assert cfg.finest_dims == (200, 200, 16)
    with pytest.raises(LevelError):
        cfg.level_dims(3)


# ----- octree ground truth


def test_gt_uniform_is_zero(backend):
    cfg = OctreeConfig.for_finest((8, 8, 8))
    gt = generate_octree_gt(DenseGrid.labels(np.full((8, 8, 8), 3)), cfg)
    assert all(g.values.sum() == 0 for g in gt.levels)


def test_gt_single_odd_voxel(backend):
    labels = np.zeros((4, 4, 4), dtype=np.uint16)
    labels[3, 1, 2] = 5
    gt = generate_octree_gt(DenseGrid.labels(labels), OctreeConfig.for_finest((4, 4, 4), depth=2))
    expected = np.zeros((2, 2, 2), dtype=np.uint8)
    expected[1, 0, 1] = 1
    np.testing.assert_array_equal(gt.levels[0].values, expected)


def test_gt_matches_oracle(backend, rng):
    for depth in (2, 3):
        cfg = OctreeConfig.for_finest((8, 8, 8), depth=depth)
        for _ in range(5):
            labels = random_labels(rng, (8, 8, 8), classes=3)
            gt = generate_octree_gt(labels, cfg)
            for got, want in zip(gt.levels, naive_octree_gt(labels.values, depth)):
                np.testing.assert_array_equal(got.values, want)


def test_gt_downward_consistent(rng):
    cfg = OctreeConfig.for_finest((16, 16, 8))
    for _ in range(10):
        gt = generate_octree_gt(random_labels(rng, (16, 16, 8)), cfg)
        assert validate_structure(gt.as_structure()) == []


def test_gt_geometry_per_level():
    labels = DenseGrid.labels(np.zeros((8, 8, 8)), voxel_size=(0.5, 0.5, 0.5), origin=(1, 1, 1))
    gt = generate_octree_gt(labels, OctreeConfig.for_finest((8, 8, 8)))
    assert gt.levels[0].voxel_size == (2.0, 2.0, 2.0)
    assert gt.levels[1].voxel_size == (1.0, 1.0, 1.0)
    assert gt.finest_voxel_size == (0.5, 0.5, 0.5)


def test_gt_dimension_mismatch():
    with pytest.raises(DimensionError):
        generate_octree_gt(DenseGrid.labels(np.zeros((4, 4, 4))), OctreeConfig.for_finest((8, 8, 8)))


# ----- structure selection


def test_full_ratio_splits_everything():
    cfg = OctreeConfig(2, (2, 2, 2), (1.0,))
    s = derive_structure(uniform_mask(cfg), cfg)
    assert s.levels[0].values.all()


def test_unique_maximum_selected():
    cfg = OctreeConfig(2, (3, 3, 3), (0.01,))
    v = np.zeros((3, 3, 3))
    v[2, 0, 1] = 0.9
    s = derive_structure(OctreeMask([DenseGrid.scalars(v)]), cfg)
    assert np.argwhere(s.levels[0].values).tolist() == [[2, 0, 1]]


def test_ties_go_to_smaller_index():
    cfg = OctreeConfig(2, (2, 2, 2), (0.25,))
    s = derive_structure(uniform_mask(cfg), cfg)
    assert np.flatnonzero(s.levels[0].values).tolist() == [0, 1]


def test_default_regime_census():
    cfg = OctreeConfig()
    s = derive_structure(uniform_mask(cfg), cfg)
    assert int(s.levels[0].values.sum()) == 2000
    assert int(s.levels[1].values.sum()) == 9600
    assert leaf_census(s) == ((8000, 6400, 76800), 91200)


def test_selection_matches_oracle(rng):
    cfg = OctreeConfig(3, (3, 2, 2), (0.3, 0.45))
    for _ in range(20):
        mask = random_mask(cfg, rng)
        if rng.random() < 0.5:  # plant ties
            mask = OctreeMask([g.with_values(np.round(g.values * 4) / 4) for g in mask.levels])
        got = derive_structure(mask, cfg)
        want = naive_select([g.values for g in mask.levels], cfg.selection_ratios)
        for a, b in zip(got.levels, want):
            np.testing.assert_array_equal(a.values, b)


def test_derived_structure_is_valid(rng):
    cfg = OctreeConfig(4, (2, 3, 1), (0.5, 0.3, 0.7))
    for _ in range(10):
        assert validate_structure(derive_structure(random_mask(cfg, rng), cfg)) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 15), st.floats(0.0, 1.0))
def test_monotone_selection(seed, node, bump):
    cfg = OctreeConfig(3, (2, 2, 4), (0.4, 0.5))
    mask = random_mask(cfg, np.random.default_rng(seed))
    before = derive_structure(mask, cfg).levels[0].values.ravel()
    v = mask.levels[0].values.ravel().copy()
    v[node] = max(v[node], np.float32(bump))
    raised = OctreeMask([mask.levels[0].with_values(v.reshape(2, 2, 4)), mask.levels[1]])
    after = derive_structure(raised, cfg).levels[0].values.ravel()
    if before[node]:
        assert after[node]


def test_derive_checks_config():
    cfg = OctreeConfig(3, (2, 2, 2))
    with pytest.raises(DimensionError):
        derive_structure(uniform_mask(OctreeConfig(3, (1, 2, 2))), cfg)


# ----- children calculus


def test_children_unit_octant():
    got = children_indices(0, (0, 0, 0), 1)
    assert sorted(map(tuple, got.tolist())) == [(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)]


def test_children_scale_four():
    got = children_indices(0, (1, 0, 2), 2)
    assert got.shape == (64, 3)
    assert (got[:, 0].min(), got[:, 0].max()) == (4, 7)
    assert (got[:, 1].min(), got[:, 1].max()) == (0, 3)
    assert (got[:, 2].min(), got[:, 2].max()) == (8, 11)
    assert len(set(map(tuple, got.tolist()))) == 64


def test_children_errors():
    with pytest.raises(LevelError):
        children_indices(1, (0, 0, 0), 1)
    with pytest.raises(IndexError):
        children_indices(0, (2, 0, 0), 1, dims=(2, 2, 2))
    with pytest.raises(IndexError):
        children_indices(0, (-1, 0, 0), 1)


def test_sibling_footprints_partition_parent():
    depth = 4
    parent = (1, 0, 1)
    full = set(footprint_cells(depth, 0, parent))
    union = set()
    for child in children_indices(0, parent, 1):
        cells = set(footprint_cells(depth, 1, tuple(child.tolist())))
        assert not cells & union
        union |= cells
    assert union == full


# ----- validation


def test_planted_monotonicity_violation():
    top = np.zeros((1, 1, 1), dtype=np.uint8)
    mid = np.zeros((2, 2, 2), dtype=np.uint8)
    mid[1, 0, 1] = 1
    v = validate_structure(structure_of([top, mid]))
    assert [(x.kind, x.level, x.coord) for x in v] == [("monotonicity", 1, (1, 0, 1))]


def test_violations_match_oracle(rng):
    for _ in range(30):
        arrays = [(rng.random(s) < 0.5).astype(np.uint8) for s in ((2, 1, 2), (4, 2, 4), (8, 4, 8))]
        if rng.random() < 0.3:
            arrays[1][tuple(rng.integers(0, d) for d in (4, 2, 4))] = 2
        got = [(v.kind, v.level, v.coord) for v in validate_structure(structure_of(arrays))]
        assert sorted(got) == sorted(naive_violations(arrays))


# ----- census and codecs


def test_census_constant_structures():
    cfg = OctreeConfig()
    assert leaf_census(no_split(cfg)) == ((10000, 0, 0), 10000)
    assert leaf_census(full_split(cfg)) == ((0, 0, 640000), 640000)


def test_census_rejects_invalid():
    top = np.zeros((1, 1, 1), dtype=np.uint8)
    with pytest.raises(StructureError):
        leaf_census(structure_of([top, np.ones((2, 2, 2), dtype=np.uint8)]))


def test_leaf_conservation(rng):
    cfg = OctreeConfig(4, (2, 1, 3), (0.5, 0.4, 0.6))
    for _ in range(10):
        s = derive_structure(random_mask(cfg, rng), cfg)
        counts = leaf_census(s).counts
        assert sum(n * 8 ** (cfg.depth - 1 - l) for l, n in enumerate(counts)) == cfg.finest_dims.count
        cover = np.zeros(tuple(cfg.finest_dims), dtype=int)
        for lev, m in enumerate(leaf_masks(s)):
            f = cfg.footprint(lev)
            cover += np.repeat(np.repeat(np.repeat(m, f, 0), f, 1), f, 2)
        assert (cover == 1).all()


def test_full_split_roundtrip_identity(backend, rng):
    cfg = OctreeConfig.for_finest((8, 4, 4))
    g = random_labels(rng, (8, 4, 4))
    sparse = dense_to_octree(g, full_split(cfg), "mode")
    assert sparse.level_counts() == (0, 0, 128)
    assert octree_to_dense(sparse, full_split(cfg)) == g
    scalars = DenseGrid.scalars(rng.random((8, 4, 4)))
    assert octree_to_dense(dense_to_octree(scalars, full_split(cfg)), full_split(cfg)) == scalars


def test_no_split_pools_whole_footprint(backend, rng):
    cfg = OctreeConfig.for_finest((8, 8, 4))
    g = random_labels(rng, (8, 8, 4), classes=3)
    sparse = dense_to_octree(g, no_split(cfg), "mode")
    assert len(sparse) == cfg.base_dims.count
    from .oracles import naive_block_mode
    np.testing.assert_array_equal(sparse.payload, naive_block_mode(g.values, 4).ravel())


def test_single_leaf_broadcast(backend):
    cfg = OctreeConfig(2, (1, 1, 1))
    sparse = SparseOctreeField(2, (1, 1, 1), [0], [[0, 0, 0]], np.array([9], dtype=np.uint16))
    out = octree_to_dense(sparse, no_split(cfg))
    assert out.dims == (2, 2, 2) and (out.values == 9).all()


def test_gt_structure_leaves_are_uniform(backend, rng):
    cfg = OctreeConfig.for_finest((16, 16, 8))
    g = random_labels(rng, (16, 16, 8))
    s = generate_octree_gt(g, cfg).as_structure()
    sparse = dense_to_octree(g, s, "mode")
    for lev, coord, payload in sparse.leaves():
        cells = footprint_cells(3, lev, coord)
        assert {int(g.values[c]) for c in cells} == {payload}


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(1, 2)))
def test_lossless_on_gt_structure(seed, base):
    dims = tuple(4 * b for b in base)
    g = random_labels(np.random.default_rng(seed), dims)
    s = generate_octree_gt(g, OctreeConfig.for_finest(dims)).as_structure()
    assert octree_to_dense(dense_to_octree(g, s, "mode"), s) == g


def test_decode_matches_oracle(rng):
    cfg = OctreeConfig(3, (2, 2, 1), (0.5, 0.5))
    s = derive_structure(random_mask(cfg, rng), cfg)
    g = DenseGrid.scalars(rng.random(tuple(cfg.finest_dims)))
    sparse = dense_to_octree(g, s)
    want = naive_decode(3, list(sparse.leaves()), tuple(cfg.finest_dims), np.float32)
    np.testing.assert_array_equal(octree_to_dense(sparse, s).values, want)


def test_average_payload_is_footprint_mean(rng):
    cfg = OctreeConfig(2, (1, 1, 1))
    vals = rng.random((2, 2, 2)).astype(np.float32)
    sparse = dense_to_octree(DenseGrid.scalars(vals), no_split(cfg))
    assert np.isclose(sparse.payload[0], vals.astype(np.float64).mean(), rtol=1e-6)


def test_codec_errors(rng):
    cfg = OctreeConfig.for_finest((4, 4, 4))
    g = DenseGrid.labels(np.zeros((4, 4, 4)))
    with pytest.raises(DimensionError):
        dense_to_octree(DenseGrid.labels(np.zeros((8, 4, 4))), no_split(cfg))
    with pytest.raises(ConfigError):
        dense_to_octree(g, no_split(cfg), "median")
    sparse = dense_to_octree(g, no_split(cfg), "mode")
    with pytest.raises(StructureError):
        octree_to_dense(sparse, full_split(cfg))
