import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occtree import io
from occtree.errors import (BadMagicError, InvariantError, ParseError, TrailingDataError, TruncationError,
                            VersionError)
from occtree.grid import DenseGrid
from occtree.octree import (OctreeConfig, OctreeMask, OctreeStructure, dense_to_octree, derive_structure,
                            generate_octree_gt)
from occtree.semantic_init import SegMap
from occtree.synth import make_scene, random_scene_spec, surround_cameras

GEOM = dict(voxel_size=(0.4, 0.4, 0.4), origin=(-40.0, -40.0, -1.0))


def scene(seed=0, dims=(16, 16, 8)):
    return make_scene(random_scene_spec(dims, seed, random_boxes=20))


def pyramid(seed=0):
    g = scene(seed)
    cfg = OctreeConfig.for_finest(g.dims)
    gt = generate_octree_gt(g, cfg)
    rng = np.random.default_rng(seed)
    mask = OctreeMask([lv.with_values(rng.random(lv.values.shape).astype(np.float32)) for lv in gt.levels])
    return g, cfg, gt, mask, derive_structure(mask, cfg)


def test_grid_roundtrip_all_kinds(tmp_path, rng):
    grids = [
        DenseGrid.labels(rng.integers(0, 17, (8, 8, 8)), **GEOM),
        DenseGrid.scalars(rng.standard_normal((4, 6, 2)), voxel_size=(0.1, 0.2, 0.3), origin=(1e-3, 5, -7)),
        DenseGrid.binary(rng.integers(0, 2, (3, 3, 3))),
    ]
    for n, g in enumerate(grids):
        path = tmp_path / f"g{n}.occg"
        io.write_grid(path, g)
        back = io.read_grid(path)
        assert back == g
        assert io.grid_to_bytes(back) == path.read_bytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.tuples(*(st.integers(1, 6) for _ in range(3))),
       st.tuples(*(st.floats(-100, 100, width=32) for _ in range(3))))
def test_grid_bytes_canonical(seed, dims, origin):
    g = DenseGrid.labels(np.random.default_rng(seed).integers(0, 60000, dims), origin=origin)
    data = io.grid_to_bytes(g)
    assert io.grid_to_bytes(io.grid_from_bytes(data)) == data
    assert io.grid_to_bytes(DenseGrid.labels(g.values.copy(), origin=origin)) == data


def test_octree_roundtrips(tmp_path):
    g, _, gt, mask, structure = pyramid(1)
    sparse = dense_to_octree(g, gt.as_structure(), "mode")
    scalar = dense_to_octree(DenseGrid.scalars(g.values, g.voxel_size, g.origin), structure)
    for n, obj in enumerate([gt, mask, structure, sparse, scalar]):
        path = tmp_path / f"o{n}.octs"
        io.write_octree(path, obj)
        back = io.read_octree(path)
        assert type(back) is type(obj)
        assert back == obj
        assert io.octree_to_bytes(back) == path.read_bytes()
    assert io.read_octree(tmp_path / "o0.octs").finest_voxel_size == g.voxel_size


def test_typed_readers_reject_other_kinds(tmp_path):
    _, _, gt, mask, _ = pyramid()
    io.write_octree(tmp_path / "gt.octs", gt)
    assert io.read_gt(tmp_path / "gt.octs") == gt
    with pytest.raises(ParseError):
        io.read_mask(tmp_path / "gt.octs")


def test_bad_magic():
    data = bytearray(io.grid_to_bytes(scene()))
    data[:4] = b"NOPE"
    with pytest.raises(BadMagicError) as exc:
        io.grid_from_bytes(bytes(data))
    assert exc.value.offset == 0
    with pytest.raises(BadMagicError):
        io.octree_from_bytes(io.grid_to_bytes(scene()))


def test_version_mismatch():
    data = bytearray(io.octree_to_bytes(pyramid()[2]))
    data[4] = 9
    with pytest.raises(VersionError) as exc:
        io.octree_from_bytes(bytes(data))
    assert exc.value.offset == 4


def test_truncation_mid_values():
    data = io.grid_to_bytes(scene())
    cut = data[: len(data) // 2]
    with pytest.raises(TruncationError) as exc:
        io.grid_from_bytes(cut, path="cut.occg")
    assert exc.value.offset == len(cut)
    assert "cut.occg" in str(exc.value) and f"byte {len(cut)}" in str(exc.value)
    for n in (0, 3, 20):
        with pytest.raises(TruncationError):
            io.grid_from_bytes(data[:n])


def test_truncated_leaf_list():
    g, _, gt, *_ = pyramid()
    data = io.octree_to_bytes(dense_to_octree(g, gt.as_structure(), "mode"))
    with pytest.raises(TruncationError):
        io.octree_from_bytes(data[:-1])


def test_trailing_bytes():
    data = io.grid_to_bytes(scene())
    with pytest.raises(TrailingDataError) as exc:
        io.grid_from_bytes(data + b"\0")
    assert exc.value.offset == len(data)


def test_monotonicity_violation_by_byte_edit():
    structure = OctreeStructure([DenseGrid.binary(np.zeros((2, 2, 2))), DenseGrid.binary(np.zeros((4, 4, 4)))])
    data = bytearray(io.octree_to_bytes(structure))
    header = 44
    # level-1 node (3, 1, 2): linear index (3*4 + 1)*4 + 2 = 54, after the 8 level-0 bytes
    offset = header + 8 + 54
    data[offset] = 1
    with pytest.raises(InvariantError) as exc:
        io.octree_from_bytes(bytes(data))
    assert exc.value.offset == offset
    assert "monotonicity" in str(exc.value) and "(3, 1, 2)" in str(exc.value)


def test_mask_out_of_range_and_gt_inconsistency():
    _, _, gt, mask, _ = pyramid()
    data = bytearray(io.octree_to_bytes(mask))
    data[44:48] = np.float32(1.5).tobytes()
    with pytest.raises(InvariantError) as exc:
        io.octree_from_bytes(bytes(data))
    assert exc.value.offset == 44
    zero = bytearray(io.octree_to_bytes(gt))
    n0 = gt.levels[0].dims.count
    zero[44:44 + n0] = bytes(n0)
    assert gt.levels[1].values.any()
    with pytest.raises(InvariantError):
        io.octree_from_bytes(bytes(zero))


def test_distinct_error_types():
    kinds = {BadMagicError, VersionError, TruncationError, InvariantError}
    assert len(kinds) == 4
    assert all(issubclass(k, ParseError) for k in kinds)
    assert not any(issubclass(a, b) for a in kinds for b in kinds if a is not b)


def test_cameras_roundtrip(tmp_path):
    cams = surround_cameras(scene(dims=(32, 32, 8)), 6, 160, 90)
    io.write_cameras(tmp_path / "c.txt", cams)
    back = io.read_cameras(tmp_path / "c.txt")
    assert back == cams
    text = io.format_cameras(back)
    assert io.format_cameras(io.parse_cameras(text)) == text


@pytest.mark.parametrize("text, line", [
    ("camera\nimage_size 4 4\nintrinsics 1 0 0 0 1 0 0 0 1\nend\n", 4),
    ("image_size 4 4\n", 1),
    ("camera\nimage_size 4\n", 2),
    ("camera\nimage_size 4 4\nintrinsics 1 0 0 0 1 0 0 0 1\nextrinsics " + "0 " * 16 + "\nend\n", 1),
    ("camera\nwobble 1\n", 2),
    ("camera\n", 1),
])
def test_camera_parse_errors(text, line):
    with pytest.raises(ParseError) as exc:
        io.parse_cameras(text)
    assert exc.value.unit == "line" and exc.value.offset == line


def test_segmap_roundtrip_and_errors(tmp_path, rng):
    seg = SegMap(rng.integers(0, 4, (9, 13)).astype(np.uint8), "tables/default.txt")
    io.write_segmap(tmp_path / "s.seg", seg)
    assert io.read_segmap(tmp_path / "s.seg") == seg
    data = io.segmap_to_bytes(seg)
    assert data.startswith(b"OCCSEG\n13\n9\ntables/default.txt\n")
    with pytest.raises(TruncationError):
        io.segmap_from_bytes(data[:-5])
    with pytest.raises(BadMagicError):
        io.segmap_from_bytes(b"XXXSEG" + data[6:])
    bad = bytearray(data)
    bad[-1] = 7
    with pytest.raises(InvariantError) as exc:
        io.segmap_from_bytes(bytes(bad))
    assert exc.value.offset == len(data) - 1


def test_atomic_write_leaves_no_temp_files(tmp_path):
    io.write_grid(tmp_path / "a.occg", scene())
    io.write_grid(tmp_path / "a.occg", scene(1))
    assert [p.name for p in tmp_path.iterdir()] == ["a.occg"]
    assert io.read_grid(tmp_path / "a.occg") == scene(1)


def test_leaf_point_export():
    g = DenseGrid.labels(np.full((4, 4, 4), 2), voxel_size=(0.5, 0.5, 0.5), origin=(0, 0, 0))
    gt = generate_octree_gt(g, OctreeConfig.for_finest(g.dims, depth=2))
    text = io.format_leaf_points(dense_to_octree(g, gt.as_structure(), "mode"))
    lines = text.splitlines()
    assert len(lines) == 8
    assert lines[0] == "0.500000 0.500000 0.500000 1.000000 2"
