"""On-disk formats.

Binary formats are little-endian.

``OCCG`` dense grid (43-byte header)::

    magic "OCCG" | version u16 | kind u8 (0 label u16, 1 scalar f32, 2 binary u8)
    | dims u32 x3 | voxel_size f32 x3 | origin f32 x3 | values in linear-index order

``OCTS`` octree pyramid or leaf list (44-byte header)::

    magic "OCTS" | version u16 | kind u8 | depth u8 | base dims u32 x3
    | finest voxel_size f32 x3 | origin f32 x3 | body

Kinds 0 (structure, u8 per node), 1 (mask, f32 per node) and 2 (octree ground
truth, u8 per node) store levels ``0 .. depth-2`` back to back. Kinds 3
(sparse labels) and 4 (sparse scalars) store a u64 leaf count followed by
records ``level u8 | a, b, c u32 | payload u16 or f32``.

Cameras and segmentation maps use small text formats, see
:func:`format_cameras` and :func:`segmap_to_bytes`. Writers go through a
temporary file and an atomic rename.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import (BadMagicError, InvariantError, ParseError, TrailingDataError, TruncationError,
                     VersionError)
from .geometry import CameraModel
from .grid import BINARY, LABEL, SCALAR, DenseGrid, GridDims, linear_index
from .octree import (OctreeGT, OctreeMask, OctreeStructure, SparseOctreeField, validate_structure)
from .semantic_init import SegMap

VERSION = 1

GRID_MAGIC = b"OCCG"
OCTREE_MAGIC = b"OCTS"
SEGMAP_MAGIC = "OCCSEG"

_GRID_HEADER = struct.Struct("<4sHB3I3f3f")
_OCTREE_HEADER = struct.Struct("<4sHBB3I3f3f")

_GRID_KINDS = {LABEL: 0, SCALAR: 1, BINARY: 2}
_GRID_DTYPES = {0: np.dtype("<u2"), 1: np.dtype("<f4"), 2: np.dtype("u1")}

KIND_STRUCTURE, KIND_MASK, KIND_GT, KIND_SPARSE_LABEL, KIND_SPARSE_SCALAR = range(5)
_KIND_NAMES = {KIND_STRUCTURE: "structure", KIND_MASK: "mask", KIND_GT: "octree ground truth",
               KIND_SPARSE_LABEL: "sparse label field", KIND_SPARSE_SCALAR: "sparse scalar field"}
_LEAF_DTYPES = {
    KIND_SPARSE_LABEL: np.dtype([("level", "u1"), ("coord", "<u4", (3,)), ("payload", "<u2")]),
    KIND_SPARSE_SCALAR: np.dtype([("level", "u1"), ("coord", "<u4", (3,)), ("payload", "<f4")]),
}


def atomic_write(path, data: bytes):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# dense grids


def grid_to_bytes(grid: DenseGrid) -> bytes:
    kind = _GRID_KINDS[grid.kind]
    header = _GRID_HEADER.pack(GRID_MAGIC, VERSION, kind, *grid.dims, *grid.voxel_size, *grid.origin)
    return header + grid.values.astype(_GRID_DTYPES[kind], copy=False).tobytes()


def _check_magic(data, magic, path):
    if len(data) < len(magic):
        raise TruncationError(f"file ends after {len(data)} bytes, before the magic", len(data), path)
    if data[:len(magic)] != magic:
        raise BadMagicError(f"bad magic {data[:len(magic)]!r}, expected {magic!r}", 0, path)


def _check_header(data, header, magic, path):
    _check_magic(data, magic, path)
    if len(data) < header.size:
        raise TruncationError(f"header needs {header.size} bytes, file has {len(data)}", len(data), path)
    fields = header.unpack_from(data)
    if fields[1] != VERSION:
        raise VersionError(f"unsupported version {fields[1]}, expected {VERSION}", 4, path)
    return fields


def _take(data, offset, nbytes, what, path):
    end = offset + nbytes
    if len(data) < end:
        raise TruncationError(f"{what} needs {nbytes} bytes from offset {offset}, file ends at {len(data)}",
                              len(data), path)
    return data[offset:end], end


def _finish(data, end, path):
    if len(data) != end:
        raise TrailingDataError(f"{len(data) - end} unexpected trailing bytes", end, path)


def grid_from_bytes(data: bytes, path=None) -> DenseGrid:
    fields = _check_header(data, _GRID_HEADER, GRID_MAGIC, path)
    kind = fields[2]
    if kind not in _GRID_DTYPES:
        raise ParseError(f"unknown grid payload kind {kind}", 6, path)
    dims = fields[3:6]
    if min(dims) < 1:
        raise InvariantError(f"grid dims {dims} must be >= 1", 7, path)
    dtype = _GRID_DTYPES[kind]
    raw, end = _take(data, _GRID_HEADER.size, int(np.prod(dims)) * dtype.itemsize, "grid values", path)
    _finish(data, end, path)
    values = np.frombuffer(raw, dtype=dtype).reshape(dims).astype(dtype.newbyteorder("="))
    return DenseGrid(values, fields[6:9], fields[9:12])


def write_grid(path, grid: DenseGrid):
    atomic_write(path, grid_to_bytes(grid))


def read_grid(path) -> DenseGrid:
    return grid_from_bytes(_read_bytes(path), path)


# ---------------------------------------------------------------------------
# octree pyramids and leaf lists


def _octree_header(kind, depth, base_dims, voxel_size, origin):
    return _OCTREE_HEADER.pack(OCTREE_MAGIC, VERSION, kind, depth, *base_dims, *voxel_size, *origin)


def octree_to_bytes(obj) -> bytes:
    if isinstance(obj, SparseOctreeField):
        kind = KIND_SPARSE_LABEL if obj.payload.dtype == np.uint16 else KIND_SPARSE_SCALAR
        rec = np.empty(len(obj), dtype=_LEAF_DTYPES[kind])
        rec["level"] = obj.levels
        rec["coord"] = obj.coords
        rec["payload"] = obj.payload
        head = _octree_header(kind, obj.depth, obj.base_dims, obj.voxel_size, obj.origin)
        return head + struct.pack("<Q", len(obj)) + rec.tobytes()
    if isinstance(obj, OctreeStructure):
        kind, dtype = KIND_STRUCTURE, np.dtype("u1")
    elif isinstance(obj, OctreeMask):
        kind, dtype = KIND_MASK, np.dtype("<f4")
    elif isinstance(obj, OctreeGT):
        kind, dtype = KIND_GT, np.dtype("u1")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")
    head = _octree_header(kind, obj.depth, obj.base_dims, obj.finest_voxel_size, obj.origin)
    return head + b"".join(g.values.astype(dtype, copy=False).tobytes() for g in obj.levels)


def _first_gt_violation(gt_levels):
    """(level, coord) of the first node whose value is 0 while a child is 1."""
    for lev in range(len(gt_levels) - 1):
        parent = gt_levels[lev] == 0
        child = gt_levels[lev + 1].astype(bool)
        d = child.shape
        bad_child = child.reshape(d[0] // 2, 2, d[1] // 2, 2, d[2] // 2, 2).any(axis=(1, 3, 5))
        bad = np.argwhere(parent & bad_child)
        if len(bad):
            return lev, tuple(int(c) for c in bad[0])
    return None


def octree_from_bytes(data: bytes, path=None):
    fields = _check_header(data, _OCTREE_HEADER, OCTREE_MAGIC, path)
    kind, depth = fields[2], fields[3]
    if kind not in _KIND_NAMES:
        raise ParseError(f"unknown octree payload kind {kind}", 6, path)
    if depth < 2:
        raise InvariantError(f"octree depth {depth} must be >= 2", 7, path)
    base = GridDims(*fields[4:7])
    if min(base) < 1:
        raise InvariantError(f"base dims {tuple(base)} must be >= 1", 8, path)
    voxel_size, origin = fields[7:10], fields[10:13]
    offset = _OCTREE_HEADER.size

    if kind in _LEAF_DTYPES:
        raw, offset = _take(data, offset, 8, "leaf count", path)
        (count,) = struct.unpack("<Q", raw)
        rec_dtype = _LEAF_DTYPES[kind]
        raw, end = _take(data, offset, count * rec_dtype.itemsize, "leaf records", path)
        _finish(data, end, path)
        rec = np.frombuffer(raw, dtype=rec_dtype)
        if count and rec["level"].max() >= depth:
            bad = int(np.argmax(rec["level"] >= depth))
            raise InvariantError(f"leaf {bad} has level {rec['level'][bad]} >= depth {depth}",
                                 offset + bad * rec_dtype.itemsize, path)
        payload_dtype = np.uint16 if kind == KIND_SPARSE_LABEL else np.float32
        return SparseOctreeField(depth, base, rec["level"], rec["coord"].astype(np.int64),
                                 rec["payload"].astype(payload_dtype), voxel_size, origin)

    dtype = np.dtype("<f4") if kind == KIND_MASK else np.dtype("u1")
    level_starts, arrays = [], []
    for lev in range(depth - 1):
        dims = base.scaled(2**lev)
        level_starts.append(offset)
        raw, offset = _take(data, offset, dims.count * dtype.itemsize, f"level {lev}", path)
        arrays.append(np.frombuffer(raw, dtype=dtype).reshape(tuple(dims)).astype(dtype.newbyteorder("=")))
    _finish(data, offset, path)

    levels = []
    for lev, arr in enumerate(arrays):
        f = 2 ** (depth - 1 - lev)
        levels.append(DenseGrid(arr, tuple(v * f for v in voxel_size), origin))

    def cell_offset(lev, coord):
        return level_starts[lev] + linear_index(levels[lev].dims, *coord) * dtype.itemsize

    if kind == KIND_MASK:
        for lev, arr in enumerate(arrays):
            bad = np.argwhere(~((arr >= 0) & (arr <= 1)))
            if len(bad):
                coord = tuple(int(c) for c in bad[0])
                raise InvariantError(f"mask level {lev} node {coord} holds {arr[coord]} outside [0, 1]",
                                     cell_offset(lev, coord), path)
        return OctreeMask(levels)
    if kind == KIND_STRUCTURE:
        structure = OctreeStructure(levels)
        violations = validate_structure(structure)
        if violations:
            v = violations[0]
            raise InvariantError(f"structure {v} ({len(violations)} violation(s) total)",
                                 cell_offset(v.level, v.coord), path)
        return structure
    for lev, arr in enumerate(arrays):
        bad = np.argwhere(arr > 1)
        if len(bad):
            coord = tuple(int(c) for c in bad[0])
            raise InvariantError(f"ground truth level {lev} node {coord} is not binary",
                                 cell_offset(lev, coord), path)
    hit = _first_gt_violation(arrays)
    if hit is not None:
        lev, coord = hit
        raise InvariantError(f"ground truth is 0 at level {lev} node {coord} but a child is 1",
                             cell_offset(lev, coord), path)
    return OctreeGT(levels)


def write_octree(path, obj):
    atomic_write(path, octree_to_bytes(obj))


def read_octree(path):
    """Read any ``OCTS`` file; the concrete type follows the stored kind."""
    return octree_from_bytes(_read_bytes(path), path)


def _read_expect(path, cls):
    obj = read_octree(path)
    if not isinstance(obj, cls):
        raise ParseError(f"expected a {cls.__name__} file, found {type(obj).__name__}", 6, path)
    return obj


def read_structure(path) -> OctreeStructure:
    return _read_expect(path, OctreeStructure)


def read_mask(path) -> OctreeMask:
    return _read_expect(path, OctreeMask)


def read_gt(path) -> OctreeGT:
    return _read_expect(path, OctreeGT)


def read_sparse(path) -> SparseOctreeField:
    return _read_expect(path, SparseOctreeField)


# ---------------------------------------------------------------------------
# cameras


def _fmt(x):
    return repr(float(x))


def format_cameras(cameras) -> str:
    """Text blocks, one per camera::

        camera
        image_size W H
        intrinsics k00 k01 ... k22
        extrinsics t00 t01 ... t33
        end
    """
    lines = ["# occtree cameras v1"]
    for cam in cameras:
        lines.append("camera")
        lines.append(f"image_size {cam.width} {cam.height}")
        lines.append("intrinsics " + " ".join(_fmt(v) for v in cam.intrinsics.ravel()))
        lines.append("extrinsics " + " ".join(_fmt(v) for v in cam.extrinsics.ravel()))
        lines.append("end")
    return "\n".join(lines) + "\n"


def parse_cameras(text: str, path=None) -> list:
    cams = []
    block = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, *rest = line.split()
        if key == "camera":
            if block is not None:
                raise ParseError("'camera' inside an unterminated block", lineno, path, "line")
            block = {"line": lineno}
        elif key == "end":
            if block is None:
                raise ParseError("'end' without 'camera'", lineno, path, "line")
            missing = {"image_size", "intrinsics", "extrinsics"} - set(block)
            if missing:
                raise ParseError(f"camera block missing {sorted(missing)}", lineno, path, "line")
            try:
                cams.append(CameraModel(np.array(block["intrinsics"]).reshape(3, 3),
                                        np.array(block["extrinsics"]).reshape(4, 4), *block["image_size"]))
            except ValueError as exc:
                raise ParseError(f"invalid camera: {exc}", block["line"], path, "line") from None
            block = None
        elif block is None:
            raise ParseError(f"{key!r} outside a camera block", lineno, path, "line")
        elif key in block:
            raise ParseError(f"duplicate {key!r}", lineno, path, "line")
        else:
            want = {"image_size": 2, "intrinsics": 9, "extrinsics": 16}.get(key)
            if want is None:
                raise ParseError(f"unknown camera key {key!r}", lineno, path, "line")
            if len(rest) != want:
                raise ParseError(f"{key} needs {want} values, got {len(rest)}", lineno, path, "line")
            try:
                block[key] = [int(v) for v in rest] if key == "image_size" else [float(v) for v in rest]
            except ValueError:
                raise ParseError(f"non-numeric value in {key}", lineno, path, "line") from None
    if block is not None:
        raise ParseError("unterminated camera block", block["line"], path, "line")
    return cams


def write_cameras(path, cameras):
    atomic_write(path, format_cameras(cameras).encode("utf-8"))


def read_cameras(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return parse_cameras(fh.read(), path)


# ---------------------------------------------------------------------------
# segmentation maps


def segmap_to_bytes(seg: SegMap) -> bytes:
    """Four header lines (magic, width, height, class-table reference) then raw u8 pixels."""
    ref = seg.class_table or "-"
    if "\n" in ref:
        raise ValueError("class-table reference must be a single line")
    header = f"{SEGMAP_MAGIC}\n{seg.width}\n{seg.height}\n{ref}\n".encode("utf-8")
    return header + seg.classes.tobytes()


def segmap_from_bytes(data: bytes, path=None) -> SegMap:
    _check_magic(data, (SEGMAP_MAGIC + "\n").encode(), path)
    pos = 0
    lines = []
    for _ in range(4):
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise TruncationError("segmap header is incomplete", len(data), path)
        lines.append(data[pos:nl].decode("utf-8", errors="replace"))
        pos = nl + 1
    try:
        width, height = int(lines[1]), int(lines[2])
    except ValueError:
        raise ParseError("segmap width/height must be integers", len(lines[0]) + 1, path) from None
    if width < 1 or height < 1:
        raise InvariantError(f"segmap size {width}x{height} must be positive", len(lines[0]) + 1, path)
    raw, end = _take(data, pos, width * height, "segmap pixels", path)
    _finish(data, end, path)
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
    if arr.max() > 3:
        bad = int(np.argmax(arr.ravel() > 3))
        raise InvariantError(f"pixel {bad} holds category {arr.ravel()[bad]} > 3", pos + bad, path)
    return SegMap(arr.copy(), lines[3])


def write_segmap(path, seg: SegMap):
    atomic_write(path, segmap_to_bytes(seg))


def read_segmap(path) -> SegMap:
    return segmap_from_bytes(_read_bytes(path), path)


# ---------------------------------------------------------------------------
# viewer export


def format_leaf_points(sparse: SparseOctreeField) -> str:
    """One ``x y z size label`` line per leaf: world center, cube edge (x axis), payload."""
    lines = []
    vs = np.asarray(sparse.voxel_size)
    org = np.asarray(sparse.origin)
    for lev, coord, payload in sparse.leaves():
        f = 2 ** (sparse.depth - 1 - lev)
        center = org + (np.asarray(coord) + 0.5) * f * vs
        size = f * vs[0]
        value = str(payload) if sparse.kind == LABEL else repr(float(payload))
        lines.append(f"{center[0]:.6f} {center[1]:.6f} {center[2]:.6f} {size:.6f} {value}")
    return "\n".join(lines) + ("\n" if lines else "")


def export_leaf_points(path, sparse: SparseOctreeField):
    atomic_write(path, format_leaf_points(sparse).encode("utf-8"))
