"""Deterministic synthetic scenes, surround cameras and rendered segmentation maps.

Scenes are a ground slab plus axis-aligned boxes whose sizes span large
structures down to single-voxel clutter, so both coarse and fine octree
levels get exercised.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError, SpecError
from .geometry import CameraModel, look_at_extrinsics, project_points, voxel_centers
from .grid import DenseGrid, GridDims
from .semantic_init import DEFAULT_CLASS_TABLE, SegMap

# (label, min edge, max edge, height range) per auto-generated category, as
# fractions of the horizontal extent; heights in cells.
_CATEGORIES = (
    (3, 0.10, 0.25, (4, 12)),   # building
    (4, 0.04, 0.10, (2, 6)),    # vegetation
    (5, 0.02, 0.05, (1, 3)),    # car
    (6, 0.005, 0.01, (1, 3)),   # pedestrian
    (7, 0.005, 0.005, (1, 1)),  # cone
    (2, 0.05, 0.20, (1, 1)),    # sidewalk slab
)


@dataclass(frozen=True)
class SceneSpec:
    """Recipe for :func:`make_scene`.

    ``boxes`` are ``(label, (a, b, c) min corner, (sx, sy, sz) size)`` in cells
    and are painted in order after the ground. ``random_boxes`` extra boxes are
    generated from ``seed`` and painted after the explicit ones.
    """

    dims: GridDims = GridDims(200, 200, 16)
    seed: int = 0
    voxel_size: tuple = (0.4, 0.4, 0.4)
    origin: tuple = (-40.0, -40.0, -1.0)
    ground_height: int = 1
    ground_label: int = 1
    boxes: tuple = ()
    random_boxes: int = 0
    class_count: int = 8

    def __post_init__(self):
        object.__setattr__(self, "dims", GridDims.of(self.dims))
        object.__setattr__(self, "voxel_size", tuple(float(v) for v in self.voxel_size))
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        boxes = tuple((int(lab), tuple(int(v) for v in lo), tuple(int(v) for v in size))
                      for lab, lo, size in self.boxes)
        object.__setattr__(self, "boxes", boxes)
        if not 0 <= self.ground_height <= self.dims.z:
            raise SpecError(f"ground_height {self.ground_height} outside [0, {self.dims.z}]")
        if self.ground_height and not 1 <= self.ground_label < self.class_count:
            raise SpecError(f"ground label {self.ground_label} outside [1, {self.class_count})")
        for n, (lab, lo, size) in enumerate(boxes):
            if not 1 <= lab < self.class_count:
                raise SpecError(f"box {n}: label {lab} outside [1, {self.class_count})")
            if min(size) < 1 or min(lo) < 0 or any(l + s > d for l, s, d in zip(lo, size, self.dims)):
                raise SpecError(f"box {n}: corner {lo} size {size} does not fit in {self.dims}")
        if self.random_boxes < 0:
            raise SpecError("random_boxes must be >= 0")

    def to_json(self) -> str:
        doc = {
            "dims": list(self.dims),
            "seed": self.seed,
            "voxel_size": list(self.voxel_size),
            "origin": list(self.origin),
            "ground_height": self.ground_height,
            "ground_label": self.ground_label,
            "boxes": [{"label": lab, "min": list(lo), "size": list(size)} for lab, lo, size in self.boxes],
            "random_boxes": self.random_boxes,
            "class_count": self.class_count,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SpecError(f"scene spec is not valid JSON: {exc}") from None
        known = {"dims", "seed", "voxel_size", "origin", "ground_height", "ground_label", "boxes",
                 "random_boxes", "class_count"}
        unknown = set(doc) - known
        if unknown:
            raise SpecError(f"unknown scene spec keys: {sorted(unknown)}")
        try:
            boxes = tuple((b["label"], b["min"], b["size"]) for b in doc.pop("boxes", []))
        except (KeyError, TypeError):
            raise SpecError("each box needs 'label', 'min' and 'size'") from None
        return cls(boxes=boxes, **doc)


def _auto_boxes(spec: SceneSpec):
    rng = np.random.default_rng(spec.seed)
    extent = min(spec.dims.x, spec.dims.y)
    labels_ok = [c for c in _CATEGORIES if c[0] < spec.class_count]
    if not labels_ok:
        return []
    boxes = []
    z0 = spec.ground_height
    room = spec.dims.z - z0
    for _ in range(spec.random_boxes):
        lab, lo_frac, hi_frac, (hmin, hmax) = labels_ok[rng.integers(len(labels_ok))]
        sx, sy = (max(1, int(round(extent * rng.uniform(lo_frac, hi_frac)))) for _ in range(2))
        sx, sy = min(sx, spec.dims.x), min(sy, spec.dims.y)
        if lab == 2:  # sidewalk sits in the ground layer
            zlo, sz = max(z0 - 1, 0), 1
        else:
            if room <= 0:
                continue
            zlo, sz = z0, min(int(rng.integers(hmin, hmax + 1)), room)
        a = int(rng.integers(0, spec.dims.x - sx + 1))
        b = int(rng.integers(0, spec.dims.y - sy + 1))
        boxes.append((lab, (a, b, zlo), (sx, sy, sz)))
    return boxes


def make_scene(spec: SceneSpec) -> DenseGrid:
    """Paint ground then boxes (later boxes overwrite earlier ones)."""
    labels = np.zeros(tuple(spec.dims), dtype=np.uint16)
    labels[:, :, :spec.ground_height] = spec.ground_label
    for lab, (a, b, c), (sx, sy, sz) in list(spec.boxes) + _auto_boxes(spec):
        labels[a:a + sx, b:b + sy, c:c + sz] = lab
    return DenseGrid.labels(labels, spec.voxel_size, spec.origin)


def random_scene_spec(dims, seed: int, random_boxes: int = 40, **kwargs) -> SceneSpec:
    return SceneSpec(dims=GridDims.of(dims), seed=seed, random_boxes=random_boxes, **kwargs)


def surround_cameras(scene: DenseGrid, count: int = 6, width: int = 160, height: int = 90,
                     fov_deg: float = 70.0, eye_height: float = 1.6, pitch_deg: float = 8.0):
    """``count`` outward-looking cameras at the horizontal center of the scene.

    ``eye_height`` is measured in meters above the bottom of the volume.
    """
    ox, oy, oz = scene.origin
    center = (ox + scene.dims.x * scene.voxel_size[0] / 2,
              oy + scene.dims.y * scene.voxel_size[1] / 2,
              oz + eye_height)
    f = (width / 2) / math.tan(math.radians(fov_deg) / 2)
    K = np.array([[f, 0.0, width / 2], [0.0, f, height / 2], [0.0, 0.0, 1.0]])
    cams = []
    for i in range(count):
        yaw = 2 * math.pi * i / count
        T = look_at_extrinsics(center, yaw, math.radians(pitch_deg))
        cams.append(CameraModel(K, T, width, height))
    return cams


def render_segmap(scene: DenseGrid, cam: CameraModel, class_table=None, table_name: str = "default") -> SegMap:
    """Splat every non-empty voxel center into ``cam`` with a depth buffer.

    Pixels hit by nothing are void. Equal depths go to the voxel with the
    smaller linear index.
    """
    if class_table is None:
        class_table = DEFAULT_CLASS_TABLE
    labels = scene.values.ravel()
    occupied = np.flatnonzero(labels != 0)
    present = np.unique(labels[occupied])
    missing = [int(l) for l in present if int(l) not in class_table]
    if missing:
        raise ConfigError(f"labels {missing} have no entry in the class table")
    lut = np.zeros(int(present.max()) + 1 if present.size else 1, dtype=np.uint8)
    for l in present:
        lut[l] = int(class_table[int(l)])
    centers = voxel_centers(scene)[occupied]
    u, v, depth, visible = project_points(cam, centers)
    sel = np.flatnonzero(visible)
    pixels = np.floor(v[sel]).astype(np.int64) * cam.width + np.floor(u[sel]).astype(np.int64)
    classes = lut[labels[occupied[sel]]]
    flat = kernels.zbuffer(pixels, depth[sel], classes, cam.width * cam.height)
    return SegMap(flat.reshape(cam.height, cam.width), table_name)
