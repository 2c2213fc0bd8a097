"""Command-line pipeline: ``occtree <subcommand> ...``.

Stages talk only through files (see :mod:`occtree.io`). Exit codes: 0 ok,
1 usage, 2 unreadable or malformed input, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import numpy as np

from . import io
from .errors import (ConfigError, DimensionError, InvariantError, LevelError, OcctreeError, ParseError,
                     ProviderError, SpecError, StructureError)
from .grid import GridDims
from .metrics import compression_stats, miou, structure_quality
from .octree import (OctreeConfig, OctreeGT, OctreeMask, OctreeStructure, dense_to_octree, derive_structure,
                     generate_octree_gt, octree_to_dense)
from .rectify import RectifyConfig, check_provider_geometry, parse_provider, rectify_iterate
from .semantic_init import (DEFAULT_CLASS_TABLE, InitWeights, accumulate_weights, build_initial_mask,
                            load_class_table)
from .synth import SceneSpec, make_scene, render_segmap, surround_cameras

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


@dataclass(frozen=True)
class PipelineConfig:
    octree: OctreeConfig = OctreeConfig()
    rectify: RectifyConfig = RectifyConfig()
    weights: InitWeights = InitWeights()
    class_table: str = None
    seed: int = 0


def _common(p):
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--depth", type=int, help="octree depth L (default 3, or taken from the input file)")
    g.add_argument("--base-dims", type=_ints, metavar="X,Y,Z",
                   help="coarsest-level dims (default 50,50,4, or derived from the input)")
    g.add_argument("--ratios", type=_floats, metavar="R0,R1,...",
                   help="split selection ratio per boundary, coarse to fine (default 0.2,0.6)")
    g.add_argument("--keep", type=_floats, metavar="K0,K1,...",
                   help="rectification keep ratio per level (default 0.1,0.3)")
    g.add_argument("--blend", type=_floats, metavar="B0,B1,...",
                   help="weight on fresh probabilities per level (default 0.6,0.5)")
    g.add_argument("--iters", type=int, default=3, help="rectification rounds (default 3)")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    g.add_argument("--pooling", choices=("average", "mode"),
                   help="leaf payload pooling (default: mode for label grids, average otherwise)")
    g.add_argument("--provider", metavar="SPEC",
                   help="split probability provider: oracle:GT_PATH[:NOISE] | const:V | file:MASK_PATH")
    g.add_argument("--class-table", metavar="PATH", help="'<label_id> <category>' lines")
    g.add_argument("--json-report", metavar="PATH", help="also write the report as JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="occtree", description="Octree occupancy structures from the command line.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, help_):
        p = sub.add_parser(name, help=help_, description=help_)
        _common(p)
        return p

    p = add("synth", "write a synthetic label grid and optionally cameras and segmentation maps")
    p.add_argument("-o", "--output", required=True, help="label grid (.occg)")
    p.add_argument("--spec", help="scene spec JSON; default is a random scene at the configured dims")
    p.add_argument("--boxes", type=int, default=40, help="random boxes when no --spec is given")
    p.add_argument("--cameras", help="write surround cameras to this text file")
    p.add_argument("--segmaps", metavar="PREFIX", help="write rendered segmaps to PREFIX<i>.seg")
    p.add_argument("--n-cams", type=int, default=6)
    p.add_argument("--image-size", type=_ints, default=(160, 90), metavar="W,H")

    p = add("gt-octree", "derive the octree ground truth of a label grid")
    p.add_argument("grid")
    p.add_argument("-o", "--output", required=True)

    p = add("init", "initial split mask from cameras and segmentation maps")
    p.add_argument("grid", help="grid supplying the voxel geometry")
    p.add_argument("--cameras", required=True)
    p.add_argument("--segmaps", nargs="*", default=[], help="one segmap per camera, in order")
    p.add_argument("--weights", type=_floats, default=(1.0, 0.5, 0.1), metavar="FG,BG,GROUND")
    p.add_argument("--assign", choices=("sum", "max"), default="sum",
                   help="combine cameras by summing weights (default) or keeping the largest")
    p.add_argument("-o", "--output", required=True)

    p = add("rectify", "iteratively rectify a split mask and re-derive the structure")
    p.add_argument("mask")
    p.add_argument("-o", "--output", required=True, help="rectified mask")
    p.add_argument("--structure-out", help="final structure")
    p.add_argument("--gt", help="octree ground truth for the quality report (default: the oracle's)")

    p = add("encode", "pool a dense grid onto octree leaves")
    p.add_argument("grid")
    p.add_argument("--structure", required=True, help="structure, octree ground truth, or mask (derived)")
    p.add_argument("-o", "--output", required=True)

    p = add("decode", "expand octree leaves back to a dense grid")
    p.add_argument("sparse")
    p.add_argument("--structure", required=True)
    p.add_argument("-o", "--output", required=True)

    p = add("eval", "semantic mIoU of two grids, or split quality of a structure")
    p.add_argument("--pred", help="predicted label grid")
    p.add_argument("--gt", help="ground-truth label grid")
    p.add_argument("--classes", type=int, help="number of label ids (default: largest id + 1)")
    p.add_argument("--ignore", type=_ints, default=(), metavar="L0,L1,...")
    p.add_argument("--unconditional", action="store_true", help="average IoU over all classes")
    p.add_argument("--pred-structure", help="structure, mask (derived) or octree ground truth")
    p.add_argument("--gt-octree", help="octree ground truth")

    p = add("stats", "leaf counts and compression of a structure")
    p.add_argument("structure", help="structure, octree ground truth, or mask (derived)")

    p = add("export", "write leaves as 'x y z size label' lines")
    p.add_argument("sparse")
    p.add_argument("-o", "--output", required=True)
    return parser


def pipeline_config(args, base_dims=None, depth=None) -> PipelineConfig:
    depth = depth if depth is not None else (args.depth if args.depth is not None else 3)
    if args.depth is not None and args.depth != depth:
        raise DimensionError(f"--depth {args.depth} does not match input depth {depth}")
    if base_dims is None:
        base_dims = args.base_dims if args.base_dims is not None else (50, 50, 4)
    elif args.base_dims is not None and GridDims.of(args.base_dims) != GridDims.of(base_dims):
        raise DimensionError(f"--base-dims {GridDims.of(args.base_dims)} does not match input "
                             f"{GridDims.of(base_dims)}")
    try:
        octree = OctreeConfig(depth, base_dims, args.ratios)
        rect = RectifyConfig(args.keep, args.blend, args.iters).for_depth(depth)
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
    except (ConfigError, LevelError) as exc:
        raise UsageError(str(exc)) from None
    return PipelineConfig(octree, rect, InitWeights(), args.class_table, args.seed)


def _config_for_grid(args, grid):
    depth = args.depth if args.depth is not None else 3
    f = 2 ** (depth - 1)
    if not grid.dims.divisible_by(f):
        raise DimensionError(f"grid dims {grid.dims} not divisible by 2^(depth-1) = {f}")
    base = GridDims(grid.dims.x // f, grid.dims.y // f, grid.dims.z // f)
    return pipeline_config(args, base, depth)


def _load_structure(path, args) -> OctreeStructure:
    obj = io.read_octree(path)
    if isinstance(obj, OctreeStructure):
        pipeline_config(args, obj.base_dims, obj.depth)
        return obj
    if isinstance(obj, OctreeGT):
        pipeline_config(args, obj.base_dims, obj.depth)
        return obj.as_structure()
    if isinstance(obj, OctreeMask):
        cfg = pipeline_config(args, obj.base_dims, obj.depth)
        return derive_structure(obj, cfg.octree)
    raise ParseError(f"expected a structure, mask or octree ground truth, found a {type(obj).__name__}",
                     6, path)


def _class_table(args):
    return load_class_table(args.class_table) if args.class_table else DEFAULT_CLASS_TABLE


class Report:
    def __init__(self):
        self.items = {}

    def add(self, key, value, text=None):
        self.items[key] = value
        print(f"{key}: {text if text is not None else _plain(value)}")

    def write(self, path):
        if path:
            io.atomic_write(path, (json.dumps(self.items, indent=2, sort_keys=True) + "\n").encode())


def _plain(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    if isinstance(value, (list, tuple)):
        return " ".join(_plain(v) for v in value)
    return str(value)


def _nan_to_none(x):
    return None if isinstance(x, float) and np.isnan(x) else x


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args, report):
    if args.spec:
        try:
            with open(args.spec, encoding="utf-8") as fh:
                spec = SceneSpec.from_json(fh.read())
        except OSError as exc:
            raise ParseError(f"cannot read scene spec: {exc.strerror}", path=args.spec) from None
    else:
        cfg = pipeline_config(args)
        spec = SceneSpec(dims=cfg.octree.finest_dims, seed=args.seed, random_boxes=args.boxes)
    scene = make_scene(spec)
    io.write_grid(args.output, scene)
    report.add("grid", args.output)
    report.add("dims", list(scene.dims), str(scene.dims))
    if args.cameras or args.segmaps:
        width, height = args.image_size
        cams = surround_cameras(scene, args.n_cams, width, height)
        if args.cameras:
            io.write_cameras(args.cameras, cams)
            report.add("cameras", args.cameras)
        if args.segmaps:
            table = _class_table(args)
            ref = args.class_table or "default"
            paths = []
            for i, cam in enumerate(cams):
                path = f"{args.segmaps}{i}.seg"
                io.write_segmap(path, render_segmap(scene, cam, table, ref))
                paths.append(path)
            report.add("segmaps", paths)


def cmd_gt_octree(args, report):
    grid = io.read_grid(args.grid)
    cfg = _config_for_grid(args, grid)
    gt = generate_octree_gt(grid, cfg.octree)
    io.write_octree(args.output, gt)
    report.add("octree_gt", args.output)
    report.add("split_fraction", [float(g.values.mean()) for g in gt.levels])


def cmd_init(args, report):
    grid = io.read_grid(args.grid)
    cfg = _config_for_grid(args, grid)
    cams = io.read_cameras(args.cameras)
    segs = [io.read_segmap(p) for p in args.segmaps]
    try:
        weights = InitWeights(*args.weights)
    except (TypeError, ConfigError) as exc:
        raise UsageError(f"--weights: {exc}") from None
    w = accumulate_weights(grid, cams, segs, weights, mode=args.assign)
    mask = build_initial_mask(w, cfg.octree)
    io.write_octree(args.output, mask)
    report.add("mask", args.output)
    report.add("voxels_weighted", int(np.count_nonzero(w.values)))


def _quality_entry(iteration, structure, gt):
    entry = {"iteration": iteration}
    if gt is not None:
        q = structure_quality(structure, gt)
        entry["split_miou"] = [x.miou for x in q]
        entry["split_iou"] = [_nan_to_none(x.iou_split) for x in q]
    entry["leaf_fraction"] = compression_stats(structure).leaf_fraction
    return entry


def cmd_rectify(args, report):
    mask = io.read_mask(args.mask)
    cfg = pipeline_config(args, mask.base_dims, mask.depth)
    if not args.provider:
        raise UsageError("rectify needs --provider")
    provider = parse_provider(args.provider, cfg.seed)
    check_provider_geometry(provider, mask)
    gt = io.read_gt(args.gt) if args.gt else getattr(provider, "gt", None)
    if gt is not None and (gt.depth != mask.depth or gt.base_dims != mask.base_dims):
        raise DimensionError("--gt pyramid does not match the mask")
    result = rectify_iterate(mask, cfg.octree, cfg.rectify, provider)
    io.write_octree(args.output, result.mask)
    if args.structure_out:
        io.write_octree(args.structure_out, result.structure)
    trajectory = [_quality_entry(0, derive_structure(mask, cfg.octree), gt)]
    trajectory += [_quality_entry(i + 1, s, gt) for i, s in enumerate(result.structures)]
    report.items["iterations"] = trajectory
    for entry in trajectory:
        parts = [f"leaf_fraction={entry['leaf_fraction']:.6f}"]
        if "split_miou" in entry:
            parts += [f"boundary{b}_miou={v:.6f}" for b, v in enumerate(entry["split_miou"])]
        print(f"iteration {entry['iteration']}: " + " ".join(parts))
    report.add("mask", args.output)
    if args.structure_out:
        report.add("structure", args.structure_out)


def cmd_encode(args, report):
    grid = io.read_grid(args.grid)
    structure = _load_structure(args.structure, args)
    pooling = args.pooling or ("mode" if grid.kind != "scalar" else "average")
    sparse = dense_to_octree(grid, structure, pooling)
    io.write_octree(args.output, sparse)
    report.add("sparse", args.output)
    report.add("pooling", pooling)
    report.add("leaves", len(sparse))


def cmd_decode(args, report):
    sparse = io.read_sparse(args.sparse)
    structure = _load_structure(args.structure, args)
    grid = octree_to_dense(sparse, structure)
    io.write_grid(args.output, grid)
    report.add("grid", args.output)
    report.add("dims", list(grid.dims), str(grid.dims))


def cmd_eval(args, report):
    did = False
    if args.pred or args.gt:
        if not (args.pred and args.gt):
            raise UsageError("--pred and --gt go together")
        pred, gt = io.read_grid(args.pred), io.read_grid(args.gt)
        if pred.kind == "scalar" or gt.kind == "scalar":
            raise UsageError("eval --pred/--gt needs label grids")
        if pred.dims != gt.dims:
            raise DimensionError(f"prediction dims {pred.dims} != ground truth dims {gt.dims}")
        classes = args.classes
        if classes is None:
            classes = int(max(pred.values.max(), gt.values.max())) + 1
        r = miou(pred, gt, classes, args.ignore, args.unconditional)
        report.add("miou", r.mean)
        report.add("per_class_iou", [_nan_to_none(float(v)) for v in r.per_class],
                   " ".join("nan" if np.isnan(v) else f"{v:.6f}" for v in r.per_class))
        did = True
    if args.pred_structure or args.gt_octree:
        if not (args.pred_structure and args.gt_octree):
            raise UsageError("--pred-structure and --gt-octree go together")
        structure = _load_structure(args.pred_structure, args)
        gt = io.read_gt(args.gt_octree)
        if gt.depth != structure.depth or gt.base_dims != structure.base_dims:
            raise DimensionError("structure and octree ground truth differ in depth or base dims")
        q = structure_quality(structure, gt)
        report.add("split_miou", [x.miou for x in q])
        report.add("split_iou", [_nan_to_none(x.iou_split) for x in q],
                   " ".join("nan" if np.isnan(x.iou_split) else f"{x.iou_split:.6f}" for x in q))
        did = True
    if not did:
        raise UsageError("eval needs --pred/--gt or --pred-structure/--gt-octree")


def cmd_stats(args, report):
    structure = _load_structure(args.structure, args)
    stats = compression_stats(structure)
    for key, value in stats.as_dict().items():
        report.add(key, value)


def cmd_export(args, report):
    sparse = io.read_sparse(args.sparse)
    io.export_leaf_points(args.output, sparse)
    report.add("points", args.output)
    report.add("leaves", len(sparse))


COMMANDS = {
    "synth": cmd_synth,
    "gt-octree": cmd_gt_octree,
    "init": cmd_init,
    "rectify": cmd_rectify,
    "encode": cmd_encode,
    "decode": cmd_decode,
    "eval": cmd_eval,
    "stats": cmd_stats,
    "export": cmd_export,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    report = Report()
    try:
        COMMANDS[args.command](args, report)
        report.write(args.json_report)
    except UsageError as exc:
        print(f"occtree {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InvariantError, DimensionError, StructureError, ProviderError) as exc:
        print(f"occtree {args.command}: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ParseError, SpecError) as exc:
        print(f"occtree {args.command}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        name = exc.filename if exc.filename is not None else ""
        print(f"occtree {args.command}: {name}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ConfigError, LevelError) as exc:
        print(f"occtree {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OcctreeError as exc:
        print(f"occtree {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
