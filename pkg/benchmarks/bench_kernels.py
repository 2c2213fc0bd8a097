"""Time each kernel and the encode/decode path under both backends.

    python benchmarks/bench_kernels.py [--repeats N] [--dims X,Y,Z]
"""

import argparse
import statistics
import time

import numpy as np

from occtree import kernels
from occtree.grid import DenseGrid
from occtree.octree import OctreeConfig, OctreeMask, dense_to_octree, derive_structure, octree_to_dense
from occtree.synth import make_scene, random_scene_spec, render_segmap, surround_cameras


def timeit(fn, repeats):
    fn()
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return min(samples), statistics.median(samples)


def cases(dims):
    scene = make_scene(random_scene_spec(dims, 0, random_boxes=60))
    labels = scene.values
    scalars = np.random.default_rng(0).random(dims).astype(np.float32)
    cfg = OctreeConfig.for_finest(dims)
    rng = np.random.default_rng(1)
    mask = OctreeMask([DenseGrid.scalars(rng.random(tuple(cfg.level_dims(l)))) for l in range(cfg.depth - 1)])
    structure = derive_structure(mask, cfg)
    cam = surround_cameras(scene, 6, 160, 90)[0]
    return {
        "block_mean s=4": lambda: kernels.block_mean(scalars, 4),
        "block_mode s=4": lambda: kernels.block_mode(labels, 4),
        "block_nonuniform s=4": lambda: kernels.block_nonuniform(labels, 4),
        "encode+decode (mode)": lambda: octree_to_dense(dense_to_octree(scene, structure, "mode"), structure),
        "render_segmap 160x90": lambda: render_segmap(scene, cam),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--dims", default="200,200,16")
    args = ap.parse_args()
    dims = tuple(int(v) for v in args.dims.split(","))
    kernels.warmup()
    table = cases(dims)
    backends = kernels.available_backends()
    print(f"dims {dims}, best / median of {args.repeats} runs, milliseconds")
    print(f"{'case':<24}" + "".join(f"{b:>22}" for b in backends))
    for name, fn in table.items():
        row = f"{name:<24}"
        for b in backends:
            with kernels.use_backend(b):
                best, med = timeit(fn, args.repeats)
            row += f"{best * 1e3:>12.2f} / {med * 1e3:>7.2f}"
        print(row)


if __name__ == "__main__":
    main()
