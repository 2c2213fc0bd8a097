"""Inner loops with two interchangeable backends.

Every kernel here exists twice: a ``numba`` version compiled with ``@njit``
and a vectorised pure-numpy version. Both must return identical arrays (the
test-suite runs each kernel under both). The active backend comes from the
``OCCTREE_BACKEND`` environment variable (``numba``, ``numpy`` or ``auto``;
``auto`` picks numba when it imports) and can be switched at runtime with
:func:`use_backend`.
"""

from __future__ import annotations

import contextlib
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

BACKENDS = ("numba", "numpy")


def _initial_backend():
    name = os.environ.get("OCCTREE_BACKEND", "auto").strip().lower()
    if name in ("", "auto"):
        return "numba" if numba is not None else "numpy"
    if name not in BACKENDS:
        raise RuntimeError(f"OCCTREE_BACKEND must be one of {BACKENDS} or 'auto', got {name!r}")
    if name == "numba" and numba is None:
        raise RuntimeError("OCCTREE_BACKEND=numba but numba is not installed")
    return name


_backend = _initial_backend()


def backend():
    return _backend


def available_backends():
    return BACKENDS if numba is not None else ("numpy",)


def set_backend(name):
    global _backend
    if name not in available_backends():
        raise ValueError(f"backend {name!r} not available; choose from {available_backends()}")
    _backend = name


@contextlib.contextmanager
def use_backend(name):
    """Temporarily switch the kernel backend."""
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


if numba is not None:
    njit = numba.njit(cache=True, nogil=True)
else:  # pragma: no cover
    def njit(fn):
        return fn


def _blocks(values, s):
    """View ``values`` as ``(nx, ny, nz, s**3)`` blocks of edge ``s``."""
    x, y, z = values.shape
    v = values.reshape(x // s, s, y // s, s, z // s, s)
    v = v.transpose(0, 2, 4, 1, 3, 5)
    return v.reshape(x // s, y // s, z // s, s * s * s)


# ---------------------------------------------------------------------------
# block mean


@njit
def _block_mean_nb(values, s):
    nx = values.shape[0] // s
    ny = values.shape[1] // s
    nz = values.shape[2] // s
    out = np.empty((nx, ny, nz), dtype=np.float32)
    inv = 1.0 / (s * s * s)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                acc = 0.0
                for a in range(i * s, i * s + s):
                    for b in range(j * s, j * s + s):
                        for c in range(k * s, k * s + s):
                            acc += np.float64(values[a, b, c])
                out[i, j, k] = acc * inv
    return out


def _block_mean_np(values, s):
    total = _blocks(values, s).sum(axis=-1, dtype=np.float64)
    return (total * (1.0 / (s * s * s))).astype(np.float32)


def block_mean(values, s):
    """Mean over non-overlapping ``s``-edge blocks, accumulated in float64."""
    values = np.ascontiguousarray(values)
    if _backend == "numba":
        return _block_mean_nb(values, s)
    return _block_mean_np(values, s)


# ---------------------------------------------------------------------------
# block mode


@njit
def _block_mode_nb(labels, s, nlabels):
    nx = labels.shape[0] // s
    ny = labels.shape[1] // s
    nz = labels.shape[2] // s
    out = np.empty((nx, ny, nz), dtype=labels.dtype)
    counts = np.zeros(nlabels, dtype=np.int64)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for a in range(i * s, i * s + s):
                    for b in range(j * s, j * s + s):
                        for c in range(k * s, k * s + s):
                            counts[labels[a, b, c]] += 1
                best = 0
                best_count = -1
                for a in range(i * s, i * s + s):
                    for b in range(j * s, j * s + s):
                        for c in range(k * s, k * s + s):
                            lab = labels[a, b, c]
                            n = counts[lab]
                            if n > best_count or (n == best_count and lab < best):
                                best = lab
                                best_count = n
                for a in range(i * s, i * s + s):
                    for b in range(j * s, j * s + s):
                        for c in range(k * s, k * s + s):
                            counts[labels[a, b, c]] = 0
                out[i, j, k] = best
    return out


def _block_mode_np(labels, s):
    blocks = _blocks(labels, s)
    shape = blocks.shape[:3]
    flat = blocks.reshape(-1, s**3).astype(np.int64)
    # Sort each block, then find the longest run; the first longest run in
    # sorted order carries the smallest label among the tied maxima.
    srt = np.sort(flat, axis=1)
    n = srt.shape[1]
    change = np.ones_like(srt, dtype=bool)
    change[:, 1:] = srt[:, 1:] != srt[:, :-1]
    run_start = np.where(change, np.arange(n)[None, :], 0)
    run_start = np.maximum.accumulate(run_start, axis=1)
    run_len = np.arange(n)[None, :] - run_start + 1
    best = np.argmax(run_len, axis=1)
    mode = srt[np.arange(srt.shape[0]), best]
    return mode.astype(labels.dtype).reshape(shape)


def block_mode(labels, s):
    """Most frequent label per ``s``-edge block; ties go to the smallest label."""
    labels = np.ascontiguousarray(labels)
    if _backend == "numba":
        nlabels = int(labels.max()) + 1 if labels.size else 1
        return _block_mode_nb(labels, s, nlabels)
    return _block_mode_np(labels, s)


# ---------------------------------------------------------------------------
# block non-uniformity


@njit
def _block_nonuniform_nb(labels, s):
    nx = labels.shape[0] // s
    ny = labels.shape[1] // s
    nz = labels.shape[2] // s
    out = np.zeros((nx, ny, nz), dtype=np.uint8)
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                first = labels[i * s, j * s, k * s]
                done = False
                for a in range(i * s, i * s + s):
                    for b in range(j * s, j * s + s):
                        for c in range(k * s, k * s + s):
                            if labels[a, b, c] != first:
                                out[i, j, k] = 1
                                done = True
                                break
                        if done:
                            break
                    if done:
                        break
    return out


def _block_nonuniform_np(labels, s):
    blocks = _blocks(labels, s)
    return (blocks.min(axis=-1) != blocks.max(axis=-1)).astype(np.uint8)


def block_nonuniform(labels, s):
    """1 where an ``s``-edge block holds more than one distinct label."""
    labels = np.ascontiguousarray(labels)
    if _backend == "numba":
        return _block_nonuniform_nb(labels, s)
    return _block_nonuniform_np(labels, s)


# ---------------------------------------------------------------------------
# leaf scatter (octree -> dense)


@njit
def _scatter_leaves_nb(out, levels, coords, payload, depth):
    for n in range(levels.shape[0]):
        s = 1 << (depth - 1 - levels[n])
        a0 = coords[n, 0] * s
        b0 = coords[n, 1] * s
        c0 = coords[n, 2] * s
        v = payload[n]
        for a in range(a0, a0 + s):
            for b in range(b0, b0 + s):
                for c in range(c0, c0 + s):
                    out[a, b, c] = v
    return out


def _scatter_leaves_np(out, levels, coords, payload, depth):
    shape = out.shape
    for lev in np.unique(levels):
        s = 1 << (depth - 1 - int(lev))
        sel = levels == lev
        coarse_shape = (shape[0] // s, shape[1] // s, shape[2] // s)
        val = np.zeros(coarse_shape, dtype=out.dtype)
        cov = np.zeros(coarse_shape, dtype=bool)
        c = coords[sel]
        val[c[:, 0], c[:, 1], c[:, 2]] = payload[sel]
        cov[c[:, 0], c[:, 1], c[:, 2]] = True
        for axis in range(3):
            val = np.repeat(val, s, axis=axis)
            cov = np.repeat(cov, s, axis=axis)
        out[cov] = val[cov]
    return out


def scatter_leaves(shape, dtype, levels, coords, payload, depth):
    """Broadcast each leaf payload over its finest-level footprint."""
    out = np.zeros(shape, dtype=dtype)
    # small leaf arrays: copy to writeable so numba sees one array type
    levels = np.require(levels, np.int64, ["C", "W"])
    coords = np.require(coords, np.int64, ["C", "W"])
    payload = np.require(payload, dtype, ["C", "W"])
    if _backend == "numba":
        return _scatter_leaves_nb(out, levels, coords, payload, depth)
    return _scatter_leaves_np(out, levels, coords, payload, depth)


# ---------------------------------------------------------------------------
# depth-buffered splatting


@njit
def _zbuffer_nb(pixels, depths, classes, npix):
    out = np.zeros(npix, dtype=np.uint8)
    best = np.full(npix, np.inf)
    for n in range(pixels.shape[0]):
        p = pixels[n]
        if depths[n] < best[p]:
            best[p] = depths[n]
            out[p] = classes[n]
    return out


def _zbuffer_np(pixels, depths, classes, npix):
    out = np.zeros(npix, dtype=np.uint8)
    if pixels.size == 0:
        return out
    # primary key depth, secondary arrival order (callers pass voxels in
    # ascending linear index, so earlier wins ties)
    order = np.lexsort((np.arange(pixels.size), depths))
    pix_sorted = pixels[order]
    _, first = np.unique(pix_sorted, return_index=True)
    winners = order[first]
    out[pixels[winners]] = classes[winners]
    return out


def zbuffer(pixels, depths, classes, npix):
    """Nearest-depth class per pixel; on equal depth the earlier entry wins."""
    pixels = np.require(pixels, np.int64, ["C", "W"])
    depths = np.require(depths, np.float64, ["C", "W"])
    classes = np.require(classes, np.uint8, ["C", "W"])
    if _backend == "numba":
        return _zbuffer_nb(pixels, depths, classes, npix)
    return _zbuffer_np(pixels, depths, classes, npix)


def _readonly(a):
    a = a.copy()
    a.flags.writeable = False
    return a


def warmup():
    """Compile every numba kernel once so later calls are not charged for JIT.

    Grid payloads are read-only arrays, which numba types separately, so both
    flavours are compiled.
    """
    if numba is None:
        return
    with use_backend("numba"):
        for wrap in (np.asarray, _readonly):
            for dtype in (np.uint16, np.uint8):
                lab = wrap(np.zeros((4, 4, 4), dtype=dtype))
                block_mode(lab, 2)
                block_nonuniform(lab, 2)
            block_mean(wrap(np.zeros((4, 4, 4), dtype=np.float32)), 2)
        for dtype in (np.uint16, np.float32, np.uint8):
            scatter_leaves((4, 4, 4), dtype, np.zeros(1, np.int64), np.zeros((1, 3), np.int64),
                           np.zeros(1, dtype), 3)
        zbuffer(np.zeros(1, np.int64), np.ones(1), np.ones(1, np.uint8), 1)
