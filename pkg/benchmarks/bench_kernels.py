"""Time the labeling kernels on synthetic masks, numba vs numpy.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sides 64,128,192 --repeats 7

Both backends are imported directly, so the CACKIT_KERNELS variable has
no effect here. The numba column includes a discarded warm-up call; the
reported number is the best wall time over the repeats.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from cackit.kernels import numpy_impl

try:
    from cackit.kernels import numba_impl
except ImportError:
    numba_impl = None


def synthetic_candidates(rng: np.random.Generator, side: int,
                         n_blobs: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted flattened indices and HU values for blob-shaped lesions."""
    dense = np.zeros((side, side, side), dtype=bool)
    hu = np.zeros((side, side, side), dtype=np.int16)
    for _ in range(n_blobs):
        z, y, x = (int(rng.integers(0, side - 8)) for _ in range(3))
        dz, dy, dx = (int(rng.integers(2, 9)) for _ in range(3))
        block = rng.random((dz, dy, dx)) < 0.7
        dense[z:z + dz, y:y + dy, x:x + dx] |= block
        hu[z:z + dz, y:y + dy, x:x + dx] = np.where(
            block, rng.integers(130, 900, (dz, dy, dx)),
            hu[z:z + dz, y:y + dy, x:x + dx])
    flat = np.flatnonzero(dense.reshape(-1)).astype(np.int64)
    return flat, hu.reshape(-1)[flat]


def bench_backend(impl, flat: np.ndarray, dims, hu: np.ndarray,
                  repeats: int) -> tuple[float, int]:
    best = float("inf")
    n_lesions = 0
    for _ in range(repeats):
        started = time.perf_counter()
        labels = impl.label_components(flat, dims, "conn26_3d")
        slice_idx = flat // (dims[1] * dims[2])
        impl.lesion_slice_stats(labels, slice_idx, hu)
        best = min(best, time.perf_counter() - started)
        n_lesions = int(labels.max()) + 1 if labels.size else 0
    return best, n_lesions


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sides", default="32,64,128",
                        help="comma-separated cubic volume sides")
    parser.add_argument("--blobs-per-side", type=int, default=4,
                        help="lesion blobs per 32 voxels of side length")
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    sides = [int(s) for s in args.sides.split(",")]

    if numba_impl is not None:
        # compile outside the timed region
        warm = np.array([0], dtype=np.int64)
        numba_impl.label_components(warm, (1, 1, 1), "conn26_3d")
        numba_impl.lesion_slice_stats(warm * 0, warm * 0,
                                      np.array([200], dtype=np.int64))

    header = f"{'side':>6} {'voxels':>9} {'lesions':>8} {'numpy ms':>10}"
    if numba_impl is not None:
        header += f" {'numba ms':>10} {'speedup':>8}"
    print(header)
    for side in sides:
        n_blobs = max(1, args.blobs_per_side * side // 32)
        flat, hu = synthetic_candidates(rng, side, n_blobs)
        dims = (side, side, side)
        np_best, n_lesions = bench_backend(numpy_impl, flat, dims, hu,
                                           args.repeats)
        line = f"{side:>6} {flat.size:>9} {n_lesions:>8} {np_best * 1e3:>10.3f}"
        if numba_impl is not None:
            nb_best, nb_lesions = bench_backend(numba_impl, flat, dims, hu,
                                                args.repeats)
            assert nb_lesions == n_lesions, "backends disagree on labeling"
            line += f" {nb_best * 1e3:>10.3f} {np_best / nb_best:>7.1f}x"
        print(line)


if __name__ == "__main__":
    main()
