"""Jitted implementations of the scoring hot loops.

Labeling runs union-find over the sparse voxel list: for each voxel, only
neighbours with a smaller flattened index are probed (13 offsets for 3D
26-connectivity, 4 for in-plane 8-connectivity) and located by binary
search in the sorted index array. This keeps the cost proportional to the
number of mask voxels, not the volume.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# (dz, dy, dx) neighbour offsets that strictly precede a voxel in
# flattened (slice, row, col) order.
_OFFSETS_26 = np.array(
    [(dz, dy, dx)
     for dz in (-1, 0) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
     if (dz, dy, dx) < (0, 0, 0)],
    dtype=np.int64,
)
_OFFSETS_8_2D = np.array(
    [(0, -1, -1), (0, -1, 0), (0, -1, 1), (0, 0, -1)], dtype=np.int64
)


@njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        parent[i], i = root, parent[i]
    return root


@njit(cache=True)
def _binary_search(a, v):
    lo, hi = 0, a.size
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    if lo < a.size and a[lo] == v:
        return lo
    return -1


@njit(cache=True)
def _label_sparse(flat_idx, n_slices, n_rows, n_cols, offsets):
    n = flat_idx.size
    parent = np.arange(n)
    plane = n_rows * n_cols
    for i in range(n):
        z = flat_idx[i] // plane
        rem = flat_idx[i] % plane
        y = rem // n_cols
        x = rem % n_cols
        for k in range(offsets.shape[0]):
            nz = z + offsets[k, 0]
            ny = y + offsets[k, 1]
            nx = x + offsets[k, 2]
            if nz < 0 or ny < 0 or ny >= n_rows or nx < 0 or nx >= n_cols:
                continue
            j = _binary_search(flat_idx, nz * plane + ny * n_cols + nx)
            if j >= 0:
                ri = _find(parent, i)
                rj = _find(parent, j)
                if ri != rj:
                    # keep the smaller index as root so roots stay canonical
                    if ri < rj:
                        parent[rj] = ri
                    else:
                        parent[ri] = rj
    # ascending first-occurrence of roots == ascending min member index
    root_label = np.full(n, -1, dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    next_label = 0
    for i in range(n):
        r = _find(parent, i)
        if root_label[r] < 0:
            root_label[r] = next_label
            next_label += 1
        labels[i] = root_label[r]
    return labels


@njit(cache=True)
def _slice_stats(lab_s, sl_s, hu_s):
    n = lab_s.size
    n_groups = 1
    for i in range(1, n):
        if lab_s[i] != lab_s[i - 1] or sl_s[i] != sl_s[i - 1]:
            n_groups += 1
    out_lab = np.empty(n_groups, dtype=np.int64)
    out_sl = np.empty(n_groups, dtype=np.int64)
    out_cnt = np.zeros(n_groups, dtype=np.int64)
    out_peak = np.empty(n_groups, dtype=np.int64)
    g = -1
    for i in range(n):
        if i == 0 or lab_s[i] != lab_s[i - 1] or sl_s[i] != sl_s[i - 1]:
            g += 1
            out_lab[g] = lab_s[i]
            out_sl[g] = sl_s[i]
            out_peak[g] = hu_s[i]
        out_cnt[g] += 1
        if hu_s[i] > out_peak[g]:
            out_peak[g] = hu_s[i]
    return out_lab, out_sl, out_cnt, out_peak


def label_components(flat_idx: np.ndarray, dims: tuple[int, int, int],
                     connectivity: str) -> np.ndarray:
    if connectivity not in ("conn26_3d", "conn8_2d"):
        raise ValueError(f"unknown connectivity {connectivity!r}")
    if flat_idx.size == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = _OFFSETS_26 if connectivity == "conn26_3d" else _OFFSETS_8_2D
    return _label_sparse(np.ascontiguousarray(flat_idx, dtype=np.int64),
                         dims[0], dims[1], dims[2], offsets)


def lesion_slice_stats(labels: np.ndarray, slice_idx: np.ndarray,
                       hu: np.ndarray):
    if labels.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty
    order = np.lexsort((slice_idx, labels))
    return _slice_stats(labels[order].astype(np.int64),
                        slice_idx[order].astype(np.int64),
                        hu[order].astype(np.int64))
