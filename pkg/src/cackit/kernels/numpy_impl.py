"""Pure numpy/scipy implementations of the scoring hot loops."""

from __future__ import annotations

import numpy as np
from scipy import ndimage

_STRUCT_26 = np.ones((3, 3, 3), dtype=bool)
_STRUCT_8_2D = np.zeros((3, 3, 3), dtype=bool)
_STRUCT_8_2D[1, :, :] = True  # in-plane neighbours only


def label_components(flat_idx: np.ndarray, dims: tuple[int, int, int],
                     connectivity: str) -> np.ndarray:
    """Label voxels listed by sorted flattened index.

    Labels are canonical: component k has the k-th smallest minimum
    flattened index. Works on the mask's bounding box, so memory scales
    with lesion extent rather than volume size.
    """
    if connectivity not in ("conn26_3d", "conn8_2d"):
        raise ValueError(f"unknown connectivity {connectivity!r}")
    if flat_idx.size == 0:
        return np.zeros(0, dtype=np.int64)
    n_slices, n_rows, n_cols = dims
    structure = _STRUCT_26 if connectivity == "conn26_3d" else _STRUCT_8_2D

    z = flat_idx // (n_rows * n_cols)
    rem = flat_idx % (n_rows * n_cols)
    y = rem // n_cols
    x = rem % n_cols

    z0, y0, x0 = int(z.min()), int(y.min()), int(x.min())
    box = np.zeros((int(z.max()) - z0 + 1, int(y.max()) - y0 + 1,
                    int(x.max()) - x0 + 1), dtype=bool)
    box[z - z0, y - y0, x - x0] = True
    dense_labels, _ = ndimage.label(box, structure=structure)
    raw = dense_labels[z - z0, y - y0, x - x0].astype(np.int64)

    # flat_idx is sorted, so first occurrence order == min-index order
    _, first, inverse = np.unique(raw, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse].astype(np.int64)


def lesion_slice_stats(labels: np.ndarray, slice_idx: np.ndarray,
                       hu: np.ndarray):
    """Per (label, slice) voxel count and peak HU, sorted by (label, slice)."""
    if labels.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty
    order = np.lexsort((slice_idx, labels))
    lab_s = labels[order]
    sl_s = slice_idx[order]
    hu_s = hu[order].astype(np.int64)

    boundary = np.empty(lab_s.size, dtype=bool)
    boundary[0] = True
    boundary[1:] = (lab_s[1:] != lab_s[:-1]) | (sl_s[1:] != sl_s[:-1])
    starts = np.flatnonzero(boundary)

    counts = np.diff(np.append(starts, lab_s.size)).astype(np.int64)
    peaks = np.maximum.reduceat(hu_s, starts)
    return lab_s[starts], sl_s[starts], counts, peaks
