"""Backend selection for the scoring hot loops.

Connected-component labeling and per-lesion slice statistics dominate the
runtime of batch scoring, so both exist twice: a jitted implementation in
:mod:`cackit.kernels.numba_impl` and a vectorized numpy/scipy fallback in
:mod:`cackit.kernels.numpy_impl`. The backend is chosen at import time:

* ``CACKIT_KERNELS=numpy`` forces the fallback,
* ``CACKIT_KERNELS=numba`` forces the jitted path (ImportError if numba is
  not installed),
* unset: numba when importable, numpy otherwise.

Both backends share one contract, checked by the test suite:

``label_components(flat_idx, dims, connectivity)``
    ``flat_idx`` is a sorted int64 array of flattened voxel indices
    (slice-major, then row-major). Returns an int64 label per voxel;
    labels are 0..k-1 in ascending order of each component's minimum
    flattened index, so output is independent of backend and scheduling.

``lesion_slice_stats(labels, slice_idx, hu)``
    Groups voxels by (label, slice) and returns four parallel arrays
    sorted by (label, slice): label, slice index, voxel count, peak HU.
"""

import os

_choice = os.environ.get("CACKIT_KERNELS", "").strip().lower()
if _choice not in ("", "numba", "numpy"):
    raise ValueError(f"CACKIT_KERNELS must be 'numba' or 'numpy', got {_choice!r}")

if _choice == "numpy":
    from . import numpy_impl as _impl

    BACKEND = "numpy"
elif _choice == "numba":
    from . import numba_impl as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover - depends on environment
        from . import numpy_impl as _impl

        BACKEND = "numpy"

label_components = _impl.label_components
lesion_slice_stats = _impl.lesion_slice_stats

__all__ = ["BACKEND", "label_components", "lesion_slice_stats"]
