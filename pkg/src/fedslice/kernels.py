"""Kernel backend selection.

The compiled extension (``fedslice._core``) is preferred; the pure-numpy
fallback is used when the extension is absent or when the environment
variable ``FEDSLICE_KERNELS=python`` forces it. Both expose the same
functions with bit-identical results.
"""

from __future__ import annotations

import os

from fedslice import _kernels_py

_impl = _kernels_py
if os.environ.get("FEDSLICE_KERNELS", "").lower() != "python":
    try:
        from fedslice import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

sinr_all = _impl.sinr_all
slice_se_sums = _impl.slice_se_sums
band_overlap = _impl.band_overlap
leakage_all = _impl.leakage_all


def backend() -> str:
    """Name of the active kernel backend ('compiled' or 'python')."""
    return _impl.BACKEND


def available_backends() -> dict:
    """All importable backends, for equivalence tests and benchmarks."""
    impls = {"python": _kernels_py}
    try:
        from fedslice import _core

        impls["compiled"] = _core
    except ImportError:
        pass
    return impls
