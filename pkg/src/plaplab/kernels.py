"""Kernel backend selection.

The compiled extension is used when it imports; setting the environment
variable ``PLAPLAB_PURE_PYTHON=1`` forces the NumPy fallback.
"""
import os

if os.environ.get("PLAPLAB_PURE_PYTHON") == "1":
    from . import _pykernels as _impl
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        from . import _pykernels as _impl

BACKEND = _impl.BACKEND
flux_update_1d = _impl.flux_update_1d
flux_update_2d = _impl.flux_update_2d
max_coefficient_1d = _impl.max_coefficient_1d
max_coefficient_2d = _impl.max_coefficient_2d
