"""Backend selection for the hot loops.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Set ``SWIMCYCLE_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("SWIMCYCLE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py

advect_mac = _impl.advect_mac
advect_cc = _impl.advect_cc
ib_interpolate = _impl.ib_interpolate
ib_spread = _impl.ib_spread
ib_spread_add = _impl.ib_spread_add
sample_bilinear = _impl.sample_bilinear
spectral_diffuse_project = _impl.spectral_diffuse_project

__all__ = ["BACKEND", "advect_mac", "advect_cc", "ib_interpolate", "ib_spread", "ib_spread_add", "sample_bilinear", "spectral_diffuse_project"]
