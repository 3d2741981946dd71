"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
implementation. ``MAPDENOISE_BACKEND=numpy`` forces the fallback.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"numpy": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


def _select():
    wanted = os.environ.get("MAPDENOISE_BACKEND", "").strip().lower()
    if wanted:
        if wanted not in BACKENDS:
            raise ImportError(
                f"MAPDENOISE_BACKEND={wanted!r} is not available; have {sorted(BACKENDS)}"
            )
        return wanted
    return "cython" if "cython" in BACKENDS else "numpy"


BACKEND = _select()
_impl = BACKENDS[BACKEND]

conv1d_forward = _impl.conv1d_forward
conv1d_backward_input = _impl.conv1d_backward_input
conv1d_backward_weight = _impl.conv1d_backward_weight
sosfilt = _impl.sosfilt
