"""Hot patch-extraction kernels with backend selection at import time.

The compiled Cython backend is preferred when the extension built; the numpy
fallback is always available. Both produce bit-identical results. Set
RINGAE_KERNELS=numpy|cython to force a backend (cython raises if the
extension is missing).
"""

import os

from . import _npconv

_requested = os.environ.get("RINGAE_KERNELS", "auto")
if _requested not in ("auto", "cython", "numpy"):
    raise RuntimeError(f"RINGAE_KERNELS must be auto, cython or numpy, got {_requested!r}")

if _requested == "numpy":
    _impl = _npconv
    BACKEND = "numpy"
else:
    try:
        from . import _cyconv as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _npconv
        BACKEND = "numpy"

im2col = _impl.im2col
col2im = _impl.col2im
out_extent = _npconv.out_extent
