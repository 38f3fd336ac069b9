"""Hot-kernel dispatch.

The compiled extension is used when it imports cleanly; otherwise the numpy
fallback is selected. Set ``FRAMESEARCH_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "numpy"

if os.environ.get("FRAMESEARCH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _fallback
    else:
        BACKEND = "cython"
else:
    _impl = _fallback

im2col = _impl.im2col
col2im = _impl.col2im
sq_l2_rows = _impl.sq_l2_rows
