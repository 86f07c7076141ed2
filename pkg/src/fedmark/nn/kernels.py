"""Kernel backend selection.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is missing or FEDMARK_PURE_PY=1 is set. Both backends expose
the same five functions and produce bit-identical results.
"""

import os

from fedmark.nn import _kernels_py

if os.environ.get("FEDMARK_PURE_PY"):
    _impl = _kernels_py
else:
    try:
        from fedmark.nn import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND

conv_out_size = _impl.conv_out_size
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward
