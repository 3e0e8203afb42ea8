"""Backend selection for the hot grid kernels.

Prefers the compiled Cython extension and falls back to the pure-numpy
implementation when the extension is absent or ``EPNN_PURE_PYTHON=1`` is set.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("EPNN_PURE_PYTHON", "") == "1":
    _impl = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "numpy"

tilted_h_batch = _impl.tilted_h_batch
