"""Backend selection for the hot training kernels.

The compiled extension (``hbfl._kernels``) is preferred; the numpy
implementation in ``hbfl._kernels_py`` is used when the extension is missing
or when ``HBFL_PURE_PYTHON=1`` is set in the environment.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("HBFL_PURE_PYTHON", "").strip() not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

forward = _impl.forward
batch_gradient = _impl.batch_gradient
train = _impl.train

__all__ = ["BACKEND", "forward", "batch_gradient", "train"]
