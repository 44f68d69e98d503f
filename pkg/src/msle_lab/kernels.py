"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting ``MSLE_LAB_PURE=1``
forces the pure-Python fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("MSLE_LAB_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _kernels_py

BACKEND: str = _impl.BACKEND
walk = _impl.walk
lerw = _impl.lerw
lerw_batch = _impl.lerw_batch
lerw_keys = _impl.lerw_keys
loop_erase = _impl.loop_erase
slit_forward = _impl.slit_forward
slit_inverse = _impl.slit_inverse
unzip = _impl.unzip

__all__ = ["BACKEND", "walk", "lerw", "lerw_batch", "lerw_keys", "loop_erase",
           "slit_forward", "slit_inverse", "unzip"]
