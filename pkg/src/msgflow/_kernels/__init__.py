"""Kernel selection: compiled extension when available, pure Python otherwise.

Set MSGFLOW_PURE=1 to force the pure-Python kernels even when the
extension is built (useful for debugging and benchmarking).
"""

from __future__ import annotations

import os

if os.environ.get("MSGFLOW_PURE"):
    from msgflow._kernels import _pykernels as _impl
else:
    try:
        from msgflow._kernels import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        from msgflow._kernels import _pykernels as _impl  # type: ignore[no-redef]

IMPLEMENTATION: str = _impl.IMPLEMENTATION
innermost_enclosing = _impl.innermost_enclosing
reachable_mask = _impl.reachable_mask

__all__ = ["IMPLEMENTATION", "innermost_enclosing", "reachable_mask"]
