"""Selects the compiled kernel core when available, numpy fallback otherwise.

Set ``RNNMIMIC_BACKEND=python`` or ``RNNMIMIC_BACKEND=compiled`` to force a
choice; forcing ``compiled`` raises if the extension is not importable.
"""

import os

from . import _kernels_py

_forced = os.environ.get("RNNMIMIC_BACKEND")

if _forced == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _kernels_py

BACKEND = _impl.BACKEND_NAME

rollout_batch = _impl.rollout_batch
bptt_batch = _impl.bptt_batch
settle_autonomous = _impl.settle_autonomous


def backend_name() -> str:
    """Name of the active kernel backend ('compiled' or 'python')."""
    return BACKEND
