"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available.  Set SSMKIT_PURE=1 to force the fallback (used by the
backend benchmark and the equivalence tests).
"""
from __future__ import annotations

import os

from . import _purekernels

if os.environ.get("SSMKIT_PURE", "") not in ("", "0"):
    _impl = _purekernels
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _purekernels

BACKEND = _impl.BACKEND

simulate_ws_batch = _impl.simulate_ws_batch
simulate_idm_batch = _impl.simulate_idm_batch
nw_evaluate_many = _impl.nw_evaluate_many
nw_gradient_many = _impl.nw_gradient_many
greedy_cover = _impl.greedy_cover


def get_backends():
    """(name, module) pairs of every importable backend."""
    backends = [("pure", _purekernels)]
    try:
        from . import _native
        backends.append(("native", _native))
    except ImportError:
        pass
    return backends
