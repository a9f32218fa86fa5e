"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy
reference is used. Set ``AEROTRACK_PURE=1`` to force the fallback.
"""
import os

from . import _pykernels

if os.environ.get("AEROTRACK_PURE", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.BACKEND
dbscan_labels = _impl.dbscan_labels
lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward


def available_backends():
    """Map of backend name to kernel module for every importable backend."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        out["cython"] = _ckernels
    return out


def use_backend(name: str) -> str:
    """Switch every kernel to backend ``name``; returns the previous backend name."""
    global BACKEND, dbscan_labels, lstm_forward, lstm_backward
    backends = available_backends()
    if name not in backends:
        raise ValueError(f"backend {name!r} not available (have {sorted(backends)})")
    prev = BACKEND
    impl = backends[name]
    BACKEND = impl.BACKEND
    dbscan_labels = impl.dbscan_labels
    lstm_forward = impl.lstm_forward
    lstm_backward = impl.lstm_backward
    return prev
