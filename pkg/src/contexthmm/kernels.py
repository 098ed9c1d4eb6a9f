"""Kernel backend selection: compiled core when available, NumPy otherwise.

Set ``CONTEXTHMM_PURE_PY=1`` to force the NumPy backend even when the
compiled extension is importable.
"""

import os

from . import _fbcore_py

if os.environ.get("CONTEXTHMM_PURE_PY") == "1":
    _impl = _fbcore_py
else:
    try:
        from . import _fbcore as _impl
    except ImportError:
        _impl = _fbcore_py

BACKEND = _impl.BACKEND
forward = _impl.forward
backward = _impl.backward
posteriors = _impl.posteriors


def available_backends():
    """Name->module map of every kernel backend importable right now."""
    backends = {"python": _fbcore_py}
    try:
        from . import _fbcore
        backends["cython"] = _fbcore
    except ImportError:
        pass
    return backends
