"""Selects the compiled kernels when importable, else the numpy fallback.

Set ``TTFSNET_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("TTFSNET_PURE_PYTHON"):
    kernels = _fallback
    NAME = "python"
else:
    try:
        from . import _kernels as kernels
        NAME = "cython"
    except ImportError:
        kernels = _fallback
        NAME = "python"


def available_backends():
    """Map of backend name to kernel module for everything importable here."""
    out = {"python": _fallback}
    try:
        from . import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
