"""Select the compiled kernels when available, else the numpy fallback.

Set ``RLPP_BACKEND=python`` to force the fallback, or ``RLPP_BACKEND=cython``
to make a missing extension an import error instead of a silent downgrade.
"""
import os

from . import _fallback

_requested = os.environ.get("RLPP_BACKEND", "").strip().lower()

if _requested == "python":
    kernels = _fallback
    BACKEND = "python"
else:
    try:
        from . import _ext as kernels
        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        kernels = _fallback
        BACKEND = "python"

_threads = 1


def set_threads(n: int) -> None:
    """Thread count for the parallel kernel sums (results do not depend on it)."""
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads
