"""Select the compiled kernels when importable, else the numpy fallback.

Set ``REMQTE_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

BACKEND = "python"
rem_search = _fallback.rem_search

if os.environ.get("REMQTE_PURE_PYTHON", "") in ("", "0"):
    try:
        from ._kernels import rem_search  # noqa: F811
    except ImportError:
        pass
    else:
        BACKEND = "cython"
