"""Select the compiled threshold kernel, falling back to numpy.

Set ``HICOME_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _fallback

NAME = "python"
threshold_histograms = _fallback.threshold_histograms

if os.environ.get("HICOME_PURE_PYTHON", "") in ("", "0"):
    try:
        from ._kernels import threshold_histograms  # noqa: F811
        NAME = "cython"
    except ImportError:
        pass
