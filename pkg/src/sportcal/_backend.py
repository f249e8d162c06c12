"""Select the compiled kernels when available, else the numpy fallback.

Set SPORTCAL_PURE_PYTHON=1 to force the fallback.
"""

from __future__ import annotations

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

kernels = _kernels_py
NAME = "python"

if os.environ.get("SPORTCAL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]

        NAME = "cython"
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable; using numpy fallback")

squared_edt = kernels.squared_edt
draw_segments = kernels.draw_segments
lk_accumulate = kernels.lk_accumulate
