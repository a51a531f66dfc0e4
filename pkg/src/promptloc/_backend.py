"""Kernel backend selection.

The compiled extension is used when it imports cleanly, unless the
environment variable ``PROMPTLOC_PURE_PYTHON`` is set to a truthy value.
"""

import logging
import os

from . import _kernels_py

logger = logging.getLogger(__name__)

_FORCE_PY = os.environ.get("PROMPTLOC_PURE_PYTHON", "").lower() in ("1", "true", "yes")

if _FORCE_PY:
    kernels = _kernels_py
    COMPILED = False
else:
    try:
        from . import _kernels as kernels  # type: ignore[attr-defined]

        COMPILED = True
    except ImportError:  # extension not built
        logger.info("compiled kernels unavailable; using numpy fallback")
        kernels = _kernels_py
        COMPILED = False

BACKEND = "cython" if COMPILED else "numpy"
