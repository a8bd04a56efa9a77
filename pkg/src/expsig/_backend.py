"""Select the signature kernel implementation at import time."""

import os

BACKEND = "python"

if os.environ.get("EXPSIG_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from expsig import _sigkernel as kernel

        BACKEND = "cython"
    except ImportError:  # extension not built
        from expsig import _sigkernel_py as kernel
else:
    from expsig import _sigkernel_py as kernel

__all__ = ["BACKEND", "kernel"]
