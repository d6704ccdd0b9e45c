"""Select the clearing kernel at import: compiled extension or numpy twin.

``LEVCLEAR_PURE_PYTHON=1`` forces the fallback regardless of what is built.
"""

import os

if os.environ.get("LEVCLEAR_PURE_PYTHON"):
    from . import _reference as kernels
else:
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import _reference as kernels

COMPILED = bool(getattr(kernels, "COMPILED", False))
