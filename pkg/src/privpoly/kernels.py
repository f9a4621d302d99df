"""Hot-loop kernels with backend selection at import time.

``PRIVPOLY_BACKEND`` picks the implementation: ``auto`` (default) uses the
compiled GMP extension when it was built and falls back to pure Python
otherwise; ``compiled`` insists on the extension; ``python`` forces the
fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

_requested = os.environ.get("PRIVPOLY_BACKEND", "auto").lower()

if _requested not in {"auto", "compiled", "python"}:
    raise ImportError(f"unknown PRIVPOLY_BACKEND={_requested!r}")

_impl = _pykernels
BACKEND = "python"
if _requested != "python":
    try:
        from . import _gmpkernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise

powmod = _impl.powmod
prod_powmod = _impl.prod_powmod


def available_backends() -> dict:
    """Map backend name to its kernel module, for benchmarks and tests."""
    backends = {"python": _pykernels}
    try:
        from . import _gmpkernels

        backends["compiled"] = _gmpkernels
    except ImportError:
        pass
    return backends
