"""Pick the compiled kernels when they import, else the numpy fallback.

Set ``LPMODREC_BACKEND=python`` to force the fallback.
"""

import os
from types import ModuleType

from . import _fallback


def _load_compiled() -> ModuleType | None:
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load_compiled()


def get_backend(name: str | None = None) -> ModuleType:
    name = name or os.environ.get("LPMODREC_BACKEND", "auto")
    if name == "python":
        return _fallback
    if name in ("cython", "compiled"):
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    return _compiled or _fallback


kernels = get_backend()
BACKEND = "cython" if kernels is _compiled else "python"
