"""Select the compiled kernels when importable, else the Python fallback.

Set ``CILQG_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

python_kernels = _pykernels
compiled_kernels = None

try:
    from . import _kernels as compiled_kernels  # type: ignore[no-redef]
except ImportError:  # pragma: no cover - depends on the build
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("CILQG_BACKEND", "").lower() != "python":
    kernels = compiled_kernels
    BACKEND = "compiled"
else:
    kernels = _pykernels
    BACKEND = "python"


def get(name: str | None = None):
    """Kernel module by name (``"compiled"``/``"python"``) or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        if compiled_kernels is None:
            raise ImportError("compiled kernels are not built")
        return compiled_kernels
    raise ValueError(f"unknown backend {name!r}")
