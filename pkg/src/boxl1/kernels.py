"""Backend selection between the compiled kernels and the numpy fallback.

The compiled extension is used when importable unless the environment
variable ``BXL1_BACKEND`` says otherwise (``compiled``/``python``/``auto``).
Tests and the ``bench`` CLI verb switch explicitly via :func:`set_backend`.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


class BackendUnavailableError(RuntimeError):
    pass


def _resolve(name):
    if name == "auto":
        name = "compiled" if _compiled is not None else "python"
    if name not in _BACKENDS:
        raise BackendUnavailableError(
            f"kernel backend {name!r} is not available (have: {sorted(_BACKENDS)})"
        )
    return _BACKENDS[name]


_active = _resolve(os.environ.get("BXL1_BACKEND", "auto"))


def set_backend(name):
    """Select 'compiled', 'python' or 'auto'. Returns the previous name."""
    global _active
    prev = _active.NAME
    _active = _resolve(name)
    return prev


def backend_name():
    return _active.NAME


def available_backends():
    return sorted(_BACKENDS)


def get():
    """The active kernel module."""
    return _active
