"""Selects the training-kernel implementation at import time.

The compiled extension (``bndl._ckern``) is preferred when it built;
otherwise the numpy implementation is used.  ``BNDL_KERNELS`` overrides
the choice: ``compiled``/``c`` forces the extension (import error if it
is missing), ``python``/``py`` forces the fallback.
"""

import os

from .errors import ConfigError
from . import _pykern

_requested = os.environ.get("BNDL_KERNELS", "auto").lower()

if _requested in ("python", "py"):
    _impl = _pykern
elif _requested in ("compiled", "c"):
    from . import _ckern as _impl
elif _requested == "auto":
    try:
        from . import _ckern as _impl
    except ImportError:
        _impl = _pykern
else:
    raise ConfigError(
        f"BNDL_KERNELS must be 'auto', 'compiled', or 'python', got {_requested!r}"
    )

BACKEND = _impl.BACKEND_NAME
elbo_batch_kernel = _impl.elbo_batch_kernel


def available_backends():
    """Names of the kernel implementations importable in this build."""
    names = ["python"]
    try:
        from . import _ckern  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_kernel(name):
    """Fetch a specific backend's kernel (used by tests and benchmarks)."""
    if name in ("python", "py"):
        return _pykern.elbo_batch_kernel
    if name in ("compiled", "c"):
        from . import _ckern
        return _ckern.elbo_batch_kernel
    raise ConfigError(f"unknown kernel backend {name!r}")
