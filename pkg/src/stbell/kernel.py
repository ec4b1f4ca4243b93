"""Backend selection for the batched round kernel.

The compiled extension is used when importable; otherwise the numpy
implementation takes over.  Set ``STBELL_KERNEL=python`` to force the
fallback.
"""
import os

from . import _kernel_py

BACKENDS = {"python": _kernel_py.simulate_batch}

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None
else:
    BACKENDS["cython"] = _kernel_c.simulate_batch

_requested = os.environ.get("STBELL_KERNEL", "").strip().lower()
if _requested and _requested not in ("python", "cython"):
    raise ImportError(f"STBELL_KERNEL must be 'python' or 'cython', got {_requested!r}")
if _requested == "cython" and _kernel_c is None:
    raise ImportError("STBELL_KERNEL=cython but the compiled extension stbell._kernel is not built")

BACKEND = _requested or ("cython" if _kernel_c is not None else "python")
simulate_batch = BACKENDS[BACKEND]


def get_backend(name=None):
    """Kernel function for ``name`` (defaults to the active backend)."""
    name = BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None
