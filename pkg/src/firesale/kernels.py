"""Backend selection for the cascade round kernels.

The compiled module is used when it imports; setting ``FIRESALE_BACKEND=python``
forces the numpy fallback. ``BACKEND`` names the active choice.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_requested = os.environ.get("FIRESALE_BACKEND", "auto").lower()

if _requested == "python" or _ckernels is None:
    _active = _pykernels
    BACKEND = "python"
else:
    _active = _ckernels
    BACKEND = "cython"

exposure = _active.exposure
sold_totals = _active.sold_totals
aux_fractions = _active.aux_fractions
real_round = _active.real_round
evaluate_sales = _active.evaluate_sales


def get_backend(name):
    """Return the kernel module for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _pykernels
    if name == "cython":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def available_backends():
    return ["python"] + (["cython"] if _ckernels is not None else [])
