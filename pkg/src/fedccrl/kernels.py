"""AugMix kernel backend, chosen at import.

The compiled ``_kernels`` extension is used when it was built; otherwise the
numpy implementation in ``_kernels_py``.  Set ``FEDCCRL_PURE_PYTHON=1`` to
force the fallback.
"""
import importlib
import os

from ._kernels_py import (  # noqa: F401
    AUTOCONTRAST,
    EQUALIZE,
    IDENTITY,
    POSTERIZE,
    ROTATE,
    SHEAR_X,
    SHEAR_Y,
    SOLARIZE,
    TRANSLATE_X,
    TRANSLATE_Y,
)

OP_NAMES = (
    "autocontrast",
    "equalize",
    "posterize",
    "solarize",
    "rotate",
    "shear_x",
    "shear_y",
    "translate_x",
    "translate_y",
)
NUM_BASE_OPS = len(OP_NAMES)


def load_backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "cython":
        return importlib.import_module("fedccrl._kernels")
    if name == "python":
        return importlib.import_module("fedccrl._kernels_py")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends() -> list[str]:
    out = ["python"]
    try:
        load_backend("cython")
        out.insert(0, "cython")
    except ImportError:
        pass
    return out


if os.environ.get("FEDCCRL_PURE_PYTHON"):
    _impl = load_backend("python")
    BACKEND = "python"
else:
    try:
        _impl = load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        _impl = load_backend("python")
        BACKEND = "python"

apply_op = _impl.apply_op
augmix_batch = _impl.augmix_batch
