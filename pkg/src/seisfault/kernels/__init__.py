"""Kernel backend selection.

The compiled Cython extension is used when importable, otherwise the numpy
implementation. `SEISFAULT_KERNELS=numpy|cython` forces a backend (the test
suite and the kernel benchmark use this to compare the two).
"""

import os

from . import numpy_backend

try:
    from . import _convkernels as _compiled
except ImportError:
    _compiled = None

_BACKENDS = {"numpy": numpy_backend}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_forced = os.environ.get("SEISFAULT_KERNELS", "").strip().lower()
if _forced:
    if _forced not in _BACKENDS:
        raise ImportError(
            f"SEISFAULT_KERNELS={_forced!r} requested but only {sorted(_BACKENDS)} available"
        )
    _active = _BACKENDS[_forced]
else:
    _active = _compiled if _compiled is not None else numpy_backend


def active_backend():
    """Name of the backend the autodiff ops are running on."""
    return "cython" if _active is _compiled else "numpy"


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    return _BACKENDS[name]


conv2d_forward = _active.conv2d_forward
conv_transpose2d_forward = _active.conv_transpose2d_forward
conv2d_weight_grad = _active.conv2d_weight_grad
