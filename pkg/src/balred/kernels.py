"""Solver kernels: compiled extension when available, numpy otherwise.

Set ``BALRED_PURE_PYTHON=1`` to force the numpy implementations.
"""
import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("BALRED_PURE_PYTHON", "").strip().lower() in ("", "0", "false", "no"):
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py


def rusanov_divergence(uL, uR, fL, fR, sL, sR, inv_h):
    c = np.ascontiguousarray
    return _impl.rusanov_divergence(c(uL, dtype=float), c(uR, dtype=float), c(fL, dtype=float),
                                    c(fR, dtype=float), c(sL, dtype=float), c(sR, dtype=float),
                                    float(inv_h))


def spectral_radius(J, iters=20):
    return _impl.spectral_radius(np.ascontiguousarray(J, dtype=float), int(iters))
