"""Backend selection for the numeric kernels.

Two interchangeable implementations exist: `_numba_impl` (JIT-compiled,
nogil, the default) and `_numpy_impl` (pure numpy, always available).  The
environment variable GLMMVB_BACKEND picks one at import time:

    GLMMVB_BACKEND=numpy   force the pure-numpy kernels
    GLMMVB_BACKEND=numba   require numba (import error if unavailable)
    unset                  numba when importable, numpy otherwise

Each backend is deterministic given identical inputs; outputs agree across
backends to floating-point reduction-order differences (see the kernel
equivalence tests), not bit-for-bit.
"""

from __future__ import annotations

import os
import warnings

from . import _numpy_impl as numpy_impl

_requested = os.environ.get("GLMMVB_BACKEND", "").strip().lower()

numba_impl = None
if _requested != "numpy":
    try:
        from . import _numba_impl as numba_impl
    except ImportError as exc:  # pragma: no cover - depends on environment
        if _requested == "numba":
            raise
        warnings.warn(
            "numba unavailable (%s); falling back to the numpy kernels" % exc)

if _requested not in ("", "numpy", "numba"):
    raise ValueError(
        "GLMMVB_BACKEND must be 'numpy' or 'numba', got %r" % _requested)

active = numba_impl if numba_impl is not None else numpy_impl
BACKEND = "numba" if active is numba_impl else "numpy"

STATUS_OK = numpy_impl.STATUS_OK
STATUS_BAD_BLOCK = numpy_impl.STATUS_BAD_BLOCK
STATUS_BAD_CORNER = numpy_impl.STATUS_BAD_CORNER
STATUS_NEWTON_FAIL = numpy_impl.STATUS_NEWTON_FAIL
BERNOULLI = numpy_impl.BERNOULLI
POISSON = numpy_impl.POISSON
