"""Backend selection for the hot pointwise kernel.

The compiled extension is used when it imports; ``TGF_CDA_PURE_PYTHON=1``
forces the numpy fallback. Backends return column sums of |E|^4 accumulated
row by row in a fixed order; the final reduction happens here, so both give
bit-identical results.
"""

import os

import numpy as np

from . import _kernels_py

_BACKENDS = {"python": _kernels_py.assemble_pointwise}

try:
    from . import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None
else:
    _BACKENDS["cython"] = _kernels_c.assemble_pointwise

if _kernels_c is not None and os.environ.get("TGF_CDA_PURE_PYTHON", "") in ("", "0"):
    _active = "cython"
else:
    _active = "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def use_backend(name):
    """Switch the active backend; returns the previous one."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    prev, _active = _active, name
    return prev


def assemble(g, alpha, beta):
    g = np.ascontiguousarray(g, dtype=float)
    adv, s, q, vmax2 = _BACKENDS[_active](g, float(alpha), float(beta))
    e4 = np.sum(q.reshape(q.shape[0], -1), axis=1)
    return adv, s, e4, vmax2
