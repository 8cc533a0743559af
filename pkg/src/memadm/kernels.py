"""Backend selection for the level-crossing kernel.

The compiled ``_adm`` extension is used when it was built; otherwise, or when
``MEMADM_PURE_PYTHON=1`` is set, the pure-Python walk is used. Both produce
identical event lists.
"""
import os

import numpy as np

from . import _adm_py
from ._adm_py import NO_EVENT_NS

BACKEND = "python"
_compiled = None
if os.environ.get("MEMADM_PURE_PYTHON") != "1":
    try:
        from . import _adm as _compiled

        BACKEND = "cython"
    except ImportError:  # extension not built
        _compiled = None
HAVE_EXTENSION = _compiled is not None

__all__ = ["BACKEND", "HAVE_EXTENSION", "NO_EVENT_NS", "adm_walk", "get_walker"]


def get_walker(backend=None):
    """Return the raw walk function for ``backend`` ('cython', 'python' or None for default)."""
    if backend is None:
        backend = BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled.adm_walk
    if backend == "python":
        return _adm_py.adm_walk
    raise ValueError(f"unknown backend {backend!r}")


def adm_walk(
    x,
    delta,
    *,
    t0,
    dt,
    i0=0,
    gain=1.0,
    dead_time=0.0,
    v_track,
    t_resume=-np.inf,
    last_ns=NO_EVENT_NS,
    backend=None,
):
    """Validated entry point to the crossing walk.

    ``x`` holds ``n + 1`` samples and ``delta`` the ``n`` per-segment node
    thresholds. See ``_adm_py.adm_walk`` for the semantics.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    if x.ndim != 1 or delta.ndim != 1:
        raise ValueError("x and delta must be one-dimensional")
    if len(x) != len(delta) + 1:
        raise ValueError(f"x must have len(delta) + 1 samples, got {len(x)} and {len(delta)}")
    if len(delta) and not np.all(delta > 0.0):
        raise ValueError("thresholds must be strictly positive")
    if not (gain > 0.0):
        raise ValueError("divider gain must be positive")
    if dead_time < 0.0:
        raise ValueError("dead time must be non-negative")
    walk = get_walker(backend)
    return walk(
        x, delta, float(t0), float(dt), int(i0), float(gain), float(dead_time),
        float(v_track), float(t_resume), int(last_ns),
    )
