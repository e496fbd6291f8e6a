"""Backend selection for the state-space kernels.

The compiled extension is used when it imports; otherwise the pure-Python
module is. Setting ``SPEEDBIAS_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

import numpy as np

from . import _ssm_py
from ._ssm_py import stationary_cov, transition  # noqa: F401  (re-exported)

_compiled: ModuleType | None
try:
    from . import _ssm_ext as _compiled
except ImportError:  # extension not built
    _compiled = None

HAVE_COMPILED = _compiled is not None


def get_backend(name: str | None = None) -> ModuleType:
    """Return the kernel module: ``"compiled"``, ``"python"`` or default selection."""
    if name is None:
        forced = os.environ.get("SPEEDBIAS_PURE_PYTHON", "").strip() not in ("", "0")
        name = "python" if forced or _compiled is None else "compiled"
    if name == "python":
        return _ssm_py
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled state-space extension is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


_default = get_backend()
BACKEND = "compiled" if _default is _compiled else "python"


def _c(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=float)


def loglik_terms(t, y, lam, eta, backend=None):
    return get_backend(backend).loglik_terms(_c(t), _c(y), float(lam), float(eta))


def innovations(t, y, lam, eta, backend=None):
    return get_backend(backend).innovations(_c(t), _c(y), float(lam), float(eta))


def smooth(t, y, observed, lam, eta, backend=None):
    obs = np.ascontiguousarray(observed, dtype=np.uint8)
    return get_backend(backend).smooth(_c(t), _c(y), obs, float(lam), float(eta))


def simulate(t, lam, z, backend=None):
    return get_backend(backend).simulate(_c(t), float(lam), _c(z))
