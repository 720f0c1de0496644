"""Backend selection for the hot kernels.

The compiled extension is used when it imports; otherwise the numpy versions
take over. Setting ``DOSEMERGE_PURE_PYTHON=1`` forces the numpy backend.
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on the build
    _compiled = None

COMPILED_AVAILABLE = _compiled is not None
_FORCE_PY = os.environ.get("DOSEMERGE_PURE_PYTHON", "") in ("1", "true", "yes")

if COMPILED_AVAILABLE and not _FORCE_PY:
    _impl, BACKEND = _compiled, "compiled"
else:
    _impl, BACKEND = _kernels_py, "python"

def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def conc_sq_resid(ka, cl, v, subj, dose, t, y_log, n_subj, backend=None):
    """Per-subject sum of squared log-concentration residuals."""
    impl = _pick(backend)
    return impl.conc_sq_resid(float(ka), _f64(cl), _f64(v),
                              np.ascontiguousarray(subj, dtype=np.int64),
                              _f64(dose), _f64(t), _f64(y_log), int(n_subj))


def inhib_sq_resid(ka, cl, v, ic50, ke, i_max, subj, dose, t, y_logit, n_subj, backend=None):
    """Per-subject sum of squared logit biomarker residuals."""
    impl = _pick(backend)
    return impl.inhib_sq_resid(float(ka), _f64(cl), _f64(v), _f64(ic50), _f64(ke),
                               float(i_max), np.ascontiguousarray(subj, dtype=np.int64),
                               _f64(dose), _f64(t), _f64(y_logit), int(n_subj))


def peak_unit_effect(ka, cl, v, ke, horizon, n_scan=32, iterations=40, backend=None):
    """Peak over ``[0, horizon]`` of the unit-dose effect concentration."""
    return _pick(backend).peak_unit_effect(ka, cl, v, ke, float(horizon),
                                           n_scan=n_scan, iterations=iterations)


def _pick(backend):
    if backend is None:
        return _impl
    if backend == "python":
        return _kernels_py
    if backend == "compiled":
        if not COMPILED_AVAILABLE:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {backend!r}")
