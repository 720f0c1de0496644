"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled versions are tested against. Signatures match ``_kernels.pyx``.
"""

import numpy as np

from .pkpd import conc_model, effect_conc_model, golden_max, logit_biomarker, scan_bracket


def conc_sq_resid(ka, cl, v, subj, dose, t, y_log, n_subj):
    """Per-subject sum of squared log-concentration residuals.

    ``cl`` and ``v`` hold one value per subject; ``subj`` maps each
    observation to its subject. A vanishing prediction yields ``inf``.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        pred = np.log(conc_model(t, dose, ka, cl[subj], v[subj]))
        r = y_log - pred
    r2 = np.where(np.isfinite(r), r * r, np.inf)
    return np.bincount(subj, weights=r2, minlength=n_subj)


def inhib_sq_resid(ka, cl, v, ic50, ke, i_max, subj, dose, t, y_logit, n_subj):
    """Per-subject sum of squared logit residuals of the biomarker level."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        ce = effect_conc_model(t, dose, ka, cl[subj], v[subj], ke[subj])
        r = y_logit - logit_biomarker(ce, ic50[subj], i_max)
    r2 = np.where(np.isfinite(r), r * r, np.inf)
    return np.bincount(subj, weights=r2, minlength=n_subj)


def peak_unit_effect(ka, cl, v, ke, horizon, n_scan=32, iterations=40):
    """Maximum over ``[0, horizon]`` of the unit-dose effect concentration.

    Coarse uniform scan, then golden-section refinement inside the bracket
    around the best scan point (the curve is unimodal).
    """
    ka, cl, v, ke = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (ka, cl, v, ke)))
    shape = ka.shape
    ka, cl, v, ke = (x.ravel() for x in (ka, cl, v, ke))
    times = np.linspace(0.0, horizon, n_scan + 1)
    scan = effect_conc_model(times[:, None], 1.0, ka, cl, v, ke)
    lo, hi = scan_bracket(scan, times)

    def f(tt):
        return effect_conc_model(tt, 1.0, ka, cl, v, ke)

    _, best = golden_max(f, lo, hi, iterations=iterations)
    return np.maximum(best, scan.max(axis=0)).reshape(shape)
