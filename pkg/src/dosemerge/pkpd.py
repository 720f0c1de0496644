"""Closed-form PK/PD models and dose-target solvers.

One-compartment model with first-order absorption, its AUC, the lognormal
toxicity probability and its analytic inverse (the MTD), an effect
compartment driving an Imax inhibition model, and a Monte Carlo MED.

All structural functions broadcast over numpy arrays and are written so that
complex-valued parameters propagate analytically (complex-step derivatives).
Branch decisions therefore look at real parts only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistributionError, DomainError, NoSolutionError
from .stats import std_normal_cdf, std_normal_quantile

# Relative gap below which two rate constants are treated as coincident.
RATE_TOL = 1e-8
# Relative spread below which all three effect-chain rates use the Taylor form.
TRIPLE_RATE_TOL = 1e-5

DEFAULT_HORIZON_H = 48.0
DEFAULT_SCAN_POINTS = 64
MED_BRACKET_MG = (1e-2, 1e6)
MED_POINTS_PER_DECADE = 32


@dataclass(frozen=True)
class PkParams:
    """Individual one-compartment parameters: ka (1/h), CL (L/h), V (L)."""

    ka: float
    cl: float
    v: float

    def __post_init__(self):
        if not (self.ka > 0 and self.cl > 0 and self.v > 0):
            raise DomainError("ka, CL and V must be strictly positive")

    @property
    def k(self) -> float:
        return self.cl / self.v


@dataclass(frozen=True)
class PdParams:
    """Individual Imax-model parameters with an effect compartment."""

    i_max: float
    ic50: float
    ke: float

    def __post_init__(self):
        if not 0 < self.i_max <= 1:
            raise DomainError("i_max must lie in (0, 1]")
        if not (self.ic50 > 0 and self.ke > 0):
            raise DomainError("ic50 and ke must be strictly positive")


@dataclass(frozen=True)
class ToxicitySpec:
    """AUC threshold, toxicity-probability target and the AUC scaling alpha."""

    tau_t: float = 22.6
    p_t: float = 0.2
    mu_alpha: float = 1.0
    omega_alpha: float = 0.0

    def __post_init__(self):
        if not self.tau_t > 0:
            raise DomainError("tau_t must be positive")
        if not 0 < self.p_t < 1:
            raise DomainError("p_t must lie in (0, 1)")
        if not self.mu_alpha > 0:
            raise DomainError("mu_alpha must be positive")
        if self.omega_alpha < 0:
            raise DomainError("omega_alpha must be non-negative")


@dataclass(frozen=True)
class EfficacySpec:
    """Response threshold tau_e reached by more than a fraction p_e of subjects."""

    tau_e: float = 0.5
    p_e: float = 0.65

    def __post_init__(self):
        if not (0 < self.tau_e < 1 and 0 < self.p_e < 1):
            raise DomainError("tau_e and p_e must lie in (0, 1)")


@dataclass(frozen=True)
class PopulationPkPd:
    """Population (median, log-SD) parameters of the PK/PD model."""

    ka: float
    mu_cl: float
    mu_v: float
    omega_cl: float
    omega_v: float
    mu_ic50: float
    mu_ke: float
    omega_ic50: float
    omega_ke: float
    i_max: float = 1.0

    def individuals(self, normals: np.ndarray):
        """Individual (CL, V, IC50, ke) from an ``(n, 4)`` standard-normal matrix."""
        z = np.asarray(normals, dtype=float)
        cl = self.mu_cl * np.exp(self.omega_cl * z[:, 0])
        v = self.mu_v * np.exp(self.omega_v * z[:, 1])
        ic50 = self.mu_ic50 * np.exp(self.omega_ic50 * z[:, 2])
        ke = self.mu_ke * np.exp(self.omega_ke * z[:, 3])
        return cl, v, ic50, ke


# ---------------------------------------------------------------------------
# divided differences of r -> exp(-r t)


def exp_diff(a, b, t):
    """``(exp(-a t) - exp(-b t)) / (b - a)``, symmetric in ``a, b``.

    Evaluated as ``exp(-s t) * (-expm1(-(l - s) t)) / (l - s)`` with ``s`` the
    smaller rate so nothing overflows, and as the limit ``t exp(-a t)`` when
    the rates coincide to relative precision ``RATE_TOL``.
    """
    a, b, t = np.broadcast_arrays(*(np.asarray(x) for x in (a, b, t)))
    swap = a.real > b.real
    s = np.where(swap, b, a)
    big = np.where(swap, a, b)
    gap = big - s
    close = gap.real < RATE_TOL * big.real
    safe_gap = np.where(close, 1.0, gap)
    generic = np.exp(-s * t) * (-np.expm1(-gap * t)) / safe_gap
    limit = t * np.exp(-0.5 * (s + big) * t)
    out = np.where(close, limit, generic)
    return out[()] if out.ndim == 0 else out


def exp_dd3(a, b, c, t):
    """Second divided difference of ``r -> exp(-r t)`` at nodes ``a, b, c``.

    Equals ``sum_i exp(-r_i t) / prod_{j != i} (r_j - r_i)`` and is always
    positive. Nodes are sorted so the outer denominator is the widest gap;
    when all three nodes are within ``TRIPLE_RATE_TOL`` a Taylor expansion
    about their mean replaces the difference quotient.
    """
    a, b, c, t = np.broadcast_arrays(*(np.asarray(x) for x in (a, b, c, t)))
    # three-element sorting network on real parts
    a, b = _sorted_pair(a, b)
    b, c = _sorted_pair(b, c)
    a, b = _sorted_pair(a, b)
    spread = c - a
    close = spread.real < TRIPLE_RATE_TOL * c.real
    safe = np.where(close, 1.0, spread)
    generic = (exp_diff(a, b, t) - exp_diff(b, c, t)) / safe

    centre = (a + b + c) / 3.0
    da, db, dc = a - centre, b - centre, c - centre
    h2 = da * da + db * db + dc * dc + da * db + da * dc + db * dc
    h3 = (da ** 3 + db ** 3 + dc ** 3 + da * da * (db + dc) + db * db * (da + dc)
          + dc * dc * (da + db) + da * db * dc)
    t2 = t * t
    taylor = np.exp(-centre * t) * (0.5 * t2 + t2 * t2 * h2 / 24.0 - t2 * t2 * t * h3 / 120.0)
    out = np.where(close, taylor, generic)
    return out[()] if out.ndim == 0 else out


def _sorted_pair(x, y):
    swap = x.real > y.real
    return np.where(swap, y, x), np.where(swap, x, y)


# ---------------------------------------------------------------------------
# structural models


def conc_model(t, dose, ka, cl, v):
    """Array form of the one-compartment concentration (mg/L)."""
    return dose * ka / v * exp_diff(cl / v, ka, t)


def effect_conc_model(t, dose, ka, cl, v, ke):
    """Array form of the effect-compartment concentration (mg/L)."""
    return dose * ka * ke / v * exp_dd3(ka, cl / v, ke, t)


def concentration(t, dose, p: PkParams):
    """Plasma concentration ``t`` hours after a single oral ``dose`` (mg)."""
    if np.any(np.asarray(t) < 0):
        raise DomainError("time must be non-negative")
    if np.any(np.asarray(dose) < 0):
        raise DomainError("dose must be non-negative")
    return conc_model(t, dose, p.ka, p.cl, p.v)


def effect_concentration(t, dose, p: PkParams, ke: float):
    """Effect-compartment concentration, ``dCe/dt = ke (C - Ce)``, ``Ce(0) = 0``."""
    if np.any(np.asarray(t) < 0):
        raise DomainError("time must be non-negative")
    if not ke > 0:
        raise DomainError("ke must be positive")
    return effect_conc_model(t, dose, p.ka, p.cl, p.v, ke)


def auc(dose, cl):
    """Area under the concentration curve, ``dose / CL``."""
    if np.any(np.asarray(cl) <= 0):
        raise DomainError("clearance must be positive")
    out = np.asarray(dose, dtype=float) / np.asarray(cl, dtype=float)
    return out[()] if out.ndim == 0 else out


def response(t, dose, p: PkParams, q: PdParams):
    """Fractional inhibition ``Imax Ce / (Ce + IC50)`` in ``[0, Imax)``."""
    ce = effect_concentration(t, dose, p, q.ke)
    return q.i_max * ce / (ce + q.ic50)


def biomarker_level(t, dose, p: PkParams, q: PdParams):
    """Remaining biomarker fraction ``1 - response``, the observed PD outcome."""
    return 1.0 - response(t, dose, p, q)


def logit_biomarker(ce, ic50, i_max):
    """``logit(1 - Imax Ce/(Ce + IC50))`` without cancellation."""
    return np.log(ce * (1.0 - i_max) + ic50) - np.log(i_max * ce)


# ---------------------------------------------------------------------------
# toxicity


def _tox_scale(omega_cl, spec: ToxicitySpec):
    scale = np.sqrt(np.asarray(omega_cl, dtype=float) ** 2 + spec.omega_alpha ** 2)
    if np.any(scale == 0):
        raise DegenerateDistributionError(
            "omega_cl and omega_alpha are both zero: toxicity is a step function")
    return scale


def prob_toxicity(dose, mu_cl, omega_cl, spec: ToxicitySpec):
    """Probability that ``alpha * AUC`` exceeds ``tau_t`` at ``dose``."""
    if np.any(np.asarray(dose) <= 0):
        raise DomainError("dose must be positive")
    scale = _tox_scale(omega_cl, spec)
    z = (np.log(dose) + np.log(spec.mu_alpha) - np.log(spec.tau_t) - np.log(mu_cl)) / scale
    return std_normal_cdf(z)


def mtd_analytic(mu_cl, omega_cl, spec: ToxicitySpec):
    """Dose whose toxicity probability equals ``spec.p_t``."""
    scale = _tox_scale(omega_cl, spec)
    log_d = (np.log(spec.tau_t) + np.log(mu_cl) - np.log(spec.mu_alpha)
             + std_normal_quantile(spec.p_t) * scale)
    return np.exp(log_d)


# ---------------------------------------------------------------------------
# efficacy

_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, iterations=64):
    """Maximise a unimodal vectorised ``f`` on ``[lo, hi]`` elementwise.

    Returns ``(argmax, max)`` arrays.
    """
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iterations):
        left = fc > fd
        # maximum lies in [a, d] where fc > fd, else in [c, b]
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        x = np.where(left, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
        fx = f(x)
        c, d, fc, fd = (np.where(left, x, d), np.where(left, c, x),
                        np.where(left, fx, fd), np.where(left, fc, fx))
    t = 0.5 * (a + b)
    return t, f(t)


def scan_bracket(values: np.ndarray, times: np.ndarray):
    """Bracket around the per-column argmax of ``values`` (scan axis 0)."""
    j = np.argmax(values, axis=0)
    last = times.size - 1
    return times[np.maximum(j - 1, 0)], times[np.minimum(j + 1, last)]


def max_response(dose, p: PkParams, q: PdParams, horizon=DEFAULT_HORIZON_H,
                 n_scan=DEFAULT_SCAN_POINTS):
    """Largest response over ``(0, horizon]``: coarse scan then golden section."""
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    if dose == 0:
        return 0.0
    times = np.linspace(0.0, horizon, n_scan + 1)
    vals = response(times, dose, p, q)
    lo, hi = scan_bracket(vals, times)

    def f(t):
        return response(t, dose, p, q)

    _, best = golden_max(f, lo, hi)
    return float(max(best, vals.max()))


def med_monte_carlo(pop: PopulationPkPd, spec: EfficacySpec, n_subjects=2000,
                    horizon=DEFAULT_HORIZON_H, rng=None, normals=None, rel_tol=1e-3,
                    bracket=MED_BRACKET_MG):
    """Minimum effective dose by simulation.

    Simulates ``n_subjects`` individuals (or uses the supplied ``(n, 4)``
    ``normals`` so that several calls share common random numbers), finds
    each subject's peak effect concentration per unit dose, then searches
    for the smallest dose at which more than ``p_e`` of subjects reach a
    maximum response of at least ``tau_e``: a log-spaced scan brackets the
    crossing and bisection refines it to ``rel_tol``.
    """
    from .kernels import peak_unit_effect

    if normals is None:
        if n_subjects < 1000:
            raise DomainError("need at least 1000 simulated subjects")
        if rng is None:
            raise DomainError("an rng or pre-drawn normals is required")
        normals = rng.standard_normal((n_subjects, 4))
    cl, v, ic50, ke = pop.individuals(normals)
    peak = peak_unit_effect(pop.ka, cl, v, ke, horizon)
    return med_from_peaks(peak, ic50, pop.i_max, spec, rel_tol=rel_tol, bracket=bracket)


def med_from_peaks(peak, ic50, i_max, spec: EfficacySpec, rel_tol=1e-3,
                   bracket=MED_BRACKET_MG):
    """Dose search given per-subject peak effect concentrations at unit dose."""
    peak = np.asarray(peak, dtype=float)
    ic50 = np.asarray(ic50, dtype=float)

    def effective_fraction(d):
        ce = d * peak
        return np.mean(i_max * ce / (ce + ic50) >= spec.tau_e)

    lo_b, hi_b = bracket
    decades = np.log10(hi_b) - np.log10(lo_b)
    doses = np.logspace(np.log10(lo_b), np.log10(hi_b),
                        int(round(decades * MED_POINTS_PER_DECADE)) + 1)
    # the effective fraction is nondecreasing in dose: binary search the scan
    if not effective_fraction(doses[-1]) > spec.p_e:
        raise NoSolutionError(
            f"no dose in [{lo_b:g}, {hi_b:g}] mg makes more than {spec.p_e:g} "
            f"of subjects reach response {spec.tau_e:g}")
    lo_i, hit = -1, doses.size - 1
    while hit - lo_i > 1:
        mid_i = (lo_i + hit) // 2
        if effective_fraction(doses[mid_i]) > spec.p_e:
            hit = mid_i
        else:
            lo_i = mid_i
    if hit == 0:
        return float(doses[0])
    lo, hi = doses[hit - 1], doses[hit]
    while hi / lo - 1.0 > rel_tol:
        mid = np.sqrt(lo * hi)
        if effective_fraction(mid) > spec.p_e:
            hi = mid
        else:
            lo = mid
    return float(hi)
