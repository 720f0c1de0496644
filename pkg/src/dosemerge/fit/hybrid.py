"""Optimisation-based estimator with normal-approximation (PSA) draws.

The population parameters are estimated by maximising a Laplace
approximation of the marginal posterior on the log scale: for each trial
value the individual log-parameters are profiled out subject by subject
with damped Gauss-Newton steps, and each subject contributes its mode value
plus the usual ``log det`` curvature correction. The mode and the inverse
of the finite-difference Hessian then define a normal distribution from
which ``L`` parameter sets are drawn.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ..errors import OptimizationError
from ..pkpd import conc_model, effect_conc_model, logit_biomarker
from .draws import PosteriorDraws
from .model import FitData, ModelSpec, prepare_data
from .priors import HalfTPrior, LogNormalPrior, PriorSpec

_LOG_2PI = np.log(2.0 * np.pi)
_BOUND = (-15.0, 10.0)
_PENALTY = 1e12


@dataclass(frozen=True)
class HybridConfig:
    n_draws: int = 1000
    restarts: int = 3
    seed: int | None = 0
    hessian_step: float = 1e-3
    max_inner: int = 300


@dataclass(frozen=True)
class HybridFit:
    """Mode, log-scale covariance and PSA draws of the population parameters."""

    names: tuple
    mode: dict
    cov: np.ndarray
    draws: PosteriorDraws
    objective: float


def flat_priors(base: PriorSpec | None = None, sdlog: float = 10.0, scale: float = 10.0) -> PriorSpec:
    """Very wide priors acting only as a numerical regulariser.

    Centres of ``base`` are kept when given, so sequential information can
    still locate the optimiser's starting point.
    """
    from .priors import default_priors

    base = default_priors() if base is None else base
    out = PriorSpec()
    for name, prior in base.items():
        if isinstance(prior, LogNormalPrior):
            out[name] = LogNormalPrior(prior.meanlog, sdlog)
        else:
            out[name] = HalfTPrior(prior.df, scale)
    return out


def laplace_mode(objective, x0s, hessian_step=1e-3, bounds=None):
    """Maximise ``objective`` from several starts; return mode, covariance, value.

    The covariance is the inverse of the negated central-difference Hessian,
    with diagonal jitter when it is not positive definite.
    """
    def neg(x):
        # a finite penalty lets the line search backtrack out of bad regions
        val = objective(x)
        return -val if np.isfinite(val) else _PENALTY

    def neg_grad(x):
        g = central_gradient(objective, x)
        return np.where(np.isfinite(g), -g, 0.0)

    best = None
    for x0 in x0s:
        res = optimize.minimize(neg, np.asarray(x0, dtype=float), jac=neg_grad,
                                method="L-BFGS-B", bounds=bounds,
                                options={"maxiter": 1000, "ftol": 1e-12, "gtol": 1e-6})
        if res.fun < _PENALTY and (best is None or res.fun < best.fun):
            best = res
    if best is None:
        raise OptimizationError("no start produced a finite objective")
    x = best.x
    h = hessian(objective, x, hessian_step)
    return x, _covariance(-h), -float(best.fun)


def central_gradient(f, x, step=1e-5):
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=float)
    g = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros(x.size)
        e[i] = step
        g[i] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def hessian(f, x, step):
    """Central finite-difference Hessian."""
    x = np.asarray(x, dtype=float)
    d = x.size
    hs = step * np.maximum(1.0, np.abs(x))
    f0 = f(x)
    out = np.empty((d, d))
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = hs[i]
        out[i, i] = (f(x + ei) - 2 * f0 + f(x - ei)) / hs[i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = hs[j]
            val = (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * hs[i] * hs[j])
            out[i, j] = out[j, i] = val
    return out


def _covariance(precision):
    p = 0.5 * (precision + precision.T)
    if not np.all(np.isfinite(p)):
        raise OptimizationError("curvature matrix is not finite")
    scale = max(float(np.max(np.abs(np.diag(p)))), 1e-300)
    jitter = 0.0
    for _ in range(8):
        try:
            chol = np.linalg.cholesky(p + jitter * np.eye(p.shape[0]))
            inv_chol = np.linalg.inv(chol)
            return inv_chol.T @ inv_chol
        except np.linalg.LinAlgError:
            jitter = scale * 1e-8 if jitter == 0 else jitter * 100
    raise OptimizationError("curvature matrix is not positive definite after jitter")


class _LaplaceObjective:
    """Approximate log marginal posterior of the log population parameters."""

    def __init__(self, model: ModelSpec, priors: PriorSpec, fd: FitData, max_inner=300):
        self.model, self.priors, self.fd = model, priors, fd
        self.names = model.sampled()
        self.re = model.random_effects
        self.max_inner = max_inner
        self._theta = None

    def _logpop(self, x):
        lp = {n: x[i] for i, n in enumerate(self.names)}
        for n, v in self.model.fixed.items():
            lp[n] = np.log(v)
        return lp

    def _residuals(self, lp, theta):
        """Scaled residuals per observation and per random effect."""
        fd, model = self.fd, self.model
        ind = {}
        for p in model.individual_params:
            ind[p] = np.exp(theta[p]) if p in self.re else np.exp(lp[f"mu_{p}"]) + 0 * theta[self.re[0]]
        ka = np.exp(lp["ka"])
        with np.errstate(all="ignore"):
            rc = (fd.c_y - np.log(conc_model(fd.c_t, fd.c_dose, ka, ind["cl"][fd.c_subj],
                                             ind["v"][fd.c_subj]))) / np.exp(lp["sigma_c"])
            ri = None
            if model.has_pd:
                ce = effect_conc_model(fd.i_t, fd.i_dose, ka, ind["cl"][fd.i_subj],
                                       ind["v"][fd.i_subj], ind["ke"][fd.i_subj])
                ri = (fd.i_y - logit_biomarker(ce, ind["ic50"][fd.i_subj], model.i_max)) \
                    / np.exp(lp["sigma_i"])
        reff = [(theta[p] - lp[f"mu_{p}"]) / np.exp(lp[f"omega_{p}"]) for p in self.re]
        return rc, ri, reff

    def _subject_sq(self, rc, ri, reff):
        fd = self.fd
        s = np.bincount(fd.c_subj, weights=np.real(rc * rc), minlength=fd.n_subj)
        if ri is not None:
            s = s + np.bincount(fd.i_subj, weights=np.real(ri * ri), minlength=fd.n_subj)
        for r in reff:
            s = s + np.real(r * r)
        return s

    def _inner(self, lp):
        """Per-subject modes of the individual log-parameters (vectorised LM)."""
        fd, re = self.fd, self.re
        d, n = len(re), fd.n_subj
        # Warm start from the last solution. The inner problem is solved to
        # tight tolerance, so the objective does not depend on the start.
        if self._theta is None:
            theta = {p: np.full(n, float(lp[f"mu_{p}"])) for p in re}
        else:
            theta = {p: v.copy() for p, v in self._theta.items()}
        rc, ri, reff = self._residuals(lp, theta)
        sq = self._subject_sq(rc, ri, reff)
        if not np.all(np.isfinite(sq)):
            theta = {p: np.full(n, float(lp[f"mu_{p}"])) for p in re}
            rc, ri, reff = self._residuals(lp, theta)
            sq = self._subject_sq(rc, ri, reff)
        lam = np.full(n, 1e-6)
        h = 1e-20
        jtj = np.zeros((n, d, d))
        for _ in range(self.max_inner):
            jac_c, jac_i, jac_r = [], [], []
            for p in re:
                tc = {q: v.astype(complex) for q, v in theta.items()}
                tc[p] = tc[p] + 1j * h
                c_, i_, r_ = self._residuals(lp, tc)
                jac_c.append(np.imag(c_) / h)
                jac_i.append(None if i_ is None else np.imag(i_) / h)
                jac_r.append([np.imag(r) / h for r in r_])
            jtj = np.zeros((n, d, d))
            jtr = np.zeros((n, d))
            for a in range(d):
                jtr[:, a] = np.bincount(fd.c_subj, weights=jac_c[a] * rc, minlength=n)
                if ri is not None:
                    jtr[:, a] += np.bincount(fd.i_subj, weights=jac_i[a] * ri, minlength=n)
                jtr[:, a] += sum(jr * r for jr, r in zip(jac_r[a], reff))
                for b in range(a + 1):
                    v = np.bincount(fd.c_subj, weights=jac_c[a] * jac_c[b], minlength=n)
                    if ri is not None:
                        v = v + np.bincount(fd.i_subj, weights=jac_i[a] * jac_i[b], minlength=n)
                    v = v + sum(x * y for x, y in zip(jac_r[a], jac_r[b]))
                    jtj[:, a, b] = jtj[:, b, a] = v
            damped = jtj + lam[:, None, None] * np.eye(d)[None] * np.maximum(
                np.diagonal(jtj, axis1=1, axis2=2)[:, :, None], 1e-12)
            try:
                step = -np.linalg.solve(damped, jtr[:, :, None])[:, :, 0]
            except np.linalg.LinAlgError:
                break
            trial = {p: theta[p] + step[:, k] for k, p in enumerate(re)}
            rc2, ri2, reff2 = self._residuals(lp, trial)
            sq2 = self._subject_sq(rc2, ri2, reff2)
            better = np.isfinite(sq2) & (sq2 <= sq)
            for k, p in enumerate(re):
                theta[p] = np.where(better, trial[p], theta[p])
            sq = np.where(better, sq2, sq)
            lam = np.where(better, lam * 0.3, lam * 10.0)
            rc, ri, reff = self._residuals(lp, theta)
            grad_norm = np.max(np.abs(jtr), axis=1)
            if np.all(grad_norm < 1e-9) or np.all(np.abs(step) < 1e-12):
                break
        if np.all(np.isfinite(sq)):
            self._theta = theta
        return theta, sq, jtj

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        lp = self._logpop(x)
        fd = self.fd
        theta, sq, jtj = self._inner(lp)
        if not np.all(np.isfinite(sq)):
            return -np.inf
        d = len(self.re)
        sign, logdet = np.linalg.slogdet(jtj)
        if np.any(sign <= 0):
            return -np.inf
        total = -0.5 * np.sum(sq)
        total -= fd.n_conc * (lp["sigma_c"] + 0.5 * _LOG_2PI)
        if self.model.has_pd:
            total -= fd.n_inhib * (lp["sigma_i"] + 0.5 * _LOG_2PI)
        for p in self.re:
            total -= fd.n_subj * (lp[f"omega_{p}"] + 0.5 * _LOG_2PI)
        total += fd.n_subj * 0.5 * d * _LOG_2PI - 0.5 * np.sum(logdet)
        for i, n in enumerate(self.names):
            prior = self.priors[n]
            total += float(prior.log_scale_logpdf(x[i]))
        return float(total) if np.isfinite(total) else -np.inf


def _start_value(name, priors):
    """Prior centre for medians; moderate values for SDs, whose wide priors
    have medians far out in the flat tail of the objective."""
    if name.startswith("omega"):
        return np.log(0.5)
    if name.startswith("sigma"):
        return np.log(0.3)
    return float(np.log(priors[name].median()))


def hybrid_fit(model: ModelSpec, priors: PriorSpec, data, config: HybridConfig = HybridConfig(),
               species: str = "") -> HybridFit:
    """Mode of the Laplace-approximated posterior plus ``L`` normal draws."""
    fd = data if isinstance(data, FitData) else prepare_data(data, model)
    priors.require(model.sampled())
    obj = _LaplaceObjective(model, priors, fd, config.max_inner)
    names = obj.names
    rng = np.random.default_rng(config.seed)
    centre = np.array([_start_value(n, priors) for n in names])
    starts = [centre] + [centre + rng.normal(0.0, 0.3, centre.size) for _ in range(config.restarts - 1)]
    x, cov, value = laplace_mode(obj, starts, config.hessian_step, bounds=[_BOUND] * len(names))
    z = rng.multivariate_normal(x, cov, size=config.n_draws, method="cholesky")
    samples = {}
    for col in model.columns():
        if col in names:
            samples[col] = np.exp(z[:, names.index(col)])
        else:
            samples[col] = np.full(config.n_draws, model.fixed[col])
    mode = {n: float(np.exp(x[i])) for i, n in enumerate(names)}
    mode.update(model.fixed)
    draws = PosteriorDraws.from_samples(samples, species=species or getattr(data, "species", ""))
    return HybridFit(tuple(names), mode, cov, draws, value)
