"""Hierarchical PK/PD model: specification, data layout and joint density.

Individual parameters are log-normal around their population medians:
``log CL_i ~ N(log mu_cl, omega_cl)`` and likewise for V, IC50 and ke when
they carry a random effect; otherwise every subject uses the median.
Concentrations are log-normal around the model prediction and the
biomarker level is logit-normal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import kernels
from ..design import Dataset
from ..errors import ConfigError, DomainError, MappingError
from ..pkpd import conc_model, effect_conc_model, logit_biomarker
from .priors import HalfTPrior, LogNormalPrior, PriorSpec

RE_PARAMS = ("cl", "v", "ic50", "ke")
PK_RE = ("cl", "v")
PD_RE = ("ic50", "ke")
POP_ORDER = ("ka", "mu_cl", "mu_v", "omega_cl", "omega_v", "sigma_c",
             "mu_ic50", "mu_ke", "omega_ic50", "omega_ke", "sigma_i")
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ModelSpec:
    """Which outcomes are modelled, which parameters vary between subjects,
    and which population parameters are pinned to known values."""

    outcomes: tuple = ("concentration",)
    random_effects: tuple = PK_RE
    fixed: dict = field(default_factory=dict)
    i_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "random_effects", tuple(self.random_effects))
        object.__setattr__(self, "fixed", {k: float(v) for k, v in dict(self.fixed).items()})
        if "concentration" not in self.outcomes:
            raise ConfigError("the concentration outcome is always modelled")
        if set(self.outcomes) - {"concentration", "inhibition"}:
            raise ConfigError(f"unknown outcomes in {self.outcomes}")
        if set(self.random_effects) - set(RE_PARAMS):
            raise ConfigError(f"unknown random effects in {self.random_effects}")
        if not self.has_pd and set(self.random_effects) & set(PD_RE):
            raise ConfigError("PD random effects need the inhibition outcome")
        unknown = set(self.fixed) - set(POP_ORDER)
        if unknown:
            raise ConfigError(f"cannot pin unknown parameters {sorted(unknown)}")
        if any(v <= 0 for v in self.fixed.values()):
            raise ConfigError("pinned values must be positive")

    @property
    def has_pd(self) -> bool:
        return "inhibition" in self.outcomes

    @property
    def individual_params(self) -> tuple:
        return RE_PARAMS if self.has_pd else PK_RE

    def structural(self) -> tuple:
        """Population parameters the likelihood depends on."""
        names = ["ka", "mu_cl", "mu_v"]
        names += [f"omega_{p}" for p in self.random_effects]
        names.append("sigma_c")
        if self.has_pd:
            names += ["mu_ic50", "mu_ke", "sigma_i"]
        return tuple(n for n in POP_ORDER if n in names)

    def sampled(self) -> tuple:
        return tuple(n for n in self.structural() if n not in self.fixed)

    def columns(self) -> tuple:
        """Columns of a draw table: sampled parameters plus pinned constants."""
        names = set(self.sampled()) | set(self.fixed)
        return tuple(n for n in POP_ORDER if n in names)

    @classmethod
    def for_species(cls, species: str, pd: bool = False, pinned_omega: float = 0.7,
                    pin_sigma_c: float | None = None, i_max: float = 1.0) -> "ModelSpec":
        """Default model per species.

        With one observation per animal the mouse model keeps a random effect
        on CL only; its other between-subject SDs are pinned for later use.
        """
        outcomes = ("concentration", "inhibition") if pd else ("concentration",)
        if species == "mouse":
            fixed = {"omega_v": pinned_omega}
            if pd:
                fixed.update(omega_ic50=pinned_omega, omega_ke=pinned_omega)
            if pin_sigma_c is not None:
                fixed["sigma_c"] = pin_sigma_c
            return cls(outcomes, ("cl",), fixed, i_max)
        fixed = {} if pin_sigma_c is None else {"sigma_c": pin_sigma_c}
        return cls(outcomes, RE_PARAMS if pd else PK_RE, fixed, i_max)


@dataclass(frozen=True)
class FitData:
    """Observation arrays indexed by a dense subject index ``0..n_subj-1``."""

    n_subj: int
    subject_ids: np.ndarray
    c_subj: np.ndarray
    c_dose: np.ndarray
    c_t: np.ndarray
    c_y: np.ndarray  # log concentration
    c_logy_sum: float
    i_subj: np.ndarray
    i_dose: np.ndarray
    i_t: np.ndarray
    i_y: np.ndarray  # logit biomarker level
    i_jac_sum: float  # sum of log(I (1 - I))
    obs_per_subject: int

    @property
    def n_conc(self) -> int:
        return self.c_y.size

    @property
    def n_inhib(self) -> int:
        return self.i_y.size


def prepare_data(data: Dataset, model: ModelSpec) -> FitData:
    """Index a dataset for fitting, checking it matches the model."""
    if len(data) == 0:
        raise DomainError("dataset is empty")
    ids, dense = np.unique(data.subject_id, return_inverse=True)
    conc = data.outcome == "concentration"
    inhib = data.outcome == "inhibition"
    if not conc.any():
        raise DomainError("dataset has no concentration observations")
    if model.has_pd and not inhib.any():
        raise DomainError("model expects inhibition observations")
    per_subj = int(np.bincount(dense[conc]).max())
    if per_subj == 1 and set(model.random_effects) - {"cl"}:
        raise ConfigError("with one observation per subject only CL can carry a random effect")
    yc = data.value[conc]
    yi = data.value[inhib] if model.has_pd else np.empty(0)
    return FitData(
        n_subj=ids.size,
        subject_ids=ids,
        c_subj=dense[conc].astype(np.int64),
        c_dose=data.dose_mg[conc].copy(),
        c_t=data.time_h[conc].copy(),
        c_y=np.log(yc),
        c_logy_sum=float(np.log(yc).sum()),
        i_subj=dense[inhib].astype(np.int64) if model.has_pd else np.empty(0, np.int64),
        i_dose=data.dose_mg[inhib].copy() if model.has_pd else np.empty(0),
        i_t=data.time_h[inhib].copy() if model.has_pd else np.empty(0),
        i_y=np.log(yi) - np.log1p(-yi),
        i_jac_sum=float(np.sum(np.log(yi) + np.log1p(-yi))),
        obs_per_subject=per_subj,
    )


def individual_values(model: ModelSpec, pop: dict, re: dict, n_subj: int) -> dict:
    """Per-subject natural-scale CL, V (and IC50, ke)."""
    out = {}
    for p in model.individual_params:
        if p in model.random_effects:
            out[p] = np.asarray(re[p], dtype=float)
        else:
            out[p] = np.full(n_subj, float(pop[f"mu_{p}"]))
    return out


def sq_resid(model: ModelSpec, fd: FitData, ka: float, ind: dict):
    """Per-subject sums of squared residuals ``(conc, inhib)``."""
    ssc = kernels.conc_sq_resid(ka, ind["cl"], ind["v"], fd.c_subj, fd.c_dose, fd.c_t,
                                fd.c_y, fd.n_subj)
    if not model.has_pd:
        return ssc, np.zeros(fd.n_subj)
    ssi = kernels.inhib_sq_resid(ka, ind["cl"], ind["v"], ind["ic50"], ind["ke"], model.i_max,
                                 fd.i_subj, fd.i_dose, fd.i_t, fd.i_y, fd.n_subj)
    return ssc, ssi


def log_joint(model: ModelSpec, priors: PriorSpec, params: dict, data) -> float:
    """Log joint density on the natural scale.

    ``params`` maps population names to values and each random-effect
    parameter name (``"cl"``, ``"v"``, ...) to the array of individual
    values. Out-of-support values give ``-inf``.
    """
    pop = {n: params[n] if n in params else model.fixed.get(n) for n in model.structural()}
    missing = [n for n, v in pop.items() if v is None]
    missing += [p for p in model.random_effects if p not in params]
    if missing:
        raise MappingError(f"parameters missing: {missing}")
    priors.require(model.sampled())
    if any(not float(v) > 0 for v in pop.values()):
        return -np.inf
    total = 0.0
    for n in model.sampled():
        total += float(priors[n].logpdf(pop[n]))

    fd = data if isinstance(data, FitData) else (
        None if data is None or len(data) == 0 else prepare_data(data, model))
    if fd is not None:
        n_subj = fd.n_subj
    else:
        n_subj = len(params[model.random_effects[0]]) if model.random_effects else 0
    for p in model.random_effects:
        x = np.asarray(params[p], dtype=float)
        if x.shape != (n_subj,):
            raise DomainError(f"expected {n_subj} individual values for {p}")
        if np.any(x <= 0):
            return -np.inf
        total += float(np.sum(_lognormal_logpdf(x, np.log(pop[f"mu_{p}"]), pop[f"omega_{p}"])))
    if fd is None:
        return total

    ind = individual_values(model, pop, params, fd.n_subj)
    ssc, ssi = sq_resid(model, fd, pop["ka"], ind)
    total += _gauss_obs(ssc.sum(), fd.n_conc, pop["sigma_c"]) - fd.c_logy_sum
    if model.has_pd:
        total += _gauss_obs(ssi.sum(), fd.n_inhib, pop["sigma_i"]) - fd.i_jac_sum
    return float(total) if np.isfinite(total) else -np.inf


def _lognormal_logpdf(x, meanlog, sdlog):
    lx = np.log(x)
    return -lx - np.log(sdlog) - 0.5 * _LOG_2PI - 0.5 * ((lx - meanlog) / sdlog) ** 2


def _gauss_obs(ss, n, sigma):
    return -n * np.log(sigma) - 0.5 * n * _LOG_2PI - 0.5 * ss / sigma ** 2


# ---------------------------------------------------------------------------
# unconstrained (all-log) parameterisation


class Layout:
    """Flat vector: log population parameters, then log individual values
    for each random-effect parameter (``n_subj`` entries per block)."""

    def __init__(self, model: ModelSpec, n_subj: int):
        self.model = model
        self.n_subj = n_subj
        self.pop_names = model.sampled()
        self.n_pop = len(self.pop_names)
        self.re_names = model.random_effects
        self.size = self.n_pop + n_subj * len(self.re_names)

    def re_slice(self, p) -> slice:
        j = self.re_names.index(p)
        start = self.n_pop + j * self.n_subj
        return slice(start, start + self.n_subj)

    def pack(self, pop: dict, re: dict) -> np.ndarray:
        x = np.empty(self.size)
        for i, n in enumerate(self.pop_names):
            x[i] = np.log(pop[n])
        for p in self.re_names:
            x[self.re_slice(p)] = np.log(re[p])
        return x

    def unpack(self, x):
        """Natural-scale ``(pop, re)`` dicts; pinned values are included."""
        pop = dict(self.model.fixed)
        for i, n in enumerate(self.pop_names):
            pop[n] = np.exp(x[i])
        re = {p: np.exp(x[self.re_slice(p)]) for p in self.re_names}
        return pop, re


class UnconstrainedTarget:
    """Log density of the all-log vector (natural log joint plus Jacobian).

    The evaluation also accepts complex vectors so that gradients can be
    taken by complex-step differentiation; subjects are conditionally
    independent, so a single perturbation of a whole random-effect block
    yields every subject's derivative at once.
    """

    def __init__(self, model: ModelSpec, priors: PriorSpec, fd: FitData, step: float = 1e-20):
        priors.require(model.sampled())
        self.model = model
        self.priors = priors
        self.fd = fd
        self.layout = Layout(model, fd.n_subj)
        self.step = step

    def _pieces(self, x):
        """Population-level terms (scalar) and per-subject terms (array)."""
        lay, model, fd = self.layout, self.model, self.fd
        logp = {n: x[i] for i, n in enumerate(lay.pop_names)}
        for n, v in model.fixed.items():
            logp[n] = np.log(v)
        pop_terms = 0.0
        for n in lay.pop_names:
            prior = self.priors[n]
            if isinstance(prior, LogNormalPrior):
                pop_terms = pop_terms + _normal_logpdf(logp[n], prior.meanlog, prior.sdlog)
            elif isinstance(prior, HalfTPrior):
                pop_terms = pop_terms + _halft_log_scale(logp[n], prior.df, prior.scale)
            else:  # pragma: no cover - PriorSpec only holds the two families
                raise ConfigError(f"unsupported prior for {n}")

        subj = 0.0
        ind = {}
        for p in model.individual_params:
            if p in lay.re_names:
                lx = x[lay.re_slice(p)]
                subj = subj + _normal_logpdf(lx, logp[f"mu_{p}"], np.exp(logp[f"omega_{p}"]))
                ind[p] = np.exp(lx)
            else:
                ind[p] = np.exp(logp[f"mu_{p}"]) * np.ones(fd.n_subj)
        ka = np.exp(logp["ka"])
        sig_c = np.exp(logp["sigma_c"])
        r = fd.c_y - np.log(conc_model(fd.c_t, fd.c_dose, ka, ind["cl"][fd.c_subj], ind["v"][fd.c_subj]))
        ssc = np.bincount(fd.c_subj, weights=(r * r).real, minlength=fd.n_subj)
        if np.iscomplexobj(r):
            ssc = ssc + 1j * np.bincount(fd.c_subj, weights=(r * r).imag, minlength=fd.n_subj)
        nc = np.bincount(fd.c_subj, minlength=fd.n_subj)
        subj = subj - nc * logp["sigma_c"] - 0.5 * ssc / sig_c ** 2
        const = -0.5 * fd.n_conc * _LOG_2PI - fd.c_logy_sum
        if model.has_pd:
            sig_i = np.exp(logp["sigma_i"])
            ce = effect_conc_model(fd.i_t, fd.i_dose, ka, ind["cl"][fd.i_subj],
                                   ind["v"][fd.i_subj], ind["ke"][fd.i_subj])
            ri = fd.i_y - logit_biomarker(ce, ind["ic50"][fd.i_subj], model.i_max)
            ssi = np.bincount(fd.i_subj, weights=(ri * ri).real, minlength=fd.n_subj)
            if np.iscomplexobj(ri):
                ssi = ssi + 1j * np.bincount(fd.i_subj, weights=(ri * ri).imag, minlength=fd.n_subj)
            ni = np.bincount(fd.i_subj, minlength=fd.n_subj)
            subj = subj - ni * logp["sigma_i"] - 0.5 * ssi / sig_i ** 2
            const = const - 0.5 * fd.n_inhib * _LOG_2PI - fd.i_jac_sum
        return pop_terms + const, subj

    def __call__(self, x) -> float:
        with np.errstate(all="ignore"):
            a, b = self._pieces(np.asarray(x, dtype=float))
            val = float(a + np.sum(b))
        return val if np.isfinite(val) else -np.inf

    def grad(self, x) -> np.ndarray:
        """Gradient by complex-step differentiation."""
        x = np.asarray(x, dtype=float)
        lay, h = self.layout, self.step
        g = np.empty(lay.size)
        with np.errstate(all="ignore"):
            for i in range(lay.n_pop):
                xc = x.astype(complex)
                xc[i] += 1j * h
                a, b = self._pieces(xc)
                g[i] = (a + np.sum(b)).imag / h
            for p in lay.re_names:
                xc = x.astype(complex)
                sl = lay.re_slice(p)
                xc[sl] += 1j * h
                _, b = self._pieces(xc)
                g[sl] = np.asarray(b).imag / h
        return g

    def log_joint_natural(self, x) -> float:
        """Natural-scale log joint at the point ``x`` (no Jacobian)."""
        pop, re = self.layout.unpack(np.asarray(x, dtype=float))
        return log_joint(self.model, self.priors, {**pop, **re}, self.fd)


def _normal_logpdf(x, mean, sd):
    return -np.log(sd) - 0.5 * _LOG_2PI - 0.5 * ((x - mean) / sd) ** 2


def _halft_log_scale(u, df, scale):
    prior = HalfTPrior(df, scale)
    const = float(prior.logpdf(scale)) + 0.5 * (df + 1) * np.log1p(1.0 / df)
    z = np.exp(u) / scale
    return const - 0.5 * (df + 1) * np.log(1.0 + z * z / df) + u
