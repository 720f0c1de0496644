"""MCMC samplers.

Two generic engines work on any log density over R^d: an adaptive
random-walk Metropolis-within-Gibbs and a leapfrog HMC with dual-averaged
step size. The hierarchical PK/PD sampler used by :func:`run_mcmc` is a
blocked Metropolis-within-Gibbs on log scales:

* each random-effect block is updated for all subjects at once, accepting
  or rejecting subject by subject (subjects are conditionally independent);
* log medians of parameters with random effects are drawn exactly from
  their normal full conditional;
* ka, medians without random effects, between-subject SDs and residual
  SDs get scalar random-walk updates.

Proposal scales adapt during burn-in by a Robbins-Monro recursion toward a
0.3 acceptance rate and are then frozen.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigError, ConvergenceWarning, DegenerateSampleError, InitializationError
from .diagnostics import gelman_rubin
from .draws import PosteriorDraws
from .model import (FitData, ModelSpec, UnconstrainedTarget, _halft_log_scale, prepare_data,
                    sq_resid)
from .priors import HalfTPrior, LogNormalPrior, PriorSpec

RHAT_THRESHOLD = 1.01
TARGET_ACCEPT = 0.3
_INIT_RETRIES = 100


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings. Defaults are desk scale; see :meth:`full_scale`."""

    chains: int = 3
    burn_in: int = 1000
    iters: int = 2000
    seed: int | None = 0
    sampler: str = "mwg"
    target_accept: float = TARGET_ACCEPT
    init_jitter: float = 0.1
    n_leapfrog: int = 16
    hmc_target_accept: float = 0.8
    warn_rhat: bool = True

    def __post_init__(self):
        if self.chains < 1 or self.burn_in < 0 or self.iters < 1:
            raise ConfigError("chains and iters must be positive, burn_in non-negative")
        if self.sampler not in ("mwg", "hmc"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        if not 0 < self.target_accept < 1:
            raise ConfigError("target_accept must lie in (0, 1)")

    @classmethod
    def full_scale(cls, **kw) -> "McmcConfig":
        return cls(burn_in=3000, iters=6000, **kw)


def chain_rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class _RobbinsMonro:
    """Per-coordinate log-scale adaptation toward a target acceptance rate."""

    def __init__(self, scale, target):
        self.log_scale = np.log(np.asarray(scale, dtype=float)).copy()
        self.target = target
        self.t = 0

    @property
    def scale(self):
        return np.exp(self.log_scale)

    def update(self, accepted):
        self.t += 1
        gain = min(1.0, 5.0 * self.t ** -0.6)
        self.log_scale += gain * (np.asarray(accepted, dtype=float) - self.target)
        np.clip(self.log_scale, -12.0, 3.0, out=self.log_scale)


# ---------------------------------------------------------------------------
# generic engines


def adaptive_mwg(logp, x0, rng: np.random.Generator, burn_in: int, iters: int,
                 target_accept: float = TARGET_ACCEPT, init_scale=0.5):
    """Coordinate-wise random-walk Metropolis with adapted scales.

    Returns ``(draws, acceptance)`` with ``draws`` of shape ``(iters, d)``.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    cur = logp(x)
    if not np.isfinite(cur):
        raise InitializationError("log density is not finite at the starting point")
    adapt = _RobbinsMonro(np.broadcast_to(init_scale, d), target_accept)
    out = np.empty((iters, d))
    acc = np.zeros(d)
    for it in range(burn_in + iters):
        steps = adapt.scale * rng.standard_normal(d)
        logu = np.log(rng.uniform(size=d))
        accepted = np.zeros(d)
        for j in range(d):
            old = x[j]
            x[j] = old + steps[j]
            new = logp(x)
            if logu[j] < new - cur:
                cur = new
                accepted[j] = 1.0
            else:
                x[j] = old
        if it < burn_in:
            adapt.update(accepted)
        else:
            out[it - burn_in] = x
            acc += accepted
    return out, acc / max(iters, 1)


def hmc(logp, grad, x0, rng: np.random.Generator, burn_in: int, iters: int,
        n_leapfrog: int = 16, target_accept: float = 0.8, step0: float = 0.05):
    """Static-length HMC with dual-averaged step size and a diagonal mass
    matrix estimated from the second half of burn-in.

    Returns ``(draws, acceptance_rate)``.
    """
    x = np.array(x0, dtype=float)
    d = x.size
    cur, g = logp(x), grad(x)
    if not np.isfinite(cur):
        raise InitializationError("log density is not finite at the starting point")
    inv_mass = np.ones(d)
    # dual averaging constants
    gamma, t0, kappa = 0.05, 10.0, 0.75
    log_eps = np.log(step0)
    mu = np.log(10 * step0)
    h_bar, log_eps_bar = 0.0, 0.0
    window = []
    mass_set = False
    m = 0
    out = np.empty((iters, d))
    n_acc = 0
    for it in range(burn_in + iters):
        eps = np.exp(log_eps) if it < burn_in else np.exp(log_eps_bar)
        p = rng.standard_normal(d) / np.sqrt(inv_mass)
        h0 = cur - 0.5 * np.sum(inv_mass * p * p)
        xn, gn = x.copy(), g.copy()
        pn = p + 0.5 * eps * gn
        ok = True
        for step in range(n_leapfrog):
            xn = xn + eps * inv_mass * pn
            gn = grad(xn)
            if not np.all(np.isfinite(gn)):
                ok = False
                break
            if step < n_leapfrog - 1:
                pn = pn + eps * gn
        if ok:
            pn = pn + 0.5 * eps * gn
            new = logp(xn)
            h1 = new - 0.5 * np.sum(inv_mass * pn * pn)
            log_ratio = h1 - h0 if np.isfinite(h1) else -np.inf
        else:
            log_ratio = -np.inf
        accept_prob = float(np.exp(min(0.0, log_ratio)))
        if np.log(rng.uniform()) < log_ratio:
            x, cur, g = xn, new, gn
            accepted = True
        else:
            accepted = False
        if it < burn_in:
            m += 1
            h_bar = (1 - 1 / (m + t0)) * h_bar + (target_accept - accept_prob) / (m + t0)
            log_eps = mu - np.sqrt(m) / gamma * h_bar
            w = m ** -kappa
            log_eps_bar = w * log_eps + (1 - w) * log_eps_bar
            if it >= burn_in // 2:
                window.append(x.copy())
            if it == (3 * burn_in) // 4 and len(window) > 10 and not mass_set:
                var = np.var(np.asarray(window), axis=0)
                inv_mass = np.where(var > 0, var, 1.0) + 1e-8
                mass_set = True
                # restart the step-size search for the new metric
                mu = log_eps + np.log(10.0)
                h_bar, log_eps_bar, m = 0.0, 0.0, 0
        else:
            out[it - burn_in] = x
            n_acc += accepted
    return out, n_acc / max(iters, 1)


def sample_density(logp, x0s, config: McmcConfig, names=None, grad=None,
                   transform=None) -> PosteriorDraws:
    """Run independent chains of a generic engine and collect diagnostics.

    ``x0s`` gives one starting point per chain. ``transform`` optionally maps
    each stored vector to the reported parameters.
    """
    rngs = chain_rngs(config.seed, config.chains)
    chains, acc = [], []
    for c in range(config.chains):
        if config.sampler == "hmc":
            if grad is None:
                raise ConfigError("HMC needs a gradient")
            d, a = hmc(logp, grad, x0s[c], rngs[c], config.burn_in, config.iters,
                       n_leapfrog=config.n_leapfrog, target_accept=config.hmc_target_accept)
        else:
            d, a = adaptive_mwg(logp, x0s[c], rngs[c], config.burn_in, config.iters,
                                target_accept=config.target_accept)
        chains.append(d if transform is None else np.apply_along_axis(transform, 1, d))
        acc.append(np.mean(a))
    arr = np.stack(chains)
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(arr.shape[2]))
    rhat = _rhat_all(arr, names, names, config)
    return PosteriorDraws(names, arr, rhat=rhat, acceptance={"mean": float(np.mean(acc))})


def _rhat_all(arr, names, sampled, config):
    rhat = {}
    if arr.shape[0] < 2 or arr.shape[1] < 10:
        return rhat
    for j, n in enumerate(names):
        if n in sampled:
            try:
                rhat[n] = gelman_rubin(arr[:, :, j])
            except DegenerateSampleError:
                rhat[n] = float("nan")
    bad = {n: r for n, r in rhat.items() if not r <= RHAT_THRESHOLD}
    if bad and config.warn_rhat:
        worst = max(bad, key=lambda k: bad[k] if np.isfinite(bad[k]) else np.inf)
        warnings.warn(f"Rhat above {RHAT_THRESHOLD} for {sorted(bad)} (worst {worst}: "
                      f"{bad[worst]:.3f})", ConvergenceWarning, stacklevel=3)
    return rhat


# ---------------------------------------------------------------------------
# hierarchical PK/PD sampler


class _PkPdChain:
    """State and updates of one Metropolis-within-Gibbs chain."""

    def __init__(self, model: ModelSpec, priors: PriorSpec, fd: FitData, rng, config: McmcConfig):
        self.model, self.priors, self.fd, self.rng = model, priors, fd, rng
        self.cfg = config
        self.re = model.random_effects
        self.mh_mu = [f"mu_{p}" for p in model.individual_params
                      if p not in self.re and f"mu_{p}" not in model.fixed]
        self.mh_omega = [f"omega_{p}" for p in self.re if f"omega_{p}" not in model.fixed]
        self.mh_sigma = [s for s in (("sigma_c", "sigma_i") if model.has_pd else ("sigma_c",))
                         if s not in model.fixed]
        self.scalar_names = (["ka"] if "ka" not in model.fixed else []) + self.mh_mu \
            + self.mh_omega + self.mh_sigma
        self.scalar_adapt = _RobbinsMonro(np.full(len(self.scalar_names), 0.1), config.target_accept)
        self.re_adapt = {p: _RobbinsMonro(np.full(fd.n_subj, 0.3), config.target_accept)
                         for p in self.re}
        self.shift_names = [p for p in self.re if f"mu_{p}" not in model.fixed]
        # a joint CL/V translation keeps every elimination rate k_i fixed
        if not any(f"mu_{p}" in model.fixed for p in ("cl", "v")):
            self.shift_names.append("cl+v")
        self.shift_adapt = _RobbinsMonro(np.full(len(self.shift_names), 0.05), config.target_accept)
        self.n_scalar_acc = np.zeros(len(self.scalar_names))
        self._prior_cache = {}
        for n in model.sampled():
            prior = priors[n]
            if isinstance(prior, LogNormalPrior):
                const = -math.log(prior.sdlog) - 0.5 * math.log(2 * math.pi)
                self._prior_cache[n] = (0, prior.meanlog, prior.sdlog, const)
            elif isinstance(prior, HalfTPrior):
                const = float(_halft_log_scale(0.0, prior.df, prior.scale)) \
                    + 0.5 * (prior.df + 1) * math.log1p(1.0 / (prior.scale ** 2 * prior.df))
                self._prior_cache[n] = (1, prior.df, prior.scale, const)
            else:  # pragma: no cover - PriorSpec only holds the two families
                raise ConfigError(f"unsupported prior for {n}")
        self.n_re_acc = {p: 0.0 for p in self.re}

    # -- state ------------------------------------------------------------
    def initialise(self):
        model, fd = self.model, self.fd
        for _ in range(_INIT_RETRIES):
            lp = {}
            for n in model.structural():
                lp[n] = np.log(model.fixed[n]) if n in model.fixed else np.log(self.priors[n].median())
            theta = {p: lp[f"mu_{p}"] + np.log1p(self.cfg.init_jitter * self.rng.uniform(-1, 1, fd.n_subj))
                     for p in self.re}
            self.lp, self.theta = lp, theta
            self._refresh()
            if np.all(np.isfinite(self.ssc)) and np.all(np.isfinite(self.ssi)):
                return
        raise InitializationError("no finite starting point after "
                                  f"{_INIT_RETRIES} attempts")

    def _ind(self, theta=None, lp=None):
        theta = self.theta if theta is None else theta
        lp = self.lp if lp is None else lp
        out = {}
        for p in self.model.individual_params:
            out[p] = np.exp(theta[p]) if p in self.re else np.full(self.fd.n_subj, np.exp(lp[f"mu_{p}"]))
        return out

    def _refresh(self):
        self.ssc, self.ssi = sq_resid(self.model, self.fd, np.exp(self.lp["ka"]), self._ind())

    def _resid_weight(self):
        wc = 0.5 * np.exp(-2 * self.lp["sigma_c"])
        wi = 0.5 * np.exp(-2 * self.lp["sigma_i"]) if self.model.has_pd else 0.0
        return wc, wi

    # -- updates ----------------------------------------------------------
    def update_random_effects(self, adapting):
        wc, wi = self._resid_weight()
        n = self.fd.n_subj
        for p in self.re:
            mu, om = self.lp[f"mu_{p}"], np.exp(self.lp[f"omega_{p}"])
            cur = self.theta[p]
            prop = cur + self.re_adapt[p].scale * self.rng.standard_normal(n)
            theta = dict(self.theta)
            theta[p] = prop
            ind = self._ind(theta)
            ka = np.exp(self.lp["ka"])
            if p in ("cl", "v"):
                ssc, ssi = sq_resid(self.model, self.fd, ka, ind)
            else:
                ssc = self.ssc
                _, ssi = sq_resid(self.model, self.fd, ka, ind)
            with np.errstate(invalid="ignore"):
                delta = (-wc * (ssc - self.ssc) - wi * (ssi - self.ssi)
                         - 0.5 * ((prop - mu) ** 2 - (cur - mu) ** 2) / om ** 2)
            delta = np.where(np.isfinite(delta), delta, -np.inf)
            acc = np.log(self.rng.uniform(size=n)) < delta
            self.theta[p] = np.where(acc, prop, cur)
            self.ssc = np.where(acc, ssc, self.ssc)
            self.ssi = np.where(acc, ssi, self.ssi)
            if adapting:
                self.re_adapt[p].update(acc)
            else:
                self.n_re_acc[p] += acc.mean()

    def gibbs_medians(self):
        """Exact normal full conditional of ``log mu_p`` given individual values."""
        for p in self.re:
            name = f"mu_{p}"
            if name in self.model.fixed:
                continue
            prior = self.priors[name]
            om2 = np.exp(2 * self.lp[f"omega_{p}"])
            prec = 1.0 / prior.sdlog ** 2 + self.fd.n_subj / om2
            mean = (prior.meanlog / prior.sdlog ** 2 + self.theta[p].sum() / om2) / prec
            self.lp[name] = mean + self.rng.standard_normal() / np.sqrt(prec)

    def shift_blocks(self, adapting):
        """Translate ``log mu_p`` and every ``log p_i`` by a common amount.

        The random-effect density is unchanged by the move, so only the prior
        on the median and the likelihood enter the ratio. This decorrelates
        medians from weakly identified individual values.
        """
        if not self.shift_names:
            return
        steps = self.shift_adapt.scale * self.rng.standard_normal(len(self.shift_names))
        logu = np.log(self.rng.uniform(size=len(self.shift_names)))
        accepted = np.zeros(len(self.shift_names))
        wc, wi = self._resid_weight()
        ka = np.exp(self.lp["ka"])
        for j, block in enumerate(self.shift_names):
            params = ("cl", "v") if block == "cl+v" else (block,)
            lp, theta = dict(self.lp), dict(self.theta)
            log_prior_diff = 0.0
            for p in params:
                name = f"mu_{p}"
                lp[name] = self.lp[name] + steps[j]
                log_prior_diff += self._log_prior(name, lp[name]) - self._log_prior(name, self.lp[name])
                if p in self.re:
                    theta[p] = self.theta[p] + steps[j]
            ind = self._ind(theta, lp)
            if block in ("ic50", "ke"):
                ssc = self.ssc
                _, ssi = sq_resid(self.model, self.fd, ka, ind)
            else:
                ssc, ssi = sq_resid(self.model, self.fd, ka, ind)
            with np.errstate(invalid="ignore"):
                delta = (-wc * (ssc.sum() - self.ssc.sum()) - wi * (ssi.sum() - self.ssi.sum())
                         + log_prior_diff)
            if np.isfinite(delta) and logu[j] < delta:
                self.lp, self.theta = lp, theta
                self.ssc, self.ssi = ssc, ssi
                accepted[j] = 1.0
        if adapting:
            self.shift_adapt.update(accepted)

    def update_scalars(self, adapting):
        steps = self.scalar_adapt.scale * self.rng.standard_normal(len(self.scalar_names))
        logu = np.log(self.rng.uniform(size=len(self.scalar_names)))
        accepted = np.zeros(len(self.scalar_names))
        for j, name in enumerate(self.scalar_names):
            old = self.lp[name]
            new = old + steps[j]
            if name == "ka" or name in self.mh_mu:
                ok = self._mh_structural(name, new, logu[j])
            elif name in self.mh_omega:
                ok = self._mh_omega(name, new, logu[j])
            else:
                ok = self._mh_sigma(name, new, logu[j])
            accepted[j] = ok
        if adapting:
            self.scalar_adapt.update(accepted)
        else:
            self.n_scalar_acc += accepted

    def _log_prior(self, name, u):
        """Prior density of the log-scale parameter (scalar fast path)."""
        kind, a, b, c = self._prior_cache[name]
        if kind == 0:
            z = (u - a) / b
            return c - 0.5 * z * z
        z = math.exp(u) / b
        return c - 0.5 * (a + 1.0) * math.log1p(z * z / a) + u

    def _mh_structural(self, name, new, logu):
        lp = dict(self.lp)
        lp[name] = new
        ka = np.exp(lp["ka"])
        ind = self._ind(lp=lp)
        if name in ("mu_ic50", "mu_ke"):
            ssc = self.ssc
            _, ssi = sq_resid(self.model, self.fd, ka, ind)
        else:
            ssc, ssi = sq_resid(self.model, self.fd, ka, ind)
        wc, wi = self._resid_weight()
        with np.errstate(invalid="ignore"):
            delta = (-wc * (ssc.sum() - self.ssc.sum()) - wi * (ssi.sum() - self.ssi.sum())
                     + self._log_prior(name, new) - self._log_prior(name, self.lp[name]))
        if np.isfinite(delta) and logu < delta:
            self.lp[name] = new
            self.ssc, self.ssi = ssc, ssi
            return True
        return False

    def _mh_omega(self, name, new, logu):
        p = name[len("omega_"):]
        dev2 = np.sum((self.theta[p] - self.lp[f"mu_{p}"]) ** 2)
        n = self.fd.n_subj

        def dens(u):
            return -n * u - 0.5 * dev2 * np.exp(-2 * u) + self._log_prior(name, u)

        if logu < dens(new) - dens(self.lp[name]):
            self.lp[name] = new
            return True
        return False

    def _mh_sigma(self, name, new, logu):
        ss = self.ssc.sum() if name == "sigma_c" else self.ssi.sum()
        n = self.fd.n_conc if name == "sigma_c" else self.fd.n_inhib

        def dens(u):
            return -n * u - 0.5 * ss * np.exp(-2 * u) + self._log_prior(name, u)

        if logu < dens(new) - dens(self.lp[name]):
            self.lp[name] = new
            return True
        return False

    def population(self, names):
        fixed = self.model.fixed
        return np.array([np.exp(self.lp[n]) if n in self.lp else fixed[n] for n in names])

    def run(self, names):
        cfg = self.cfg
        self.initialise()
        out = np.empty((cfg.iters, len(names)))
        for it in range(cfg.burn_in + cfg.iters):
            adapting = it < cfg.burn_in
            self.update_random_effects(adapting)
            self.gibbs_medians()
            self.shift_blocks(adapting)
            self.update_scalars(adapting)
            if not adapting:
                out[it - cfg.burn_in] = self.population(names)
        acc = {n: float(self.n_scalar_acc[j] / cfg.iters) for j, n in enumerate(self.scalar_names)}
        acc.update({f"re_{p}": float(self.n_re_acc[p] / cfg.iters) for p in self.re})
        return out, acc


def run_mcmc(model: ModelSpec, priors: PriorSpec, data, config: McmcConfig = McmcConfig(),
             species: str = "") -> PosteriorDraws:
    """Sample the posterior of the population parameters.

    ``data`` is a :class:`~dosemerge.design.Dataset` or prepared
    :class:`FitData`. Chains use independent generator streams spawned from
    ``config.seed`` and run one after another, so results do not depend on
    any worker count.
    """
    fd = data if isinstance(data, FitData) else prepare_data(data, model)
    priors.require(model.sampled())
    names = model.columns()
    species = species or getattr(data, "species", "")
    rngs = chain_rngs(config.seed, config.chains)
    if config.sampler == "hmc":
        return _run_hmc(model, priors, fd, config, rngs, names, species)
    chains, accs = [], []
    for rng in rngs:
        draws, acc = _PkPdChain(model, priors, fd, rng, config).run(names)
        chains.append(draws)
        accs.append(acc)
    arr = np.stack(chains)
    acceptance = {k: float(np.mean([a[k] for a in accs])) for k in accs[0]}
    rhat = _rhat_all(arr, names, model.sampled(), config)
    return PosteriorDraws(names, arr, rhat=rhat, acceptance=acceptance, species=species)


def _run_hmc(model, priors, fd, config, rngs, names, species):
    target = UnconstrainedTarget(model, priors, fd)
    lay = target.layout
    chains, accs = [], []
    for rng in rngs:
        x0 = None
        for _ in range(_INIT_RETRIES):
            pop = {n: priors[n].median() for n in lay.pop_names}
            re = {p: pop.get(f"mu_{p}", model.fixed.get(f"mu_{p}"))
                  * (1 + config.init_jitter * rng.uniform(-1, 1, fd.n_subj)) for p in lay.re_names}
            x = lay.pack(pop, re)
            if np.isfinite(target(x)):
                x0 = x
                break
        if x0 is None:
            raise InitializationError(f"no finite starting point after {_INIT_RETRIES} attempts")
        d, a = hmc(target, target.grad, x0, rng, config.burn_in, config.iters,
                   n_leapfrog=config.n_leapfrog, target_accept=config.hmc_target_accept)
        pops = np.empty((config.iters, len(names)))
        for i in range(config.iters):
            pop, _ = lay.unpack(d[i])
            pops[i] = [pop[n] for n in names]
        chains.append(pops)
        accs.append(a)
    arr = np.stack(chains)
    rhat = _rhat_all(arr, names, model.sampled(), config)
    return PosteriorDraws(names, arr, rhat=rhat, acceptance={"hmc": float(np.mean(accs))},
                          species=species)


def with_seed(config: McmcConfig, seed) -> McmcConfig:
    return replace(config, seed=seed)
