"""Prior families and the default non-informative prior set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..errors import DomainError, MappingError

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LogNormalPrior:
    """LN(meanlog, sdlog) on a positive parameter."""

    meanlog: float
    sdlog: float

    def __post_init__(self):
        if not self.sdlog > 0:
            raise DomainError("sdlog must be positive")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lx = np.log(x)
            out = -lx - np.log(self.sdlog) - 0.5 * _LOG_2PI - 0.5 * ((lx - self.meanlog) / self.sdlog) ** 2
        return np.where(x > 0, out, -np.inf)

    def log_scale_logpdf(self, u):
        """Density of ``log x`` (normal), used by log-scale samplers."""
        return -np.log(self.sdlog) - 0.5 * _LOG_2PI - 0.5 * ((u - self.meanlog) / self.sdlog) ** 2

    def median(self) -> float:
        return float(np.exp(self.meanlog))


@dataclass(frozen=True)
class HalfTPrior:
    """Half Student-t with ``df`` degrees of freedom and scale ``scale``."""

    df: float
    scale: float

    def __post_init__(self):
        if not (self.df > 0 and self.scale > 0):
            raise DomainError("df and scale must be positive")

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        nu = self.df
        z = x / self.scale
        const = (np.log(2.0) + gammaln(0.5 * (nu + 1)) - gammaln(0.5 * nu)
                 - 0.5 * np.log(nu * np.pi) - np.log(self.scale))
        out = const - 0.5 * (nu + 1) * np.log1p(z * z / nu)
        return np.where(x > 0, out, -np.inf)

    def log_scale_logpdf(self, u):
        """Density of ``log x`` including the Jacobian ``x``."""
        return self.logpdf(np.exp(u)) + u

    def median(self) -> float:
        from scipy.stats import t as student_t

        return float(self.scale * student_t.ppf(0.75, self.df))


class PriorSpec(dict):
    """Mapping from parameter name to a prior object."""

    def require(self, names):
        missing = [n for n in names if n not in self]
        if missing:
            raise MappingError(f"no prior given for {missing}")

    def with_meanlog(self, name: str, meanlog: float) -> "PriorSpec":
        out = PriorSpec(self)
        out[name] = LogNormalPrior(float(meanlog), self[name].sdlog)
        return out


def default_priors() -> PriorSpec:
    """Weakly informative defaults for every PK/PD population parameter."""
    half_t = HalfTPrior(3.0, 2.8)
    return PriorSpec(
        ka=LogNormalPrior(-1.0, 2.5),
        mu_cl=LogNormalPrior(-1.0, 2.5),
        mu_v=LogNormalPrior(-1.0, 2.5),
        mu_ic50=LogNormalPrior(0.0, 2.5),
        mu_ke=LogNormalPrior(0.0, 2.5),
        omega_cl=half_t,
        omega_v=half_t,
        omega_ic50=half_t,
        omega_ke=half_t,
        sigma_c=half_t,
        sigma_i=half_t,
    )
