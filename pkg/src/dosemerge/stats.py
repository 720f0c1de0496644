"""Probability primitives shared across the package.

Normal CDF/quantile, the two prior families used for the PK/PD parameters,
empirical moments, and Gaussian kernel density estimation on uniform grids.
Grid densities are evaluated at cell midpoints so that the rectangle rule
integrates them exactly as the Hellinger and merging code expects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import DegenerateSampleError, DomainError, GridError

DEFAULT_GRID_POINTS = 512


def std_normal_cdf(x):
    """Standard normal CDF, accurate to machine precision in both tails."""
    return special.ndtr(x)


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open interval (0, 1)."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(~((p_arr > 0.0) & (p_arr < 1.0))):
        raise DomainError(f"quantile level must lie in (0, 1), got {p!r}")
    out = special.ndtri(p_arr)
    return float(out) if out.ndim == 0 else out


def sample_lognormal(meanlog, sdlog, rng: np.random.Generator, size=None):
    """Draw from LN(meanlog, sdlog), parameterised on the log scale.

    ``sdlog == 0`` returns ``exp(meanlog)`` exactly without consuming the
    generator.
    """
    if np.any(np.asarray(sdlog) < 0):
        raise DomainError("sdlog must be non-negative")
    if np.all(np.asarray(sdlog) == 0):
        val = np.exp(np.asarray(meanlog, dtype=float))
        if size is None:
            return float(val) if val.ndim == 0 else val
        return np.broadcast_to(val, size).copy()
    return np.exp(meanlog + sdlog * rng.standard_normal(size))


def sample_half_student_t(df, scale, rng: np.random.Generator, size=None):
    """Draw ``|T| * scale`` with ``T`` Student-t with ``df`` degrees of freedom."""
    if not df > 0:
        raise DomainError("df must be positive")
    if not scale > 0:
        raise DomainError("scale must be positive")
    return np.abs(rng.standard_t(df, size)) * scale


def empirical_mean_sd(draws) -> tuple[float, float]:
    """Sample mean and unbiased standard deviation."""
    x = _as_samples(draws)
    return float(np.mean(x)), float(np.std(x, ddof=1))


def quantile(draws, p):
    """Quantile by linear interpolation of the order statistics."""
    x = _as_samples(draws)
    return np.quantile(x, p, method="linear")


def silverman_bandwidth(samples) -> float:
    """Silverman's rule ``0.9 min(sd, IQR/1.34) n^(-1/5)``.

    Falls back to the standard deviation alone when the IQR is zero
    (heavily tied samples).
    """
    x = _as_samples(samples)
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        raise DegenerateSampleError("zero sample variance, bandwidth undefined")
    q75, q25 = np.percentile(x, [75, 25])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


@dataclass(frozen=True)
class EmpiricalDraws:
    """A labelled set of L scalar draws."""

    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=float).ravel()
        if x.size < 2:
            raise DegenerateSampleError("need at least two draws")
        if not np.all(np.isfinite(x)):
            raise DomainError("draws must be finite")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class GridDensity:
    """Density heights at the ``m`` cell midpoints of ``[lo, hi]``."""

    lo: float
    hi: float
    values: np.ndarray
    m: int = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel().copy()
        if not self.lo < self.hi:
            raise GridError(f"grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if v.size < 2:
            raise GridError("grid needs at least two points")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise DomainError("density values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "m", v.size)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.m

    @property
    def points(self) -> np.ndarray:
        return grid_points(self.lo, self.hi, self.m)

    def integral(self) -> float:
        return float(self.step * self.values.sum())

    def normalized(self) -> "GridDensity":
        total = self.integral()
        if not total > 0:
            raise DegenerateSampleError("density has zero mass on its grid")
        return GridDensity(self.lo, self.hi, self.values / total)

    def same_grid(self, other: "GridDensity") -> bool:
        return self.m == other.m and self.lo == other.lo and self.hi == other.hi

    @classmethod
    def from_pdf(cls, pdf, lo, hi, m=DEFAULT_GRID_POINTS) -> "GridDensity":
        """Tabulate a callable density at the midpoints of ``[lo, hi]``."""
        return cls(lo, hi, pdf(grid_points(lo, hi, m)))


def grid_points(lo: float, hi: float, m: int) -> np.ndarray:
    """Cell midpoints ``lo + (j + 0.5)(hi - lo)/m`` for ``j = 0..m-1``."""
    return lo + (np.arange(m) + 0.5) * ((hi - lo) / m)


def kde(draws, lo: float, hi: float, m: int = DEFAULT_GRID_POINTS,
        bandwidth: float | None = None) -> GridDensity:
    """Gaussian kernel density estimate tabulated on a midpoint grid.

    The result is not renormalised; it integrates to about one when the grid
    covers the samples with a few bandwidths of margin.
    """
    x = _as_samples(draws)
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise DegenerateSampleError("bandwidth must be positive")
    if not lo < hi:
        raise GridError(f"grid needs lo < hi, got [{lo}, {hi}]")
    return GridDensity(lo, hi, kde_grid(x, grid_points(lo, hi, m), h))


def kde_grid(samples: np.ndarray, points: np.ndarray, bandwidth: float,
             chunk: int = 4096) -> np.ndarray:
    """Gaussian KDE heights at ``points``, accumulated over sample chunks."""
    out = np.zeros(points.size)
    norm = 1.0 / (samples.size * bandwidth * np.sqrt(2.0 * np.pi))
    for start in range(0, samples.size, chunk):
        z = (points[:, None] - samples[None, start:start + chunk]) / bandwidth
        out += np.exp(-0.5 * z * z).sum(axis=1)
    return out * norm


def _as_samples(draws) -> np.ndarray:
    if isinstance(draws, EmpiricalDraws):
        return draws.samples
    samples = getattr(draws, "samples", draws)
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSampleError("need at least two draws")
    return x
