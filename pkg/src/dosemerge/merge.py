"""Product-rule merging of dose densities and the conjugate beta special case."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, GridError, IncommensurableSupportError
from .stats import DEFAULT_GRID_POINTS, GridDensity, kde, silverman_bandwidth

_MIN_MASS = 1e-300


@dataclass(frozen=True)
class MergedPosterior:
    """Normalised product density with its point estimates and CrI95."""

    density: GridDensity
    studies: tuple
    mean: float
    median: float
    cri95: tuple

    @property
    def cri_length(self) -> float:
        return self.cri95[1] - self.cri95[0]

    def summary(self) -> dict:
        return {"mean": self.mean, "median": self.median, "cri95_lo": self.cri95[0],
                "cri95_hi": self.cri95[1], "studies": list(self.studies)}

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grid_point", "density"])
        for x, v in zip(self.density.points, self.density.values):
            w.writerow([repr(float(x)), repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def summary_json(self, path=None) -> str:
        text = json.dumps(self.summary(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def product_density(densities) -> GridDensity:
    """Normalised pointwise product, formed in log space.

    Each factor's log is shifted by its own maximum before summing, so many
    sharply peaked factors do not underflow before renormalisation.
    """
    densities = list(densities)
    if not densities:
        raise DomainError("need at least one density")
    first = densities[0]
    for d in densities[1:]:
        if not first.same_grid(d):
            raise GridError("densities live on different grids")
    if len(densities) == 1:
        return first.normalized()
    log_sum = np.zeros(first.m)
    log_shift = 0.0
    with np.errstate(divide="ignore"):
        for d in densities:
            lv = np.log(d.values)
            top = lv.max()
            if not np.isfinite(top):
                raise IncommensurableSupportError("a factor is identically zero")
            log_sum += lv - top
            log_shift += top
    peak = log_sum.max()
    if not np.isfinite(peak):
        raise IncommensurableSupportError("merged densities share no numerical support")
    # true integral = exp(peak + log_shift) * step * sum(exp(log_sum - peak))
    vals = np.exp(log_sum - peak)
    mass_log = peak + log_shift + np.log(first.step * vals.sum())
    if mass_log < np.log(_MIN_MASS):
        raise IncommensurableSupportError("merged densities share no numerical support")
    return GridDensity(first.lo, first.hi, vals).normalized()


def grid_quantile(density: GridDensity, p):
    """Quantiles from the piecewise-linear CDF through the cell edges."""
    d = density.normalized()
    edges = np.linspace(d.lo, d.hi, d.m + 1)
    cdf = np.concatenate([[0.0], np.cumsum(d.values) * d.step])
    cdf /= cdf[-1]
    p = np.asarray(p, dtype=float)
    # collapse flat stretches so interpolation picks the first edge reaching p
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    out = np.interp(p, cdf[keep], edges[keep])
    return float(out) if out.ndim == 0 else out


def summarize(density: GridDensity):
    """Mean, median and equal-tail 95% interval of a grid density."""
    d = density.normalized()
    mean = float(d.step * np.sum(d.points * d.values))
    lo, med, hi = grid_quantile(d, [0.025, 0.5, 0.975])
    return mean, float(med), (float(lo), float(hi))


def merge(densities, studies=None) -> MergedPosterior:
    """Merge grid densities by the product rule and summarise the result."""
    densities = list(densities)
    studies = tuple(studies) if studies is not None else tuple(str(i) for i in range(len(densities)))
    if len(studies) != len(densities):
        raise DomainError("one study label per density is required")
    prod = product_density(densities)
    mean, med, cri = summarize(prod)
    return MergedPosterior(prod, studies, mean, med, cri)


def dose_grid(sample_sets, m: int = DEFAULT_GRID_POINTS, pad: float = 3.0):
    """Dose-scale grid over pooled draws padded by ``pad`` bandwidths, kept above 0."""
    pooled = np.concatenate([np.asarray(s, dtype=float).ravel() for s in sample_sets])
    h = silverman_bandwidth(pooled)
    lo = max(float(pooled.min() - pad * h), 0.0)
    return lo, float(pooled.max() + pad * h), m


def merge_dose_draws(group, m: int = 2048) -> MergedPosterior:
    """KDE each study's dose draws on a common dose grid and merge them.

    Every study keeps its own Silverman bandwidth.
    """
    lo, hi, m = dose_grid([g.samples for g in group], m)
    dens = [kde(g.samples, lo, hi, m) for g in group]
    return merge(dens, [g.study for g in group])


def beta_merge(a: float, b: float, counts):
    """Closed-form product of ``K`` beta posteriors sharing a Beta(a, b) prior.

    Returns ``(K a - K + 1 + sum x, K b - K + 1 + sum (n - x))``.
    """
    counts = list(counts)
    if not counts:
        raise DomainError("need at least one study")
    if not (a > 0 and b > 0):
        raise DomainError("prior parameters must be positive")
    k = len(counts)
    sx = sn = 0
    for x, n in counts:
        if not 0 <= x <= n:
            raise DomainError(f"invalid count ({x}, {n})")
        sx += x
        sn += n - x
    alpha = k * a - k + 1 + sx
    beta = k * b - k + 1 + sn
    if not (alpha > 0 and beta > 0):
        raise DomainError("merged beta parameters are not positive")
    return float(alpha), float(beta)
