"""Variance standardisation of dose draws, Hellinger distances and study selection."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (DegenerateDistributionError, DomainError, GridError,
                     UnsupportedCardinalityError)
from .stats import DEFAULT_GRID_POINTS, GridDensity, kde, silverman_bandwidth

MTD_THRESHOLD = 0.5
MED_THRESHOLD = 0.3
GRID_PAD_BANDWIDTHS = 3.0
DEFAULT_TAUS = np.round(np.arange(1, 51) * 0.01, 2)


@dataclass(frozen=True)
class StandardizedDraws:
    """Log-dose draws rescaled to the largest log-scale SD of their group."""

    study: str
    samples: np.ndarray
    m_k: float
    s_k: float
    s_max: float


def standardize(group) -> list:
    """Give every study the largest log-scale spread while keeping its mean.

    Parameters
    ----------
    group : sequence of DoseDraws
        Draws of the same dose target from at least two studies.

    Returns
    -------
    list of StandardizedDraws
        ``d* = r log d + (1 - r) M`` with ``r = S_max / S`` and ``M``, ``S``
        the empirical mean and SD (``ddof=1``) of ``log d``.
    """
    if len(group) < 2:
        raise DomainError("standardisation needs at least two studies")
    logs, moments = [], []
    for dd in group:
        x = np.asarray(dd.samples, dtype=float)
        if np.any(x <= 0):
            raise DomainError(f"study {dd.study!r} has non-positive dose draws")
        lx = np.log(x)
        s = float(np.std(lx, ddof=1))
        if not s > 0:
            raise DegenerateDistributionError(f"study {dd.study!r} has zero log-scale SD")
        logs.append(lx)
        moments.append((float(np.mean(lx)), s))
    s_max = max(s for _, s in moments)
    out = []
    for dd, lx, (m, s) in zip(group, logs, moments):
        if s == s_max:
            z = lx.copy()
        else:
            r = s_max / s
            z = r * lx + (1.0 - r) * m
        z.setflags(write=False)
        out.append(StandardizedDraws(dd.study, z, m, s, s_max))
    return out


def hellinger(p: GridDensity, q: GridDensity) -> float:
    """Rectangle-rule Hellinger distance of two densities on one grid."""
    if not p.same_grid(q):
        raise GridError("densities live on different grids")
    diff = np.sqrt(p.values) - np.sqrt(q.values)
    h2 = 0.5 * p.step * float(np.sum(diff * diff))
    return float(min(1.0, max(0.0, np.sqrt(h2))))


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise Hellinger distances with a zero diagonal."""

    studies: tuple
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).copy()
        k = len(self.studies)
        if v.shape != (k, k):
            raise DomainError("distance matrix shape does not match the study labels")
        if np.any(np.abs(v - v.T) > 1e-12) or np.any(np.diag(v) != 0):
            raise DomainError("distance matrix must be symmetric with a zero diagonal")
        if np.any(v < -1e-9) or np.any(v > 1 + 1e-9):
            raise DomainError("distances must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "studies", tuple(self.studies))
        object.__setattr__(self, "values", v)

    def __getitem__(self, pair) -> float:
        a, b = pair
        return float(self.values[self.studies.index(a), self.studies.index(b)])

    def pairs(self):
        """``((a, b), distance)`` for every unordered pair, in label order."""
        for i, j in itertools.combinations(range(len(self.studies)), 2):
            yield (self.studies[i], self.studies[j]), float(self.values[i, j])

    @classmethod
    def from_pairs(cls, studies, distances: dict) -> "DistanceMatrix":
        """Build from ``{(a, b): distance}``; either orientation of a key works."""
        studies = tuple(studies)
        v = np.zeros((len(studies), len(studies)))
        for (a, b), d in distances.items():
            i, j = studies.index(a), studies.index(b)
            v[i, j] = v[j, i] = d
        return cls(studies, v)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pair", "distance"])
        for (a, b), d in self.pairs():
            w.writerow([f"{a}-{b}", repr(d)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def shared_grid(sample_sets, pad: float = GRID_PAD_BANDWIDTHS):
    """Grid ``[min - pad h, max + pad h]`` over the pooled samples.

    ``h`` is the Silverman bandwidth of the pooled samples.
    """
    pooled = np.concatenate([np.asarray(s, dtype=float).ravel() for s in sample_sets])
    h = silverman_bandwidth(pooled)
    return float(pooled.min() - pad * h), float(pooled.max() + pad * h)


def pairwise_distances(std, m: int = DEFAULT_GRID_POINTS,
                       pad: float = GRID_PAD_BANDWIDTHS) -> DistanceMatrix:
    """KDE every standardised sample set on one grid and compare all pairs."""
    if len(std) < 2:
        raise DomainError("need at least two studies")
    lo, hi = shared_grid([s.samples for s in std], pad)
    dens = [kde(s.samples, lo, hi, m).normalized() for s in std]
    k = len(std)
    v = np.zeros((k, k))
    for i, j in itertools.combinations(range(k), 2):
        v[i, j] = v[j, i] = hellinger(dens[i], dens[j])
    return DistanceMatrix(tuple(s.study for s in std), v)


def select_studies(dm: DistanceMatrix, threshold: float, default_study: str = "dog") -> tuple:
    """Studies judged commensurate among exactly three.

    Two or more pairs at or below ``threshold`` keep all three studies, a
    single such pair keeps that pair, and none falls back to
    ``default_study``. The result follows the label order of ``dm``.
    """
    if len(dm.studies) != 3:
        raise UnsupportedCardinalityError("selection is defined for exactly three studies")
    if not 0 < threshold < 1:
        raise DomainError("threshold must lie in (0, 1)")
    if default_study not in dm.studies:
        raise DomainError(f"default study {default_study!r} is not among {dm.studies}")
    close = [pair for pair, d in dm.pairs() if d <= threshold]
    if len(close) >= 2:
        keep = set(dm.studies)
    elif len(close) == 1:
        keep = set(close[0])
    else:
        keep = {default_study}
    return tuple(s for s in dm.studies if s in keep)


def accuracy(labels, distances, threshold: float) -> float:
    """Share of pairs whose prediction ``distance <= threshold`` matches the label."""
    y = np.asarray(labels, dtype=bool).ravel()
    d = np.asarray(distances, dtype=float).ravel()
    if y.size == 0:
        raise DomainError("no labelled pairs")
    if y.size != d.size:
        raise DomainError("labels and distances must align")
    return float(np.mean((d <= threshold) == y))


def threshold_curve(labels, distances, taus=DEFAULT_TAUS) -> list:
    """``(tau, accuracy)`` for every threshold in ``taus``."""
    return [(float(t), accuracy(labels, distances, t)) for t in taus]


def curve_to_csv(curve, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "accuracy"])
    for t, a in curve:
        w.writerow([repr(t), repr(a)])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
