"""Allometric extrapolation of posterior draws and human dose distributions.

Only the clearance and volume medians are scaled between species; ka, the
between-subject SDs and every PD parameter pass through unchanged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .design import WEIGHTS_KG
from .errors import DomainError, MappingError, SamplingError
from .fit.draws import PosteriorDraws
from .pkpd import (DEFAULT_HORIZON_H, EfficacySpec, PopulationPkPd, ToxicitySpec,
                   med_from_peaks, mtd_analytic)

CL_EXPONENT = 0.75
V_EXPONENT = 1.0
DEFAULT_L = 1000
DEFAULT_MED_SUBJECTS = 2000
TARGETS = ("MTD", "MED")


def _weight_ratio(w_from, w_to):
    if not (np.all(np.asarray(w_from) > 0) and np.all(np.asarray(w_to) > 0)):
        raise DomainError("body weights must be positive")
    return np.asarray(w_to, dtype=float) / np.asarray(w_from, dtype=float)


def allometric_cl(cl, w_from, w_to, exponent=CL_EXPONENT):
    """Clearance scaled by the weight ratio to the power 0.75."""
    out = np.asarray(cl, dtype=float) * _weight_ratio(w_from, w_to) ** exponent
    return out[()] if out.ndim == 0 else out


def allometric_v(v, w_from, w_to, exponent=V_EXPONENT):
    """Volume scaled linearly with weight (``exponent`` overrides the power)."""
    out = np.asarray(v, dtype=float) * _weight_ratio(w_from, w_to) ** exponent
    return out[()] if out.ndim == 0 else out


def _weight(species_or_kg, weights):
    if isinstance(species_or_kg, str):
        table = WEIGHTS_KG if weights is None else {**WEIGHTS_KG, **weights}
        try:
            return table[species_or_kg]
        except KeyError:
            raise DomainError(f"no body weight for species {species_or_kg!r}") from None
    return float(species_or_kg)


def extrapolate_draws(post: PosteriorDraws, from_species, to="human", n: int = DEFAULT_L,
                      weights=None, v_exponent: float = V_EXPONENT) -> dict:
    """Thin ``post`` to ``n`` joint draws and map CL and V medians to ``to``.

    Species may be given by name (looked up in ``weights`` or the built-in
    table) or directly as a weight in kg.
    """
    for name in ("mu_cl", "mu_v"):
        if name not in post:
            raise MappingError(f"posterior draws lack {name}")
    w_from, w_to = _weight(from_species, weights), _weight(to, weights)
    table = post.subsample(n)
    table["mu_cl"] = allometric_cl(table["mu_cl"], w_from, w_to)
    table["mu_v"] = allometric_v(table["mu_v"], w_from, w_to, exponent=v_exponent)
    return table


@dataclass(frozen=True)
class DoseDraws:
    """``L`` draws of a human dose of interest (mg) from one study."""

    study: str
    target: str
    samples: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        if self.target not in TARGETS:
            raise DomainError(f"target must be one of {TARGETS}")
        x = np.asarray(self.samples, dtype=float).ravel().copy()
        if x.size < 2 or np.any(~np.isfinite(x)) or np.any(x <= 0):
            raise DomainError("dose draws must be at least two finite positive values")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write(f"# study={self.study} target={self.target} L={len(self)} seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["dose_mg"])
        for v in self.samples:
            w.writerow([repr(float(v))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "DoseDraws":
        text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
        lines = text.splitlines()
        meta = dict(tok.split("=", 1) for tok in lines[0].lstrip("# ").split())
        vals = np.array([float(v) for v in lines[2:] if v])
        seed = None if meta.get("seed") in (None, "None") else int(meta["seed"])
        return cls(meta["study"], meta["target"], vals, seed)


def _require(draws: dict, names):
    missing = [k for k in names if k not in draws]
    if missing:
        raise MappingError(f"draw table lacks {missing}")


def mtd_draws(draws: dict, spec: ToxicitySpec = ToxicitySpec(), study: str = "") -> DoseDraws:
    """Analytic MTD for every (mu_cl, omega_cl) draw."""
    _require(draws, ("mu_cl", "omega_cl"))
    return DoseDraws(study, "MTD", mtd_analytic(draws["mu_cl"], draws["omega_cl"], spec))


def med_draws(draws: dict, spec: EfficacySpec = EfficacySpec(), study: str = "",
              n_subjects: int = DEFAULT_MED_SUBJECTS, horizon: float = DEFAULT_HORIZON_H,
              seed=0, i_max: float = 1.0, chunk: int = 64, rel_tol: float = 1e-3) -> DoseDraws:
    """Monte Carlo MED per draw with common random numbers.

    One ``(n_subjects, 4)`` matrix of standard normals, generated from
    ``seed``, defines the simulated subjects for every draw, so differences
    between draws reflect parameter uncertainty rather than simulation
    noise. Draws are processed in chunks to bound memory.
    """
    from .kernels import peak_unit_effect

    names = ("ka", "mu_cl", "mu_v", "omega_cl", "omega_v",
             "mu_ic50", "mu_ke", "omega_ic50", "omega_ke")
    _require(draws, names)
    if n_subjects < 1000:
        raise DomainError("need at least 1000 simulated subjects")
    z = np.random.default_rng(seed).standard_normal((n_subjects, 4))
    cols = {k: np.asarray(draws[k], dtype=float) for k in names}
    n = cols["mu_cl"].size
    out = np.empty(n)
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        c = {k: v[sl, None] for k, v in cols.items()}
        cl = c["mu_cl"] * np.exp(c["omega_cl"] * z[:, 0])
        v = c["mu_v"] * np.exp(c["omega_v"] * z[:, 1])
        ic50 = c["mu_ic50"] * np.exp(c["omega_ic50"] * z[:, 2])
        ke = c["mu_ke"] * np.exp(c["omega_ke"] * z[:, 3])
        peak = peak_unit_effect(c["ka"], cl, v, ke, horizon)
        for i in range(peak.shape[0]):
            out[start + i] = med_from_peaks(peak[i], ic50[i], i_max, spec, rel_tol=rel_tol)
    return DoseDraws(study, "MED", out, seed if isinstance(seed, int) else None)


def population_from_draw(draws: dict, i: int, i_max: float = 1.0) -> PopulationPkPd:
    """One row of a draw table as population parameters."""
    return PopulationPkPd(
        float(draws["ka"][i]), float(draws["mu_cl"][i]), float(draws["mu_v"][i]),
        float(draws["omega_cl"][i]), float(draws["omega_v"][i]), float(draws["mu_ic50"][i]),
        float(draws["mu_ke"][i]), float(draws["omega_ic50"][i]), float(draws["omega_ke"][i]),
        i_max)


def degenerate_draws(values: dict, n: int = DEFAULT_L) -> dict:
    """Draw table repeating one parameter set ``n`` times."""
    if n < 1:
        raise SamplingError("n must be positive")
    return {k: np.full(n, float(v)) for k, v in values.items()}
