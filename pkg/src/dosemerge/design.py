"""Study designs, scenario truths and synthetic dataset generation.

Doses are given per kg and converted to mg with the species body weight
before entering the concentration model. Sampling times are in fractional
hours.
"""

from __future__ import annotations

import csv
import io
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .pkpd import (EfficacySpec, ToxicitySpec, conc_model, effect_conc_model,
                   logit_biomarker)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

SPECIES = ("mouse", "rat", "dog", "human")
ANIMALS = ("mouse", "rat", "dog")
OUTCOMES = ("concentration", "inhibition")

# Simulated biomarker fractions are kept this far inside (0, 1) so that their
# logit stays finite.
_LEVEL_EPS = 1e-15


@dataclass(frozen=True)
class StudyDesign:
    """Dose levels (mg/kg), group size and sampling times (h) of one study."""

    species: str
    weight_kg: float
    dose_levels: tuple
    n_per_dose: int
    sampling_times: tuple
    destructive: bool = False
    observed_outcomes: tuple = ("concentration",)

    def __post_init__(self):
        object.__setattr__(self, "dose_levels", tuple(float(d) for d in self.dose_levels))
        object.__setattr__(self, "sampling_times", tuple(float(t) for t in self.sampling_times))
        object.__setattr__(self, "observed_outcomes", tuple(self.observed_outcomes))
        if self.species not in SPECIES:
            raise ConfigError(f"unknown species {self.species!r}")
        if not self.weight_kg > 0:
            raise ConfigError("weight_kg must be positive")
        d = np.asarray(self.dose_levels)
        if d.size == 0 or np.any(d <= 0) or np.any(np.diff(d) <= 0):
            raise ConfigError("dose_levels must be positive and strictly increasing")
        if self.n_per_dose < 1:
            raise ConfigError("n_per_dose must be at least 1")
        if not self.sampling_times or min(self.sampling_times) <= 0:
            raise ConfigError("sampling times must be positive")
        if self.destructive and self.n_per_dose % len(self.sampling_times):
            raise ConfigError("destructive designs need n_per_dose divisible by the number of times")
        bad = set(self.observed_outcomes) - set(OUTCOMES)
        if bad or not self.observed_outcomes:
            raise ConfigError(f"invalid outcomes {sorted(bad)}")

    @property
    def n_subjects(self) -> int:
        return len(self.dose_levels) * self.n_per_dose

    def with_outcomes(self, outcomes) -> "StudyDesign":
        return replace(self, observed_outcomes=tuple(outcomes))


@dataclass(frozen=True)
class SpeciesTruth:
    """True population parameters of one species in one scenario.

    PD fields are ``None`` for PK-only truths.
    """

    species: str
    weight_kg: float
    ka: float
    mu_cl: float
    mu_v: float
    omega_cl: float = 0.7
    omega_v: float = 0.7
    sigma_c: float = 0.2
    toxicity: ToxicitySpec = field(default_factory=ToxicitySpec)
    i_max: float | None = 1.0
    mu_ic50: float | None = 0.32
    mu_ke: float | None = 1.6
    omega_ic50: float | None = 0.7
    omega_ke: float | None = 0.7
    sigma_i: float | None = 0.2
    efficacy: EfficacySpec | None = field(default_factory=EfficacySpec)

    def __post_init__(self):
        for name in ("weight_kg", "ka", "mu_cl", "mu_v"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{self.species}: {name} must be positive")
        for name in ("omega_cl", "omega_v", "sigma_c"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{self.species}: {name} must be non-negative")

    @property
    def has_pd(self) -> bool:
        return self.mu_ic50 is not None


@dataclass(frozen=True)
class ScenarioSpec:
    """Truths for every species in one numbered scenario."""

    id: int
    truths: dict

    def __getitem__(self, species) -> SpeciesTruth:
        return self.truths[species]


WEIGHTS_KG = {"mouse": 0.025, "rat": 0.15, "dog": 10.0, "human": 70.0}


def builtin_designs() -> dict:
    """Built-in mouse, rat and dog study designs."""
    return {
        "mouse": StudyDesign("mouse", WEIGHTS_KG["mouse"], (10, 30, 50, 75, 100, 150, 300), 15,
                             (0.25, 0.75, 2, 5, 15), destructive=True),
        "rat": StudyDesign("rat", WEIGHTS_KG["rat"], (10, 30, 50, 100, 300), 8,
                           (0.25, 1, 2, 3.667, 10)),
        "dog": StudyDesign("dog", WEIGHTS_KG["dog"], (2, 10, 30, 50, 300), 6,
                           (0.167, 1.667, 2, 5.5, 15)),
    }


def builtin_scenarios() -> dict:
    """Scenarios 1-4: scenario 1 throughout, except rat CL (2, 4) and rat IC50 (3, 4)."""
    base = {
        "human": SpeciesTruth("human", WEIGHTS_KG["human"], 2.0, 40.0, 100.0),
        "dog": SpeciesTruth("dog", WEIGHTS_KG["dog"], 2.0, 9.3, 14.0),
        "rat": SpeciesTruth("rat", WEIGHTS_KG["rat"], 2.0, 0.40, 0.21),
        "mouse": SpeciesTruth("mouse", WEIGHTS_KG["mouse"], 2.0, 0.11, 0.04),
    }
    rat_changes = {1: {}, 2: {"mu_cl": 1.59}, 3: {"mu_ic50": 2.9},
                   4: {"mu_cl": 1.59, "mu_ic50": 2.9}}
    out = {}
    for sid, change in rat_changes.items():
        truths = dict(base)
        truths["rat"] = replace(base["rat"], **change)
        out[sid] = ScenarioSpec(sid, truths)
    return out


# ---------------------------------------------------------------------------
# scenario files

_TRUTH_KEYS = {f.name for f in fields(SpeciesTruth)} - {"species", "toxicity", "efficacy"}


def scenarios_from_mapping(doc: dict) -> dict:
    """Build scenarios from a parsed config mapping.

    The layout is ``[scenario.<id>.<species>]`` tables whose keys are the
    ``SpeciesTruth`` field names plus ``tau_t, p_t, mu_alpha, omega_alpha``
    and ``tau_e, p_e``.
    """
    table = doc.get("scenario")
    if not isinstance(table, dict) or not table:
        raise ConfigError("config has no [scenario.<id>] tables")
    out = {}
    for sid, species_tables in table.items():
        try:
            sid_int = int(sid)
        except ValueError as exc:
            raise ConfigError(f"scenario id {sid!r} is not an integer") from exc
        truths = {}
        for sp, entry in species_tables.items():
            if sp not in SPECIES:
                raise ConfigError(f"unknown species {sp!r} in scenario {sid}")
            entry = dict(entry)
            tox = ToxicitySpec(**{k: entry.pop(k) for k in ("tau_t", "p_t", "mu_alpha", "omega_alpha")
                                  if k in entry})
            eff = EfficacySpec(**{k: entry.pop(k) for k in ("tau_e", "p_e") if k in entry})
            unknown = set(entry) - _TRUTH_KEYS
            if unknown:
                raise ConfigError(f"unknown keys {sorted(unknown)} for {sp} in scenario {sid}")
            try:
                truths[sp] = SpeciesTruth(species=sp, toxicity=tox, efficacy=eff, **entry)
            except TypeError as exc:
                raise ConfigError(f"incomplete entry for {sp} in scenario {sid}: {exc}") from exc
        out[sid_int] = ScenarioSpec(sid_int, truths)
    return out


def load_scenarios(path) -> dict:
    """Read scenarios from a TOML file."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from exc
    return scenarios_from_mapping(doc)


def scenarios_to_toml(scenarios: dict) -> str:
    """Serialise scenarios in the layout read by :func:`load_scenarios`."""
    lines = []
    for sid in sorted(scenarios):
        for sp, t in scenarios[sid].truths.items():
            lines.append(f"[scenario.{sid}.{sp}]")
            for f in fields(SpeciesTruth):
                if f.name in ("species", "toxicity", "efficacy"):
                    continue
                val = getattr(t, f.name)
                if val is not None:
                    lines.append(f"{f.name} = {float(val)!r}")
            for k in ("tau_t", "p_t", "mu_alpha", "omega_alpha"):
                lines.append(f"{k} = {float(getattr(t.toxicity, k))!r}")
            if t.efficacy is not None:
                for k in ("tau_e", "p_e"):
                    lines.append(f"{k} = {float(getattr(t.efficacy, k))!r}")
            lines.append("")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# datasets

_COLUMNS = ("subject_id", "species", "dose_mgkg", "dose_mg", "time_h", "outcome", "value")


@dataclass(frozen=True)
class Dataset:
    """Long-format observations, one row per (subject, time, outcome)."""

    subject_id: np.ndarray
    species: str
    dose_mgkg: np.ndarray
    dose_mg: np.ndarray
    time_h: np.ndarray
    outcome: np.ndarray
    value: np.ndarray

    def __post_init__(self):
        n = len(self.subject_id)
        arrays = {
            "subject_id": np.asarray(self.subject_id, dtype=np.int64),
            "dose_mgkg": np.asarray(self.dose_mgkg, dtype=float),
            "dose_mg": np.asarray(self.dose_mg, dtype=float),
            "time_h": np.asarray(self.time_h, dtype=float),
            "outcome": np.asarray(self.outcome, dtype=object),
            "value": np.asarray(self.value, dtype=float),
        }
        for name, arr in arrays.items():
            if arr.shape != (n,):
                raise DomainError(f"column {name} has length {arr.size}, expected {n}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        conc = arrays["outcome"] == "concentration"
        inhib = arrays["outcome"] == "inhibition"
        if np.any(~(conc | inhib)):
            raise DomainError("outcome must be 'concentration' or 'inhibition'")
        v = arrays["value"]
        if np.any(v[conc] <= 0):
            raise DomainError("concentrations must be positive")
        if np.any((v[inhib] <= 0) | (v[inhib] >= 1)):
            raise DomainError("inhibition values must lie in (0, 1)")

    def __len__(self):
        return self.subject_id.size

    @property
    def n_subjects(self) -> int:
        return int(np.unique(self.subject_id).size)

    def select(self, outcome: str) -> "Dataset":
        keep = self.outcome == outcome
        return self._take(keep)

    def _take(self, keep) -> "Dataset":
        return Dataset(self.subject_id[keep], self.species, self.dose_mgkg[keep],
                       self.dose_mg[keep], self.time_h[keep], self.outcome[keep],
                       self.value[keep])

    def permuted(self, rng: np.random.Generator) -> "Dataset":
        """Same observations in shuffled row order."""
        return self._take(rng.permutation(len(self)))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_COLUMNS)
        for i in range(len(self)):
            w.writerow([int(self.subject_id[i]), self.species, repr(float(self.dose_mgkg[i])),
                        repr(float(self.dose_mg[i])), repr(float(self.time_h[i])),
                        self.outcome[i], repr(float(self.value[i]))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "Dataset":
        """Read a dataset from a path or from CSV text."""
        text = source if isinstance(source, str) and "\n" in source else Path(source).read_text()
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise DomainError("empty dataset file")
        missing = set(_COLUMNS) - set(rows[0])
        if missing:
            raise DomainError(f"dataset file lacks columns {sorted(missing)}")
        species = {r["species"] for r in rows}
        if len(species) != 1:
            raise DomainError("a dataset holds a single species")
        return cls(
            np.array([int(r["subject_id"]) for r in rows]),
            species.pop(),
            np.array([float(r["dose_mgkg"]) for r in rows]),
            np.array([float(r["dose_mg"]) for r in rows]),
            np.array([float(r["time_h"]) for r in rows]),
            np.array([r["outcome"] for r in rows], dtype=object),
            np.array([float(r["value"]) for r in rows]),
        )


def simulate_dataset(design: StudyDesign, truth: SpeciesTruth, rng: np.random.Generator,
                     outcomes=None, dose_unit: str = "mg/kg") -> Dataset:
    """Simulate one study.

    Each subject gets log-normal CL, V, IC50 and ke (one draw of four
    standard normals per subject, whether or not PD is observed, so the PK
    part of a dataset does not depend on ``outcomes``). Concentrations carry
    multiplicative log-normal error and the biomarker level logit-normal
    error.

    ``dose_unit="mg"`` treats the design doses as absolute amounts.
    """
    outcomes = tuple(design.observed_outcomes if outcomes is None else outcomes)
    if "inhibition" in outcomes and not truth.has_pd:
        raise ConfigError(f"{truth.species} truth has no PD parameters")
    if dose_unit not in ("mg/kg", "mg"):
        raise ConfigError(f"dose_unit must be 'mg/kg' or 'mg', got {dose_unit!r}")
    scale = design.weight_kg if dose_unit == "mg/kg" else 1.0

    n_sub = design.n_subjects
    z = rng.standard_normal((n_sub, 4))
    cl = truth.mu_cl * np.exp(truth.omega_cl * z[:, 0])
    v = truth.mu_v * np.exp(truth.omega_v * z[:, 1])
    if truth.has_pd:
        ic50 = truth.mu_ic50 * np.exp(truth.omega_ic50 * z[:, 2])
        ke = truth.mu_ke * np.exp(truth.omega_ke * z[:, 3])

    n_t = len(design.sampling_times)
    times = np.asarray(design.sampling_times)
    sid, dkg, tt = [], [], []
    for j, d in enumerate(design.dose_levels):
        for m in range(design.n_per_dose):
            s = j * design.n_per_dose + m
            if design.destructive:
                ts = times[[m // (design.n_per_dose // n_t)]]
            else:
                ts = times
            sid.extend([s] * ts.size)
            dkg.extend([d] * ts.size)
            tt.extend(ts)
    sid = np.asarray(sid, dtype=np.int64)
    dkg = np.asarray(dkg)
    tt = np.asarray(tt)
    dmg = dkg * scale

    cols = {k: [] for k in ("sid", "dkg", "dmg", "t", "out", "val")}
    n_obs = sid.size
    per_outcome = {}
    if "concentration" in outcomes:
        c = conc_model(tt, dmg, truth.ka, cl[sid], v[sid])
        per_outcome["concentration"] = c * np.exp(truth.sigma_c * rng.standard_normal(n_obs))
    if "inhibition" in outcomes:
        ce = effect_conc_model(tt, dmg, truth.ka, cl[sid], v[sid], ke[sid])
        logit = logit_biomarker(ce, ic50[sid], truth.i_max)
        noisy = logit + truth.sigma_i * rng.standard_normal(n_obs)
        per_outcome["inhibition"] = np.clip(1.0 / (1.0 + np.exp(-noisy)), _LEVEL_EPS, 1 - _LEVEL_EPS)

    # rows ordered by dose, subject, time, then outcome
    for i in range(n_obs):
        for name in OUTCOMES:
            if name in per_outcome:
                cols["sid"].append(sid[i])
                cols["dkg"].append(dkg[i])
                cols["dmg"].append(dmg[i])
                cols["t"].append(tt[i])
                cols["out"].append(name)
                cols["val"].append(per_outcome[name][i])
    return Dataset(np.asarray(cols["sid"]), design.species, np.asarray(cols["dkg"]),
                   np.asarray(cols["dmg"]), np.asarray(cols["t"]),
                   np.asarray(cols["out"], dtype=object), np.asarray(cols["val"]))
