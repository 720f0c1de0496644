"""Replications of the four-step workflow, campaigns and threshold calibration.

Output layout of a campaign directory::

    replication_<i>.csv   columns: target, item, value
    distances.csv         columns: replication, target, pair, distance
    aggregate.json        summary statistics keyed by target
    threshold_curve.csv   columns: target, tau, accuracy (labelled scenarios only)
"""

from __future__ import annotations

import csv
import io
import json
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .commensurability import (DEFAULT_TAUS, MED_THRESHOLD, MTD_THRESHOLD,
                               pairwise_distances, select_studies, standardize,
                               threshold_curve)
from .design import ANIMALS, builtin_designs, builtin_scenarios, scenarios_from_mapping, simulate_dataset
from .errors import CampaignError, ConfigError, ConvergenceWarning, DosemergeError
from .extrapolate import DEFAULT_L, DEFAULT_MED_SUBJECTS, extrapolate_draws, med_draws, mtd_draws
from .fit.hybrid import HybridConfig, flat_priors, hybrid_fit
from .fit.mcmc import McmcConfig, run_mcmc
from .fit.model import ModelSpec
from .fit.priors import default_priors
from .fit.sequential import sequential_prior
from .merge import merge_dose_draws

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

MAX_FAILED_FRACTION = 0.2
PAIRS = (("mouse", "rat"), ("mouse", "dog"), ("rat", "dog"))
# Seed slots derived per replication: simulate x3, fit x3, MED, spare.
_N_SEEDS = 8

# Whether each pair's extrapolated dose truly agrees; None marks a scenario
# that is not used to calibrate that target.
TRUTH_LABELS = {
    "MTD": {1: (1, 1, 1), 2: (0, 1, 0), 3: (1, 1, 1), 4: (0, 1, 0)},
    "MED": {1: (1, 1, 1), 2: None, 3: (0, 1, 0), 4: (0, 1, 0)},
}


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a campaign's outputs."""

    scenario: int = 1
    reps: int = 50
    seed: int = 2024
    targets: tuple = ("MTD",)
    estimator: str = "bayes"
    mcmc: McmcConfig = McmcConfig()
    thresholds: dict = field(default_factory=lambda: {"MTD": MTD_THRESHOLD, "MED": MED_THRESHOLD})
    default_study: str = "dog"
    mouse_omega: float = 0.7
    n_draws: int = DEFAULT_L
    med_subjects: int = DEFAULT_MED_SUBJECTS
    grid_points: int = 512
    merge_grid_points: int = 2048
    out: str = "out"
    scenarios: dict | None = None
    labels: dict | None = None
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "thresholds", {**{"MTD": MTD_THRESHOLD, "MED": MED_THRESHOLD},
                                                **dict(self.thresholds)})
        if self.reps < 1:
            raise ConfigError("reps must be at least 1")
        if not self.targets or set(self.targets) - {"MTD", "MED"}:
            raise ConfigError("targets must be a non-empty subset of {MTD, MED}")
        if self.estimator not in ("bayes", "hybrid"):
            raise ConfigError("estimator must be 'bayes' or 'hybrid'")
        if any(not 0 < t < 1 for t in self.thresholds.values()):
            raise ConfigError("thresholds must lie in (0, 1)")
        if not self.mouse_omega > 0:
            raise ConfigError("pinned mouse omega must be positive")
        if self.default_study not in ANIMALS:
            raise ConfigError(f"default study must be one of {ANIMALS}")
        if self.n_draws < 2 or self.workers < 1:
            raise ConfigError("n_draws must be at least 2 and workers at least 1")
        if self.scenario not in self.scenario_table():
            raise ConfigError(f"unknown scenario {self.scenario}")

    def scenario_table(self) -> dict:
        return builtin_scenarios() if self.scenarios is None else self.scenarios

    @property
    def needs_pd(self) -> bool:
        return "MED" in self.targets

    def label_for(self, target: str):
        """Per-pair truth labels for this scenario, or None if unlabelled."""
        table = TRUTH_LABELS if self.labels is None else self.labels
        return table.get(target, {}).get(self.scenario)

    def campaign_dir(self) -> Path:
        return Path(self.out) / f"scenario{self.scenario}_{self.estimator}_seed{self.seed}"

    @classmethod
    def from_mapping(cls, doc: dict, **overrides) -> "RunConfig":
        """Build from a parsed TOML document.

        Recognised tables: ``[run]`` (scalar fields plus ``targets``),
        ``[mcmc]`` (sampler fields), ``[thresholds]``, ``[labels.<target>]``
        mapping scenario ids to three 0/1 labels, and ``[scenario.*]``.
        """
        run = dict(doc.get("run", {}))
        kw = {}
        for name in ("scenario", "reps", "seed", "estimator", "default_study", "mouse_omega",
                     "n_draws", "med_subjects", "grid_points", "merge_grid_points", "out", "workers"):
            if name in run:
                kw[name] = run.pop(name)
        if "targets" in run:
            kw["targets"] = tuple(run.pop("targets"))
        if run:
            raise ConfigError(f"unknown [run] keys {sorted(run)}")
        if "mcmc" in doc:
            try:
                kw["mcmc"] = McmcConfig(**doc["mcmc"])
            except TypeError as exc:
                raise ConfigError(f"bad [mcmc] table: {exc}") from exc
        if "thresholds" in doc:
            kw["thresholds"] = dict(doc["thresholds"])
        if "labels" in doc:
            kw["labels"] = {t: {int(s): (None if not v else tuple(int(x) for x in v))
                                for s, v in table.items()}
                            for t, table in doc["labels"].items()}
        if "scenario" in doc:
            kw["scenarios"] = scenarios_from_mapping(doc)
        kw.update(overrides)
        return cls(**kw)

    @classmethod
    def from_toml(cls, path, **overrides) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_mapping(doc, **overrides)


def replication_seeds(master: int, rep: int) -> list:
    """Independent integer seeds of one replication."""
    ss = np.random.SeedSequence(master, spawn_key=(rep,))
    return [int(s) for s in ss.generate_state(_N_SEEDS, dtype=np.uint32)]


@dataclass
class TargetResult:
    distances: dict
    selected: tuple
    merged: dict
    dog_only: dict
    study_means: dict


@dataclass
class ReplicationResult:
    """Outcome of one replication; ``stage`` and ``error`` are set on failure."""

    rep: int
    posterior: dict = field(default_factory=dict)
    targets: dict = field(default_factory=dict)
    stage: str | None = None
    error: str | None = None
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.error is None

    def rows(self) -> list:
        """``(target, item, value)`` rows for the per-replication CSV."""
        out = [("", "status", "ok" if self.ok else "failed")]
        if not self.ok:
            out += [("", "stage", self.stage), ("", "error", self.error)]
        for sp, summ in self.posterior.items():
            for k, v in summ.items():
                out.append(("posterior", f"{sp}.{k}", repr(v)))
        for tgt, res in self.targets.items():
            for (a, b), d in res.distances.items():
                out.append((tgt, f"distance.{a}-{b}", repr(d)))
            out.append((tgt, "selected", "+".join(res.selected)))
            for sp, m in res.study_means.items():
                out.append((tgt, f"study_mean.{sp}", repr(m)))
            for prefix, summ in (("merged", res.merged), ("dog_only", res.dog_only)):
                for k in ("mean", "median", "cri95_lo", "cri95_hi", "cri_length"):
                    out.append((tgt, f"{prefix}.{k}", repr(summ[k])))
        out += [("", "warning", w) for w in self.warnings]
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["target", "item", "value"])
        w.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _summary(mp) -> dict:
    return {"mean": mp.mean, "median": mp.median, "cri95_lo": mp.cri95[0],
            "cri95_hi": mp.cri95[1], "cri_length": mp.cri_length}


def _fit(cfg: RunConfig, species, data, prior, seed, pinned):
    model = ModelSpec.for_species(species, pd=cfg.needs_pd, pinned_omega=pinned)
    if cfg.estimator == "hybrid":
        hc = HybridConfig(n_draws=max(cfg.n_draws, 1000), restarts=1, seed=seed)
        return hybrid_fit(model, flat_priors(prior), data, hc, species=species).draws
    return run_mcmc(model, prior, data, replace(cfg.mcmc, seed=seed), species=species)


class _Stage:
    """Tags any package error raised inside the block with a stage name."""

    def __init__(self, result: ReplicationResult, name: str):
        self.result, self.name = result, name

    def __enter__(self):
        self.result.stage = self.name

    def __exit__(self, et, exc, tb):
        if exc is None:
            return False
        if isinstance(exc, (DosemergeError, ArithmeticError, ValueError, np.linalg.LinAlgError)):
            self.result.error = f"{type(exc).__name__}: {exc}"
            return True
        return False


def run_replication(cfg: RunConfig, rep: int) -> ReplicationResult:
    """Simulate, fit, extrapolate, compare and merge once.

    Errors in any stage are caught and recorded on the result together with
    the stage name.
    """
    res = ReplicationResult(rep)
    seeds = replication_seeds(cfg.seed, rep)
    scen = cfg.scenario_table()[cfg.scenario]
    designs = builtin_designs()
    human = scen["human"]
    outcomes = ("concentration", "inhibition") if cfg.needs_pd else ("concentration",)

    posts = {}
    prior = default_priors()
    prev_species = None
    for i, sp in enumerate(ANIMALS):
        with _Stage(res, f"simulate:{sp}"):
            data = simulate_dataset(designs[sp].with_outcomes(outcomes), scen[sp],
                                    np.random.default_rng(seeds[i]))
        if not res.ok:
            return res
        if prev_species is not None:
            with _Stage(res, f"prior:{sp}"):
                prior = sequential_prior(posts[prev_species], prev_species, sp, default_priors())
            if not res.ok:
                return res
        with _Stage(res, f"fit:{sp}"):
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always", ConvergenceWarning)
                posts[sp] = _fit(cfg, sp, data, prior, seeds[3 + i], cfg.mouse_omega)
            res.warnings += [f"{sp}: {w.message}" for w in caught
                             if issubclass(w.category, ConvergenceWarning)]
        if not res.ok:
            return res
        res.posterior[sp] = {n: posts[sp].mean(n) for n in posts[sp].names}
        prev_species = sp

    for tgt in cfg.targets:
        groups = []
        for sp in ANIMALS:
            with _Stage(res, f"extrapolate:{tgt}:{sp}"):
                table = extrapolate_draws(posts[sp], sp, "human", n=cfg.n_draws)
                if tgt == "MTD":
                    dd = mtd_draws(table, human.toxicity, study=sp)
                else:
                    dd = med_draws(table, human.efficacy, study=sp, n_subjects=cfg.med_subjects,
                                   seed=seeds[6], i_max=human.i_max)
                groups.append(dd)
            if not res.ok:
                return res
        with _Stage(res, f"commensurability:{tgt}"):
            dm = pairwise_distances(standardize(groups), m=cfg.grid_points)
            selected = select_studies(dm, cfg.thresholds[tgt], cfg.default_study)
        if not res.ok:
            return res
        with _Stage(res, f"merge:{tgt}"):
            by_study = {g.study: g for g in groups}
            merged = merge_dose_draws([by_study[s] for s in selected], m=cfg.merge_grid_points)
            dog = merge_dose_draws([by_study[cfg.default_study]], m=cfg.merge_grid_points)
        if not res.ok:
            return res
        res.targets[tgt] = TargetResult(
            {pair: dm[pair] for pair in PAIRS}, selected, _summary(merged), _summary(dog),
            {g.study: float(np.mean(g.samples)) for g in groups})
    res.stage = None
    return res


def _run_one(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def run_replications(cfg: RunConfig) -> list:
    """All replications in index order; worker count does not affect results."""
    jobs = [(cfg, r) for r in range(cfg.reps)]
    if cfg.workers == 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(_run_one, jobs))


def _mean_sd(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return None, None
    return float(x.mean()), (float(x.std(ddof=1)) if x.size > 1 else 0.0)


def aggregate(results, cfg: RunConfig) -> dict:
    """Deterministic fold of replication results ordered by index."""
    ok = [r for r in results if r.ok]
    report = {
        "scenario": cfg.scenario, "estimator": cfg.estimator, "seed": cfg.seed,
        "reps": len(results), "n_ok": len(ok), "n_failed": len(results) - len(ok),
        "failures": [{"rep": r.rep, "stage": r.stage, "error": r.error} for r in results if not r.ok],
        "n_convergence_warnings": sum(len(r.warnings) for r in results),
        "targets": {},
    }
    for tgt in cfg.targets:
        rs = [r.targets[tgt] for r in ok]
        est, est_sd = _mean_sd([t.merged["mean"] for t in rs])
        ln, ln_sd = _mean_sd([t.merged["cri_length"] for t in rs])
        dog, dog_sd = _mean_sd([t.dog_only["mean"] for t in rs])
        dln, dln_sd = _mean_sd([t.dog_only["cri_length"] for t in rs])
        freq = {}
        for t in rs:
            key = "+".join(t.selected)
            freq[key] = freq.get(key, 0) + 1
        dist = {}
        for a, b in PAIRS:
            d = np.array([t.distances[(a, b)] for t in rs])
            dist[f"{a}-{b}"] = ({q: float(np.quantile(d, q / 100)) for q in (5, 25, 50, 75, 95)}
                                if d.size else {})
        narrower = [t.merged["cri_length"] < t.dog_only["cri_length"] for t in rs]
        report["targets"][tgt] = {
            "threshold": cfg.thresholds[tgt],
            "merged_estimate_mean": est, "merged_estimate_sd": est_sd,
            "merged_cri_length_mean": ln, "merged_cri_length_sd": ln_sd,
            "dog_only_estimate_mean": dog, "dog_only_estimate_sd": dog_sd,
            "dog_only_cri_length_mean": dln, "dog_only_cri_length_sd": dln_sd,
            "fraction_merged_narrower": float(np.mean(narrower)) if narrower else None,
            "selection_frequency": dict(sorted(freq.items())),
            "distance_quantiles": dist,
            "labels": cfg.label_for(tgt),
        }
    return report


def labelled_pairs(results, cfg: RunConfig, target: str):
    """Stacked (labels, distances) of all successful replications."""
    lab = cfg.label_for(target)
    if lab is None:
        return np.zeros(0, dtype=int), np.zeros(0)
    ys, ds = [], []
    for r in results:
        if r.ok and target in r.targets:
            for y, pair in zip(lab, PAIRS):
                ys.append(y)
                ds.append(r.targets[target].distances[pair])
    return np.array(ys, dtype=int), np.array(ds, dtype=float)


def _write_curve(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "tau", "accuracy"])
        for tgt, tau, acc in rows:
            w.writerow([tgt, repr(tau), repr(acc)])


def write_campaign(results, cfg: RunConfig, report: dict, directory=None) -> Path:
    """Write the campaign files; returns the directory."""
    d = Path(directory) if directory is not None else cfg.campaign_dir()
    d.mkdir(parents=True, exist_ok=True)
    for r in results:
        r.to_csv(d / f"replication_{r.rep}.csv")
    with open(d / "distances.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["replication", "target", "pair", "distance"])
        for r in results:
            for tgt, t in r.targets.items():
                for (a, b), dist in t.distances.items():
                    w.writerow([r.rep, tgt, f"{a}-{b}", repr(dist)])
    (d / "aggregate.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    rows = []
    for tgt in cfg.targets:
        y, dist = labelled_pairs(results, cfg, tgt)
        if y.size:
            rows += [(tgt, tau, acc) for tau, acc in threshold_curve(y, dist, DEFAULT_TAUS)]
    if rows:
        _write_curve(rows, d / "threshold_curve.csv")
    return d


def run_campaign(cfg: RunConfig, write: bool = True):
    """Run ``cfg.reps`` replications, write outputs and return the aggregate.

    Raises
    ------
    CampaignError
        When more than 20% of replications fail; outputs are written first.
    """
    results = run_replications(cfg)
    report = aggregate(results, cfg)
    if write:
        write_campaign(results, cfg, report)
    if report["n_failed"] > MAX_FAILED_FRACTION * len(results):
        raise CampaignError(f"{report['n_failed']} of {len(results)} replications failed: "
                            f"{report['failures'][:5]}")
    return report, results


def calibrate_threshold(cfg: RunConfig, scenarios=(1, 2), target: str = "MTD",
                        taus=DEFAULT_TAUS, campaigns=None):
    """Pooled accuracy curve over labelled scenarios.

    ``campaigns`` may map scenario ids to already computed replication
    results; missing scenarios are run with ``cfg``.
    """
    campaigns = {} if campaigns is None else dict(campaigns)
    ys, ds = [], []
    for sid in scenarios:
        table = (TRUTH_LABELS if cfg.labels is None else cfg.labels).get(target, {})
        if sid not in table:
            raise ConfigError(f"no truth labels for scenario {sid} and target {target}")
        if table[sid] is None:
            continue
        scfg = replace(cfg, scenario=sid, targets=tuple(sorted(set(cfg.targets) | {target})))
        if sid not in campaigns:
            campaigns[sid] = run_replications(scfg)
        y, d = labelled_pairs(campaigns[sid], scfg, target)
        ys.append(y)
        ds.append(d)
    if not ys or sum(y.size for y in ys) == 0:
        raise ConfigError(f"no labelled pairs for target {target}")
    return threshold_curve(np.concatenate(ys), np.concatenate(ds), taus)


def config_dict(cfg: RunConfig) -> dict:
    """JSON-friendly view of a configuration (scenario tables omitted)."""
    d = asdict(cfg)
    d.pop("scenarios")
    return d
