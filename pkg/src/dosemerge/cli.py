"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 campaign error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .design import ANIMALS, Dataset, builtin_designs, simulate_dataset
from .errors import CampaignError, ConfigError, DosemergeError
from .fit.draws import PosteriorDraws
from .fit.hybrid import HybridConfig, flat_priors, hybrid_fit
from .fit.mcmc import McmcConfig, run_mcmc
from .fit.model import ModelSpec
from .fit.priors import default_priors
from .pipeline import (RunConfig, aggregate, calibrate_threshold, config_dict, replication_seeds,
                       run_campaign, run_replication, run_replications, write_campaign)
from .commensurability import curve_to_csv

EXIT_OK, EXIT_CONFIG, EXIT_CAMPAIGN = 0, 2, 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--scenario", type=int)
    p.add_argument("--target", action="append", choices=("MTD", "MED"),
                   help="dose target (repeatable, default MTD)")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--estimator", choices=("bayes", "hybrid"))
    p.add_argument("--threshold", type=float, help="threshold for every requested target")
    p.add_argument("--omega-v", type=float, choices=(0.4, 0.7, 1.0),
                   help="pinned mouse between-subject SDs")
    p.add_argument("--paper-scale", action="store_true",
                   help="full scale: 500 replications and 3000+6000 iterations per chain")
    p.add_argument("--chains", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out")


def build_config(args) -> RunConfig:
    """Merge the config file (if any), the full-scale preset and explicit flags."""
    cfg = RunConfig.from_toml(args.config) if args.config else RunConfig()
    kw = {}
    mcmc = cfg.mcmc
    if args.paper_scale:
        kw["reps"] = 500
        full = McmcConfig.full_scale()
        mcmc = replace(mcmc, burn_in=full.burn_in, iters=full.iters)
    for flag, name in (("chains", "chains"), ("burn_in", "burn_in"), ("iters", "iters")):
        val = getattr(args, flag)
        if val is not None:
            mcmc = replace(mcmc, **{name: val})
    kw["mcmc"] = mcmc
    for flag, name in (("scenario", "scenario"), ("seed", "seed"), ("reps", "reps"),
                       ("estimator", "estimator"), ("omega_v", "mouse_omega"),
                       ("out", "out"), ("workers", "workers")):
        val = getattr(args, flag, None)
        if val is not None:
            kw[name] = val
    if args.target:
        kw["targets"] = tuple(dict.fromkeys(args.target))
    if args.threshold is not None:
        targets = kw.get("targets", cfg.targets)
        kw["thresholds"] = {**cfg.thresholds, **{t: args.threshold for t in targets}}
    return replace(cfg, **kw)


def cmd_simulate(args) -> int:
    cfg = build_config(args)
    out = Path(args.out or "out") / f"data_scenario{cfg.scenario}_seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    seeds = replication_seeds(cfg.seed, args.rep)
    scen = cfg.scenario_table()[cfg.scenario]
    outcomes = ("concentration", "inhibition") if cfg.needs_pd else ("concentration",)
    designs = builtin_designs()
    for i, sp in enumerate(ANIMALS):
        ds = simulate_dataset(designs[sp].with_outcomes(outcomes), scen[sp],
                              np.random.default_rng(seeds[i]))
        ds.to_csv(out / f"{sp}.csv")
        print(f"{sp}: {len(ds)} rows -> {out / (sp + '.csv')}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = build_config(args)
    data = Dataset.from_csv(args.data)
    species = args.species or data.species
    if species not in ANIMALS:
        raise ConfigError(f"unknown species {species!r}")
    pd = "inhibition" in set(data.outcome)
    model = ModelSpec.for_species(species, pd=pd, pinned_omega=cfg.mouse_omega)
    priors = default_priors()
    if cfg.estimator == "hybrid":
        post = hybrid_fit(model, flat_priors(priors), data,
                          HybridConfig(n_draws=cfg.n_draws, seed=cfg.seed), species=species).draws
    else:
        post = run_mcmc(model, priors, data, replace(cfg.mcmc, seed=cfg.seed), species=species)
    out = Path(args.out or f"draws_{species}.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    post.to_csv(out)
    print(json.dumps(post.summary(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = build_config(args)
    res = run_replication(cfg, args.rep)
    out = cfg.campaign_dir()
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / f"replication_{args.rep}.csv")
    report = aggregate([res], cfg)
    print(json.dumps(report, indent=2, sort_keys=True))
    if not res.ok:
        print(f"replication failed at {res.stage}: {res.error}", file=sys.stderr)
        return EXIT_CAMPAIGN
    return EXIT_OK


def cmd_campaign(args) -> int:
    cfg = build_config(args)
    (cfg.campaign_dir()).mkdir(parents=True, exist_ok=True)
    (cfg.campaign_dir() / "config.json").write_text(
        json.dumps(config_dict(cfg), indent=2, sort_keys=True, default=str) + "\n")
    report, _ = run_campaign(cfg)
    print(json.dumps(report["targets"], indent=2, sort_keys=True))
    print(f"outputs in {cfg.campaign_dir()}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = build_config(args)
    targets = cfg.targets
    out = Path(cfg.out) / f"calibration_seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    campaigns = {}
    lines = ["target,tau,accuracy"]
    for tgt in targets:
        scen = args.scenarios or ([1, 2] if tgt == "MTD" else [1, 3, 4])
        tcfg = replace(cfg, targets=targets)
        for sid in scen:
            if sid not in campaigns:
                scfg = replace(tcfg, scenario=sid)
                results = run_replications(scfg)
                write_campaign(results, scfg, aggregate(results, scfg), out / f"scenario{sid}")
                campaigns[sid] = results
        curve = calibrate_threshold(tcfg, scen, tgt, campaigns=campaigns)
        lines += [f"{tgt},{tau!r},{acc!r}" for tau, acc in curve]
    (out / "threshold_curve.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dosemerge",
                                     description="Merge preclinical dose predictions for first-in-human trials.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the three animal datasets")
    _common(p)
    p.add_argument("--rep", type=int, default=0, help="replication index for seed derivation")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit one study and write posterior draws")
    _common(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--species", choices=ANIMALS)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("pipeline", help="run one replication of the workflow")
    _common(p)
    p.add_argument("--rep", type=int, default=0)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("campaign", help="run R replications and aggregate")
    _common(p)
    p.set_defaults(func=cmd_campaign)

    p = sub.add_parser("calibrate-threshold", help="accuracy curve over labelled scenarios")
    _common(p)
    p.add_argument("--scenarios", type=int, nargs="+")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CampaignError as exc:
        print(f"campaign error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN
    except DosemergeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAMPAIGN


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
