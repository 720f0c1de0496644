"""Acceptance criteria 1-10, each printing one PASS/FAIL line.

Criterion 8 runs at desk scale (R = 50 per scenario, 1000 burn-in + 2000
kept iterations x 3 chains); it is a behavioural envelope, not a
reproduction of a 500-replication study.
"""

import json
import os
import subprocess
import sys
import time
import warnings

import numpy as np
import pytest
from scipy import stats

from dosemerge.commensurability import (DistanceMatrix, accuracy, hellinger, pairwise_distances,
                                        select_studies, standardize)
from dosemerge.design import builtin_designs, builtin_scenarios, simulate_dataset
from dosemerge.errors import ConvergenceWarning
from dosemerge.extrapolate import (DoseDraws, allometric_cl, allometric_v, degenerate_draws,
                                   med_draws, mtd_draws)
from dosemerge.fit.draws import PosteriorDraws
from dosemerge.fit.mcmc import McmcConfig, run_mcmc, sample_density
from dosemerge.fit.model import ModelSpec
from dosemerge.fit.priors import default_priors
from dosemerge.fit.sequential import sequential_prior
from dosemerge.merge import beta_merge, merge
from dosemerge.pipeline import RunConfig, labelled_pairs, run_replications
from dosemerge.stats import GridDensity

from oracles import beta_product_density

CAMPAIGN_REPS = 50
CAMPAIGN_MCMC = McmcConfig()  # 1000 burn-in + 2000 kept x 3 chains


@pytest.fixture
def report(capsys):
    def _report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail
    return _report


def _truth_draws(sid, species, v_exponent=1.0, n=2):
    t = builtin_scenarios()[sid][species]
    vals = dict(ka=t.ka, mu_cl=t.mu_cl, mu_v=t.mu_v, omega_cl=t.omega_cl, omega_v=t.omega_v,
                mu_ic50=t.mu_ic50, mu_ke=t.mu_ke, omega_ic50=t.omega_ic50, omega_ke=t.omega_ke)
    d = degenerate_draws(vals, n=n)
    if species != "human":
        d["mu_cl"] = allometric_cl(d["mu_cl"], t.weight_kg, 70.0)
        d["mu_v"] = allometric_v(d["mu_v"], t.weight_kg, 70.0, exponent=v_exponent)
    return d


def test_criterion_1_extrapolated_mtd(report):
    start = time.perf_counter()
    expect = {(1, "human"): 502, (1, "dog"): 502, (1, "rat"): 504, (2, "rat"): 2002,
              (1, "mouse"): 531}
    got = {k: float(mtd_draws(_truth_draws(*k)).samples[0]) for k in expect}
    elapsed = time.perf_counter() - start
    ok = all(abs(got[k] - v) <= 1 for k, v in expect.items()) and elapsed < 1
    detail = ", ".join(f"{sp} sc{s} {got[(s, sp)]:.1f}/{v}" for (s, sp), v in expect.items())
    report(1, ok, f"{detail}; {elapsed:.3f} s")


def test_criterion_2_extrapolated_med(report):
    # Volumes use a 0.75 weight exponent for this table (see the decisions ledger).
    start = time.perf_counter()
    expect = {(1, "human"): 89, (1, "dog"): 67, (1, "mouse"): 41, (1, "rat"): 43,
              (2, "rat"): 129, (3, "rat"): 380, (4, "rat"): 1172}
    got = {k: float(med_draws(_truth_draws(*k, v_exponent=0.75), n_subjects=10_000,
                              seed=20240).samples[0]) for k in expect}
    elapsed = time.perf_counter() - start
    ok = all(abs(got[k] / v - 1) <= 0.05 for k, v in expect.items()) and elapsed < 120
    detail = ", ".join(f"{sp} sc{s} {got[(s, sp)]:.1f}/{v}" for (s, sp), v in expect.items())
    report(2, ok, f"{detail}; {elapsed:.1f} s")


def test_criterion_3_beta_merge(report):
    start = time.perf_counter()
    a, b, counts = 2.0, 3.0, [(3, 12), (5, 14), (2, 9)]
    m = 2048
    x = (np.arange(m) + 0.5) / m
    dens = [GridDensity(0.0, 1.0, stats.beta.pdf(x, a + k, b + n - k)) for k, n in counts]
    merged = merge(dens, ["s1", "s2", "s3"])
    alpha, beta = beta_merge(a, b, counts)
    err = float(np.max(np.abs(merged.density.values - stats.beta.pdf(x, alpha, beta))))
    oracle_err = float(np.max(np.abs(merged.density.values - beta_product_density(a, b, counts, x))))
    # flat prior: merging equals one sequential conjugate update on the pooled data
    seq = (1.0, 1.0)
    for k, n in counts:
        seq = (seq[0] + k, seq[1] + n - k)
    identity = beta_merge(1, 1, counts) == seq
    elapsed = time.perf_counter() - start
    ok = err <= 1e-3 and identity and elapsed < 1
    report(3, ok, f"max abs density error {err:.2e} (oracle {oracle_err:.1e}); "
                  f"a=b=1 identity {identity}; {elapsed:.3f} s")


def test_criterion_4_standardization(report):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(20):
        k = rng.integers(2, 5)
        group = [DoseDraws(f"s{i}", "MTD", rng.lognormal(rng.normal(3, 3), rng.uniform(0.05, 3),
                                                         rng.integers(10, 2000)))
                 for i in range(k)]
        std = standardize(group)
        s_max = max(np.std(np.log(g.samples), ddof=1) for g in group)
        for g, s in zip(group, std):
            worst = max(worst, abs(s.samples.mean() - np.log(g.samples).mean()),
                        abs(np.std(s.samples, ddof=1) - s_max))
    report(4, worst <= 1e-9, f"largest deviation {worst:.2e}")


def test_criterion_5_hellinger(report):
    def normal(mu, m):
        return GridDensity.from_pdf(lambda x: stats.norm.pdf(x, mu, 1), -8.0, 9.0, m)

    same = hellinger(normal(0, 512), normal(0, 512))
    h = hellinger(normal(0, 512), normal(1, 512))
    rng = np.random.default_rng(5)
    worst = 0.0
    cases = [(0.0, 1.0, 1.0, 1.0), (0.0, 0.5, 0.3, 0.9), (6.0, 0.4, 6.2, 0.2), (2.0, 1.0, 5.0, 1.0)]
    for m1, s1, m2, s2 in cases:
        group = [DoseDraws("a", "MTD", np.exp(rng.normal(m1, s1, 1000))),
                 DoseDraws("b", "MTD", np.exp(rng.normal(m2, s2, 1000)))]
        std = standardize(group)
        coarse = pairwise_distances(std, m=512)[("a", "b")]
        fine = pairwise_distances(std, m=4096)[("a", "b")]
        worst = max(worst, abs(coarse - fine))
    ok = same <= 1e-9 and abs(h - 0.3428) <= 0.005 and worst <= 0.01
    report(5, ok, f"identical {same:.1e}; N(0,1) vs N(1,1) {h:.4f}; m=512 vs 4096 max {worst:.2e}")


def test_criterion_6_selection(report):
    names = ("mouse", "rat", "dog")

    def dm(mr, md, rd):
        return DistanceMatrix.from_pairs(names, {("mouse", "rat"): mr, ("mouse", "dog"): md,
                                                 ("rat", "dog"): rd})

    got = [select_studies(dm(0.51, 0.36, 0.19), 0.5),
           select_studies(dm(1.0, 0.36, 1.0), 0.5),
           select_studies(dm(0.7, 0.8, 0.9), 0.5)]
    expect = [("mouse", "rat", "dog"), ("mouse", "dog"), ("dog",)]
    report(6, got == expect, f"{got}")


def test_criterion_7_sequential_prior(report):
    post = PosteriorDraws(("mu_cl", "mu_v"), np.tile([0.0961, 0.0508], (1, 4, 1)), species="mouse")
    pri = sequential_prior(post, "mouse", "rat", default_priors())
    cl, v = np.exp(pri["mu_cl"].meanlog), np.exp(pri["mu_v"].meanlog)
    ok = abs(cl - 0.368) <= 0.001 and abs(v - 0.305) <= 0.001
    report(7, ok, f"rat prior centres {cl:.4f}, {v:.4f}")


@pytest.fixture(scope="module")
def campaigns():
    out = {}
    for sid in (1, 2):
        cfg = RunConfig(scenario=sid, reps=CAMPAIGN_REPS, mcmc=CAMPAIGN_MCMC, out="unused")
        out[sid] = (cfg, run_replications(cfg))
    return out


def _mtd(results):
    return [r.targets["MTD"] for r in results if r.ok]


def test_criterion_8a_merged_mtd(campaigns, report):
    cfg, res = campaigns[1]
    est = np.mean([t.merged["mean"] for t in _mtd(res)])
    n_ok = len(_mtd(res))
    report("8a", 465 <= est <= 565 and n_ok >= 0.8 * cfg.reps,
           f"scenario 1 mean merged MTD {est:.1f} mg over {n_ok} replications")


def test_criterion_8b_rat_excluded(campaigns, report):
    _, res = campaigns[2]
    rs = _mtd(res)
    frac = np.mean(["rat" not in t.selected for t in rs])
    report("8b", frac >= 0.9, f"rat excluded in {frac:.0%} of {len(rs)} scenario 2 replications")


def test_criterion_8c_narrower_interval(campaigns, report):
    _, res = campaigns[1]
    rs = _mtd(res)
    frac = np.mean([t.merged["cri_length"] < t.dog_only["cri_length"] for t in rs])
    merged_len = np.mean([t.merged["cri_length"] for t in rs])
    dog_len = np.mean([t.dog_only["cri_length"] for t in rs])
    report("8c", frac >= 0.9, f"merged CrI95 narrower in {frac:.0%} "
                              f"(mean {merged_len:.0f} vs dog-only {dog_len:.0f} mg)")


def test_criterion_8d_threshold_accuracy(campaigns, report):
    ys, ds = [], []
    for sid in (1, 2):
        cfg, res = campaigns[sid]
        y, d = labelled_pairs(res, cfg, "MTD")
        ys.append(y)
        ds.append(d)
    y, d = np.concatenate(ys), np.concatenate(ds)
    acc = accuracy(y, d, 0.5)
    per = {tau: accuracy(y, d, tau) for tau in (0.2, 0.3, 0.4, 0.5)}
    report("8d", acc >= 0.9, f"pooled accuracy at tau=0.5 {acc:.3f} over {y.size} pairs; "
                             + ", ".join(f"{t}: {a:.3f}" for t, a in per.items()))


def test_criterion_9_sampler(report):
    rng = np.random.default_rng(11)
    y = rng.normal(5.0, 1.0, 20)
    post_var = 1 / (1 / 100 + y.size)
    post_mean = post_var * y.sum()

    def logp(x):
        return -0.5 * x[0] ** 2 / 100 - 0.5 * np.sum((y - x[0]) ** 2)

    toy = sample_density(logp, [np.array([0.0]), np.array([3.0]), np.array([-3.0])],
                         McmcConfig(chains=3, burn_in=1000, iters=3000, seed=9), names=["theta"])
    x = toy.column("theta")
    mean_err = abs(x.mean() / post_mean - 1)
    sd_err = abs(x.std() / np.sqrt(post_var) - 1)
    rhat = toy.rhat["theta"]

    ds = simulate_dataset(builtin_designs()["rat"], builtin_scenarios()[1]["rat"],
                          np.random.default_rng(2024))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        rat = run_mcmc(ModelSpec.for_species("rat"), default_priors(), ds, McmcConfig(seed=1))
    mu_cl = rat.mean("mu_cl")
    ok = mean_err <= 0.02 and sd_err <= 0.05 and rhat <= 1.01 and abs(mu_cl - 0.406) <= 0.14
    report(9, ok, f"toy mean err {mean_err:.2%}, SD err {sd_err:.2%}, Rhat {rhat:.4f}; "
                  f"rat mu_cl {mu_cl:.3f} (0.406 +/- 0.14)")


def test_criterion_10_determinism(tmp_path, report):
    base = [sys.executable, "-m", "dosemerge", "campaign", "--reps", "2", "--chains", "2",
            "--burn-in", "100", "--iters", "500", "--target", "MTD", "--target", "MED",
            "--seed", "77"]
    runs = {"w1": (["--workers", "1"], "1"), "w2": (["--workers", "2"], "4"),
            "w1b": (["--workers", "1"], "2")}
    dirs = {}
    for name, (extra, threads) in runs.items():
        env = {**os.environ, "OMP_NUM_THREADS": threads, "OPENBLAS_NUM_THREADS": threads}
        subprocess.run(base + extra + ["--out", str(tmp_path / name)], check=True,
                       capture_output=True, env=env)
        dirs[name] = tmp_path / name / "scenario1_bayes_seed77"
    files = sorted(p.name for p in dirs["w1"].iterdir() if p.name != "config.json")
    mismatched = [f"{n}:{f}" for n in ("w2", "w1b") for f in files
                  if (dirs[n] / f).read_bytes() != (dirs["w1"] / f).read_bytes()]
    cfgs = [json.loads((d / "config.json").read_text()) for d in dirs.values()]
    for c in cfgs:
        c.pop("out"), c.pop("workers")
    ok = not mismatched and all(c == cfgs[0] for c in cfgs)
    report(10, ok, f"{len(files)} output files compared across 3 runs (1-2 workers, 1-4 BLAS threads); "
                   f"mismatches {mismatched or 'none'}")
