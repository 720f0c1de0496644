import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dosemerge.commensurability import (DistanceMatrix, accuracy, hellinger, pairwise_distances,
                                        select_studies, standardize)
from dosemerge.errors import DomainError
from dosemerge.extrapolate import DoseDraws, allometric_cl, allometric_v
from dosemerge.merge import beta_merge, grid_quantile, product_density
from dosemerge.pkpd import ToxicitySpec, exp_diff, mtd_analytic, prob_toxicity
from dosemerge.stats import GridDensity

settings.register_profile("dosemerge", max_examples=60, deadline=None)
settings.load_profile("dosemerge")

pos = st.floats(1e-3, 1e3)
unit = st.floats(0.0, 1.0)
names = ("mouse", "rat", "dog")


def densities(m=32):
    return st.lists(st.floats(0.0, 10.0), min_size=m, max_size=m).filter(lambda v: sum(v) > 1e-3)


@given(densities(), densities())
def test_hellinger_is_a_bounded_symmetric_distance(p, q):
    gp = GridDensity(0.0, 1.0, np.array(p)).normalized()
    gq = GridDensity(0.0, 1.0, np.array(q)).normalized()
    h = hellinger(gp, gq)
    assert 0.0 <= h <= 1.0
    assert h == hellinger(gq, gp)
    assert hellinger(gp, gp) == 0.0


@given(st.integers(0, 2 ** 32 - 1), st.lists(st.tuples(st.floats(-3, 8), st.floats(0.05, 2.0)),
                                             min_size=2, max_size=4), st.floats(1e-3, 1e3))
def test_standardize_preserves_means_and_ignores_units(seed, specs, unit_scale):
    rng = np.random.default_rng(seed)
    group = [DoseDraws(f"s{i}", "MTD", rng.lognormal(m, s, 200)) for i, (m, s) in enumerate(specs)]
    std = standardize(group)
    s_max = max(s.s_k for s in std)
    for dd, s in zip(group, std):
        assert np.isclose(s.samples.mean(), np.log(dd.samples).mean(), atol=1e-9)
        assert np.isclose(np.std(s.samples, ddof=1), s_max, rtol=1e-9)
    rescaled = standardize([DoseDraws(d.study, d.target, d.samples * unit_scale) for d in group])
    for a, b in zip(std, rescaled):
        assert np.isclose(b.s_k, a.s_k, rtol=1e-9)
        assert np.allclose(b.samples - a.samples, np.log(unit_scale), atol=1e-8)


@settings(max_examples=15)
@given(st.integers(0, 2 ** 32 - 1))
def test_distances_respect_label_order(seed):
    rng = np.random.default_rng(seed)
    group = [DoseDraws(n, "MTD", rng.lognormal(rng.normal(6, 0.5), 0.4, 300)) for n in names]
    dm = pairwise_distances(standardize(group), m=128)
    rev = pairwise_distances(standardize(group[::-1]), m=128)
    for a, b in itertools.combinations(names, 2):
        assert np.isclose(dm[(a, b)], rev[(b, a)], atol=1e-12)


@given(unit, unit, unit, st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_selection_rule_invariants(d1, d2, d3, t1, t2):
    dist = {("mouse", "rat"): d1, ("mouse", "dog"): d2, ("rat", "dog"): d3}
    lo, hi = sorted((t1, t2))
    base = DistanceMatrix.from_pairs(names, dist)
    sel = select_studies(base, lo)
    assert sel and set(sel) <= set(names)
    assert len(sel) != 1 or sel == ("dog",)
    assert len(select_studies(base, hi)) >= len(sel)
    for perm in itertools.permutations(names):
        assert set(select_studies(DistanceMatrix.from_pairs(perm, dist), lo)) == set(sel)


@given(densities(), densities(), densities())
def test_product_is_normalised_and_commutative(p, q, r):
    ds = [GridDensity(0.0, 2.0, np.array(v) + 1e-3) for v in (p, q, r)]
    a = product_density(ds)
    b = product_density(ds[::-1])
    assert np.isclose(a.integral(), 1.0, rtol=1e-12)
    assert np.allclose(a.values, b.values, rtol=1e-10, atol=1e-14)


@given(densities(), st.lists(unit, min_size=2, max_size=6))
def test_grid_quantile_monotone_and_in_range(p, probs):
    d = GridDensity(-1.0, 3.0, np.array(p))
    qs = grid_quantile(d, sorted(probs))
    assert np.all(np.diff(qs) >= -1e-12)
    assert np.all((qs >= -1.0) & (qs <= 3.0))


@given(st.floats(0.3, 5), st.floats(0.3, 5),
       st.lists(st.tuples(st.integers(0, 20), st.integers(0, 20)).map(lambda t: (min(t), max(t))),
                min_size=1, max_size=4))
def test_beta_merge_matches_grid_product(a, b, counts):
    counts = [(x, n) for x, n in counts if n > 0] or [(1, 2)]
    from scipy import stats
    m = 4096
    x = (np.arange(m) + 0.5) / m
    dens = [GridDensity(0.0, 1.0, stats.beta.pdf(x, a + k, b + n - k)) for k, n in counts]
    k = len(counts)
    raw_a = k * a - k + 1 + sum(x for x, _ in counts)
    raw_b = k * b - k + 1 + sum(n - x for x, n in counts)
    if raw_a <= 0 or raw_b <= 0:
        # the product is not integrable at an endpoint
        with pytest.raises(DomainError):
            beta_merge(a, b, counts)
        return
    alpha, beta = beta_merge(a, b, counts)
    if alpha < 1.5 or beta < 1.5:
        return  # unbounded endpoint densities are not resolved by a midpoint grid
    merged = product_density(dens)
    mean = merged.step * np.sum(x * merged.values)
    assert np.isclose(mean, alpha / (alpha + beta), atol=2e-4)


@given(pos, pos, pos, st.floats(0.3, 1.2))
def test_allometric_round_trip(x, w1, w2, exponent):
    assert np.isclose(allometric_cl(allometric_cl(x, w1, w2), w2, w1), x, rtol=1e-12)
    assert np.isclose(allometric_v(allometric_v(x, w1, w2, exponent), w2, w1, exponent), x,
                      rtol=1e-12)


@given(pos, st.floats(0.05, 2.0), st.floats(0.01, 0.99))
def test_mtd_hits_target_probability(mu_cl, omega, p_t):
    spec = ToxicitySpec(p_t=p_t)
    d = mtd_analytic(mu_cl, omega, spec)
    assert np.isclose(prob_toxicity(d, mu_cl, omega, spec), p_t, rtol=1e-9, atol=1e-12)
    assert mtd_analytic(2 * mu_cl, omega, spec) > d


@given(st.floats(0.01, 10), st.floats(-1e-7, 1e-7), st.floats(0.0, 50))
def test_exp_diff_continuous_near_equal_rates(a, rel, t):
    b = a * (1 + rel)
    u = (b - a) * t
    series = t * np.exp(-a * t) * (1 - u / 2 + u * u / 6)
    assert np.isclose(exp_diff(a, b, t), series, rtol=1e-9, atol=1e-300)
    assert exp_diff(a, b, t) == exp_diff(b, a, t)


@given(st.lists(st.booleans(), min_size=1, max_size=30), st.data())
def test_accuracy_bounds_and_complement(labels, data):
    d = data.draw(st.lists(unit, min_size=len(labels), max_size=len(labels)))
    acc = accuracy(labels, d, 0.5)
    assert 0.0 <= acc <= 1.0
    assert np.isclose(acc + accuracy([not y for y in labels], d, 0.5), 1.0)
