import itertools

import numpy as np
import pytest

from dosemerge.commensurability import (DEFAULT_TAUS, DistanceMatrix, accuracy, curve_to_csv,
                                        hellinger, pairwise_distances, select_studies,
                                        standardize, threshold_curve)
from dosemerge.errors import (DegenerateDistributionError, DomainError, GridError,
                              UnsupportedCardinalityError)
from dosemerge.extrapolate import DoseDraws
from dosemerge.stats import GridDensity

from oracles import gaussian_hellinger

# Frozen from oracles.gaussian_hellinger(0, 1, 1, 1).
H_UNIT_SHIFT = 0.3427872480349942


def _group(rng, specs, n=1000):
    return [DoseDraws(name, "MTD", rng.lognormal(m, s, n)) for name, m, s in specs]


def test_standardize_moments(rng):
    g = _group(rng, [("mouse", 6.2, 0.3), ("rat", 6.0, 0.8), ("dog", 6.3, 0.5)])
    std = standardize(g)
    for dd, s in zip(g, std):
        lx = np.log(dd.samples)
        assert s.samples.mean() == pytest.approx(lx.mean(), abs=1e-10)
        assert np.std(s.samples, ddof=1) == pytest.approx(s.s_max, rel=1e-10)
        assert s.s_max == pytest.approx(np.std(np.log(g[1].samples), ddof=1), rel=1e-14)
    # the widest study is left exactly as its log draws
    assert np.array_equal(std[1].samples, np.log(g[1].samples))


def test_standardize_equal_spread_is_plain_log(rng):
    base = rng.standard_normal(500)
    g = [DoseDraws(n, "MED", np.exp(base + shift)) for n, shift in (("a", 0.0), ("b", 1.0))]
    for dd, s in zip(g, standardize(g)):
        assert np.allclose(s.samples, np.log(dd.samples), atol=1e-12)


def test_standardize_errors(rng):
    ok = DoseDraws("a", "MTD", rng.lognormal(size=50))
    with pytest.raises(DomainError):
        standardize([ok])
    with pytest.raises(DegenerateDistributionError):
        standardize([ok, DoseDraws("b", "MTD", np.full(50, 3.0))])


def _normal_density(mu, sd, lo=-10.0, hi=12.0, m=4096):
    return GridDensity.from_pdf(lambda x: np.exp(-0.5 * ((x - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi)),
                                lo, hi, m)


def test_hellinger_limits():
    p = _normal_density(0, 1)
    assert hellinger(p, p) == 0.0
    far = GridDensity(0.0, 2.0, np.r_[np.ones(2), np.zeros(2)])
    near = GridDensity(0.0, 2.0, np.r_[np.zeros(2), np.ones(2)])
    assert hellinger(far, near) == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(GridError):
        hellinger(p, _normal_density(0, 1, m=100))


def test_hellinger_gaussian_closed_form():
    assert gaussian_hellinger(0, 1, 1, 1) == pytest.approx(H_UNIT_SHIFT, rel=1e-14)
    h = hellinger(_normal_density(0, 1), _normal_density(1, 1))
    assert h == pytest.approx(H_UNIT_SHIFT, abs=1e-6)
    h2 = hellinger(_normal_density(0.5, 0.6), _normal_density(1.3, 1.4))
    assert h2 == pytest.approx(gaussian_hellinger(0.5, 0.6, 1.3, 1.4), abs=1e-6)


def test_kde_distance_near_closed_form(rng):
    g = [DoseDraws("a", "MTD", np.exp(rng.normal(0, 1, 4000))),
         DoseDraws("b", "MTD", np.exp(rng.normal(1, 1, 4000)))]
    std = standardize(g)
    d = pairwise_distances(std)[("a", "b")]
    assert d == pytest.approx(H_UNIT_SHIFT, abs=0.03)
    fine = pairwise_distances(std, m=4096)[("a", "b")]
    assert abs(fine - d) <= 0.01


def test_distance_invariant_to_dose_units(rng):
    g = _group(rng, [("mouse", 6.2, 0.3), ("rat", 6.0, 0.8), ("dog", 6.3, 0.5)], n=400)
    scaled = [DoseDraws(d.study, d.target, d.samples * 1000.0) for d in g]
    a = pairwise_distances(standardize(g)).values
    b = pairwise_distances(standardize(scaled)).values
    assert np.allclose(a, b, atol=1e-8)


def test_distance_matrix_validation():
    dm = DistanceMatrix.from_pairs(("mouse", "rat", "dog"),
                                   {("rat", "mouse"): 0.2, ("mouse", "dog"): 0.3, ("dog", "rat"): 0.9})
    assert dm[("mouse", "rat")] == 0.2 and dm[("dog", "rat")] == 0.9
    assert list(dm.pairs()) == [(("mouse", "rat"), 0.2), (("mouse", "dog"), 0.3), (("rat", "dog"), 0.9)]
    assert dm.to_csv().splitlines() == ["pair,distance", "mouse-rat,0.2", "mouse-dog,0.3", "rat-dog,0.9"]
    for bad in (np.array([[0, 0.1], [0.2, 0]]), np.array([[0.1, 0.1], [0.1, 0]]),
                np.array([[0, 1.5], [1.5, 0]])):
        with pytest.raises(DomainError):
            DistanceMatrix(("a", "b"), bad)


def _dm(mr, md, rd):
    return DistanceMatrix.from_pairs(("mouse", "rat", "dog"),
                                     {("mouse", "rat"): mr, ("mouse", "dog"): md, ("rat", "dog"): rd})


@pytest.mark.parametrize("dists,expect", [
    ((0.31, 0.27, 0.45), ("mouse", "rat", "dog")),
    ((0.62, 0.27, 0.71), ("mouse", "dog")),
    ((0.62, 0.55, 0.71), ("dog",)),
    ((0.5, 0.5, 0.9), ("mouse", "rat", "dog")),  # ties count as commensurate
])
def test_selection_rule(dists, expect):
    assert select_studies(_dm(*dists), 0.5) == expect


def test_selection_permutation_invariant():
    names = ("mouse", "rat", "dog")
    dist = {("mouse", "rat"): 0.62, ("mouse", "dog"): 0.27, ("rat", "dog"): 0.71}
    for perm in itertools.permutations(names):
        dm = DistanceMatrix.from_pairs(perm, dist)
        assert set(select_studies(dm, 0.5)) == {"mouse", "dog"}


def test_selection_errors():
    with pytest.raises(UnsupportedCardinalityError):
        select_studies(DistanceMatrix(("a", "b"), np.zeros((2, 2))), 0.5)
    with pytest.raises(DomainError):
        select_studies(_dm(0.1, 0.1, 0.1), 0.0)
    with pytest.raises(DomainError):
        select_studies(_dm(0.1, 0.1, 0.1), 0.5, default_study="human")
    assert select_studies(_dm(0.9, 0.9, 0.9), 0.5, default_study="rat") == ("rat",)


def test_accuracy_example():
    assert accuracy([1, 1, 0, 0], [0.2, 0.6, 0.7, 0.8], 0.5) == 0.75
    with pytest.raises(DomainError):
        accuracy([], [], 0.5)
    with pytest.raises(DomainError):
        accuracy([1, 0], [0.1], 0.5)


def test_threshold_curve_step():
    curve = threshold_curve([1, 0], [0.3, 0.45], DEFAULT_TAUS)
    assert len(curve) == 50 and curve[0][0] == 0.01 and curve[-1][0] == 0.5
    acc = dict(curve)
    assert acc[0.29] == 0.5 and acc[0.3] == 1.0 and acc[0.44] == 1.0 and acc[0.45] == 0.5
    assert curve_to_csv(curve[:1]) == "tau,accuracy\n0.01,0.5\n"
