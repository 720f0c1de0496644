import numpy as np
import pytest

from dosemerge.design import WEIGHTS_KG, builtin_scenarios
from dosemerge.errors import DomainError, MappingError, SamplingError
from dosemerge.extrapolate import (DoseDraws, allometric_cl, allometric_v, degenerate_draws,
                                   extrapolate_draws, med_draws, mtd_draws)
from dosemerge.fit.draws import PosteriorDraws
from dosemerge.pkpd import EfficacySpec, ToxicitySpec

Z20 = -0.8416212335729143  # normal 0.2 quantile, frozen from the bisection oracle


def _truth_table(sid, species, v_exponent=1.0):
    t = builtin_scenarios()[sid][species]
    vals = dict(ka=t.ka, mu_cl=t.mu_cl, mu_v=t.mu_v, omega_cl=t.omega_cl, omega_v=t.omega_v,
                mu_ic50=t.mu_ic50, mu_ke=t.mu_ke, omega_ic50=t.omega_ic50, omega_ke=t.omega_ke)
    d = degenerate_draws(vals, n=4)
    d["mu_cl"] = allometric_cl(d["mu_cl"], t.weight_kg, 70.0)
    d["mu_v"] = allometric_v(d["mu_v"], t.weight_kg, 70.0, exponent=v_exponent)
    return d


def test_allometric_examples():
    assert allometric_cl(40.0, 70.0, 10.0) == pytest.approx(40.0 * (10 / 70) ** 0.75, rel=1e-14)
    assert allometric_cl(40.0, 70.0, 10.0) == pytest.approx(9.3, abs=0.01)
    assert allometric_cl(0.0961, 0.025, 0.15) == pytest.approx(0.368, abs=0.001)
    assert allometric_v(0.0508, 0.025, 0.15) == pytest.approx(0.305, abs=0.001)
    assert allometric_v(100.0, 70.0, 10.0) == pytest.approx(14.29, abs=0.01)


def test_allometric_round_trip_and_composition():
    cl = np.array([0.1, 2.0, 55.0])
    back = allometric_cl(allometric_cl(cl, 0.15, 70.0), 70.0, 0.15)
    assert np.allclose(back, cl, rtol=1e-14)
    two_step = allometric_v(allometric_v(cl, 0.025, 10.0), 10.0, 70.0)
    assert np.allclose(two_step, allometric_v(cl, 0.025, 70.0), rtol=1e-14)
    with pytest.raises(DomainError):
        allometric_cl(1.0, 0.0, 70.0)


def test_extrapolate_draws_matches_loop():
    rng = np.random.default_rng(5)
    names = ("ka", "mu_cl", "mu_v", "omega_cl")
    post = PosteriorDraws(names, rng.lognormal(size=(2, 700, 4)), species="rat")
    table = extrapolate_draws(post, "rat", n=1000)
    flat = post.draws.reshape(-1, 4)
    idx = (np.arange(1000) * 1400) // 1000
    for j, i in enumerate(idx[:50]):
        assert table["mu_cl"][j] == pytest.approx(flat[i, 1] * (70 / 0.15) ** 0.75, rel=1e-13)
        assert table["mu_v"][j] == pytest.approx(flat[i, 2] * (70 / 0.15), rel=1e-13)
        assert table["ka"][j] == flat[i, 0]
        assert table["omega_cl"][j] == flat[i, 3]
    with pytest.raises(SamplingError):
        extrapolate_draws(post, "rat", n=1401)
    with pytest.raises(DomainError):
        extrapolate_draws(post, "hamster")
    with pytest.raises(MappingError):
        extrapolate_draws(PosteriorDraws(("ka",), np.ones((1, 10, 1))), "rat")


def test_mtd_formula():
    d = degenerate_draws({"mu_cl": 40.0, "omega_cl": 0.7}, n=3)
    got = mtd_draws(d).samples
    assert np.allclose(got, 22.6 * 40.0 * np.exp(0.7 * Z20), rtol=1e-12)
    assert got[0] == pytest.approx(502, abs=1)


@pytest.mark.parametrize("sid,species,expect", [(1, "human", 502), (1, "dog", 502),
                                                (1, "rat", 504), (2, "rat", 2002)])
def test_mtd_truth_table(sid, species, expect):
    if species == "human":
        d = degenerate_draws({"mu_cl": 40.0, "omega_cl": 0.7}, n=2)
    else:
        d = _truth_table(sid, species)
    assert mtd_draws(d).samples[0] == pytest.approx(expect, abs=1)


def test_mtd_linear_in_clearance():
    d = degenerate_draws({"mu_cl": 1.0, "omega_cl": 0.4}, n=2)
    base = mtd_draws(d).samples[0]
    d["mu_cl"] *= 3.7
    assert mtd_draws(d).samples[0] == pytest.approx(3.7 * base, rel=1e-13)
    alpha = mtd_draws(degenerate_draws({"mu_cl": 1.0, "omega_cl": 0.4}, n=2),
                      ToxicitySpec(mu_alpha=2.0)).samples[0]
    assert alpha == pytest.approx(base / 2.0, rel=1e-13)


def test_mtd_needs_columns():
    with pytest.raises(MappingError):
        mtd_draws({"mu_cl": np.ones(3)})


@pytest.mark.parametrize("species,expect", [("mouse", 41), ("rat", 43), ("dog", 67)])
def test_med_truth_table(species, expect):
    d = _truth_table(1, species, v_exponent=0.75)
    med = med_draws(d, n_subjects=10_000).samples
    assert med[0] == pytest.approx(expect, rel=0.1)
    assert np.all(med == med[0])  # common random numbers across identical draws


def test_med_human_degenerate():
    vals = dict(ka=2.0, mu_cl=40.0, mu_v=100.0, omega_cl=0.7, omega_v=0.7, mu_ic50=0.32,
                mu_ke=1.6, omega_ic50=0.7, omega_ke=0.7)
    med = med_draws(degenerate_draws(vals, n=2), n_subjects=10_000).samples
    assert med[0] == pytest.approx(89, abs=5)


def test_med_increases_with_ic50():
    d = _truth_table(1, "rat")
    d["mu_ic50"] = np.array([0.1, 0.32, 1.0, 2.9])
    med = med_draws(d, n_subjects=2000, seed=3).samples
    assert np.all(np.diff(med) > 0)


def test_med_seed_determinism_and_limits():
    d = _truth_table(1, "dog")
    a = med_draws(d, n_subjects=1000, seed=7)
    b = med_draws(d, n_subjects=1000, seed=7)
    assert a.samples.tobytes() == b.samples.tobytes() and a.seed == 7
    with pytest.raises(DomainError):
        med_draws(d, n_subjects=500)
    easy = med_draws(d, EfficacySpec(tau_e=0.2, p_e=0.3), n_subjects=1000, seed=7)
    assert np.all(easy.samples < a.samples)


def test_dose_draws_csv_and_validation():
    dd = DoseDraws("rat", "MED", np.array([1.5, 2.25, 1e-3]), seed=11)
    back = DoseDraws.from_csv(dd.to_csv())
    assert (back.study, back.target, back.seed) == ("rat", "MED", 11)
    assert back.samples.tobytes() == dd.samples.tobytes()
    for bad in ([1.0], [1.0, -2.0], [1.0, np.inf]):
        with pytest.raises(DomainError):
            DoseDraws("x", "MTD", np.array(bad))
    with pytest.raises(DomainError):
        DoseDraws("x", "LD50", np.ones(3))
