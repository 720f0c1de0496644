import numpy as np
import pytest

from dosemerge.errors import DegenerateDistributionError, DomainError, NoSolutionError
from dosemerge.pkpd import (RATE_TOL, EfficacySpec, PdParams, PkParams, PopulationPkPd,
                            ToxicitySpec, auc, concentration, effect_concentration, max_response,
                            med_monte_carlo, mtd_analytic, prob_toxicity, response)

# Frozen from tests/oracles.py (DOP853 solve of the compartment ODEs).
C_AT_2H = 0.5387666565356017
CE_AT = {0.5: 0.20842203353901056, 2.0: 0.568711774783175, 8.0: 0.0679191641560035}

HUMAN = PkParams(2.0, 40.0, 100.0)
TOX = ToxicitySpec()


def test_concentration_basics():
    assert concentration(0.0, 100, HUMAN) == 0.0
    assert np.all(concentration(np.linspace(0, 20, 11), 0.0, HUMAN) == 0.0)
    assert concentration(2.0, 100, HUMAN) == pytest.approx(C_AT_2H, rel=1e-6)
    with pytest.raises(DomainError):
        concentration(-1.0, 100, HUMAN)


def test_concentration_continuous_at_limit():
    ka = 0.4
    t = np.linspace(0.1, 30, 50)
    at = concentration(t, 100, PkParams(ka, 40.0 * (1 + 0.5 * RATE_TOL), 100.0))
    exact = concentration(t, 100, PkParams(ka, 40.0, 100.0))
    assert np.all(np.isfinite(exact))
    assert np.max(np.abs(at - exact)) <= 1e-8
    ref = 100 * ka / 100 * t * np.exp(-ka * t)
    assert np.allclose(exact, ref, rtol=1e-7)


def test_auc():
    assert auc(100, 40) == 2.5
    assert auc(0, 40) == 0.0
    with pytest.raises(DomainError):
        auc(100, 0)
    # quadrature of the concentration curve over [0, 2000] h gives 2.5
    from scipy.integrate import quad
    val, _ = quad(lambda t: concentration(t, 100, HUMAN), 0, 2000, limit=500)
    assert val == pytest.approx(2.5, rel=1e-4)


def test_mtd_values():
    assert mtd_analytic(40.0, 0.7, TOX) == pytest.approx(502, abs=0.5)
    assert mtd_analytic(40.0, 0.7, ToxicitySpec(p_t=0.5)) == pytest.approx(904.0, rel=1e-12)
    assert mtd_analytic(42.3, 0.7, TOX) == pytest.approx(531, abs=1)


def test_prob_toxicity_inverse():
    assert prob_toxicity(904.0, 40.0, 0.7, TOX) == pytest.approx(0.5, abs=1e-12)
    d = mtd_analytic(40.0, 0.7, TOX)
    assert abs(prob_toxicity(d, 40.0, 0.7, TOX) - 0.2) <= 1e-10
    with pytest.raises(DegenerateDistributionError):
        prob_toxicity(100.0, 40.0, 0.0, TOX)


def test_prob_toxicity_simulation_oracle():
    rng = np.random.default_rng(7)
    cl = 40.0 * np.exp(0.7 * rng.standard_normal(1_000_000))
    frac = np.mean(600.0 / cl >= TOX.tau_t)
    assert abs(frac - prob_toxicity(600.0, 40.0, 0.7, TOX)) < 0.002


def test_mtd_with_mu_alpha():
    spec = ToxicitySpec(mu_alpha=2.0, omega_alpha=0.3)
    d = mtd_analytic(40.0, 0.7, spec)
    assert prob_toxicity(d, 40.0, 0.7, spec) == pytest.approx(0.2, abs=1e-10)


def test_effect_concentration():
    t = np.array(list(CE_AT))
    ce = effect_concentration(t, 100.0, HUMAN, 1.6)
    assert np.allclose(ce, list(CE_AT.values()), rtol=1e-6)
    assert effect_concentration(0.0, 100.0, HUMAN, 1.6) == 0.0
    fast = effect_concentration(2.0, 100.0, HUMAN, 1e4)
    assert fast == pytest.approx(concentration(2.0, 100.0, HUMAN), rel=0.01)


def test_effect_concentration_coincident_rates():
    # ka = k = ke: every pair of rates coincides
    p = PkParams(0.4, 40.0, 100.0)
    t = np.array([0.5, 2.0, 8.0])
    ce = effect_concentration(t, 100.0, p, 0.4)
    ref = 100 * 0.4 * 0.4 / 100 * t ** 2 / 2 * np.exp(-0.4 * t)
    assert np.allclose(ce, ref, rtol=1e-6)


def test_response_properties():
    q = PdParams(1.0, 0.32, 1.6)
    assert response(0.0, 100.0, HUMAN, q) == 0.0
    doses = np.array([1.0, 10, 50, 100, 500])
    r = [response(2.0, d, HUMAN, q) for d in doses]
    assert np.all(np.diff(r) > 0)
    ce = effect_concentration(2.0, 100.0, HUMAN, 1.6)
    half = PdParams(0.8, float(ce), 1.6)
    assert response(2.0, 100.0, HUMAN, half) == pytest.approx(0.4, rel=1e-12)


def test_max_response_grid_oracle():
    q = PdParams(1.0, 0.32, 1.6)
    assert max_response(0.0, HUMAN, q) == 0.0
    dense = response(np.linspace(0, 48, 100_001), 100.0, HUMAN, q).max()
    m = max_response(100.0, HUMAN, q)
    assert abs(m - dense) <= 1e-5
    assert m >= response(np.linspace(0, 48, 1000), 100.0, HUMAN, q).max()


def test_med_human():
    pop = PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, 0.32, 1.6, 0.7, 0.7)
    med = med_monte_carlo(pop, EfficacySpec(), n_subjects=10_000, rng=np.random.default_rng(0))
    assert med == pytest.approx(89, abs=5)


def test_med_monotone_in_ic50_and_imax():
    z = np.random.default_rng(3).standard_normal((2000, 4))
    base = PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, 0.32, 1.6, 0.7, 0.7)
    meds = [med_monte_carlo(PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, ic, 1.6, 0.7, 0.7),
                            EfficacySpec(), normals=z) for ic in (0.1, 0.32, 3.2)]
    assert meds[0] <= meds[1] <= meds[2]
    lower_imax = PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, 0.32, 1.6, 0.7, 0.7, i_max=0.9)
    assert med_monte_carlo(lower_imax, EfficacySpec(), normals=z) >= med_monte_carlo(
        base, EfficacySpec(), normals=z)


def test_med_collapses_to_lower_bracket():
    pop = PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, 1e-12, 1.6, 0.0, 0.7)
    med = med_monte_carlo(pop, EfficacySpec(), n_subjects=1000, rng=np.random.default_rng(0))
    assert med == pytest.approx(1e-2, rel=1e-3)


def test_med_no_solution():
    pop = PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, 0.32, 1.6, 0.7, 0.7, i_max=0.4)
    with pytest.raises(NoSolutionError):
        med_monte_carlo(pop, EfficacySpec(), n_subjects=1000, rng=np.random.default_rng(0))


def test_med_needs_subjects():
    pop = PopulationPkPd(2.0, 40.0, 100.0, 0.7, 0.7, 0.32, 1.6, 0.7, 0.7)
    with pytest.raises(DomainError):
        med_monte_carlo(pop, EfficacySpec(), n_subjects=100, rng=np.random.default_rng(0))
