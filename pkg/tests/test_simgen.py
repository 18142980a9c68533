import math

import numpy as np
import pytest
from scipy import stats

from pinnex.evt import GpdParams, QuantileParams, gpd_quantile, reparam_to_classic
from pinnex.simgen import (
    ScenarioSpec,
    b3_coefficients,
    cubic_features,
    eval_test_functions,
    gev_quantile_qs,
    m_nonadditive_1,
    m_nonadditive_2,
    sample_pp_response,
    sample_predictors,
    simulate,
)


@pytest.mark.parametrize("rho", [0.0, 0.5, -0.05])
def test_predictor_correlation(rho):
    x = sample_predictors(100_000, 10, rho, np.random.default_rng(0))
    c = np.corrcoef(x, rowvar=False)
    off = c[~np.eye(10, dtype=bool)]
    assert np.all(np.abs(off - rho) < 0.02)
    assert np.all(np.abs(x.mean(0)) < 0.01)
    assert np.all(np.abs(x.std(0) - 1) < 0.01)


def test_invalid_correlation_rejected():
    with pytest.raises(ValueError):
        sample_predictors(10, 5, -0.3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        ScenarioSpec("B1-case1", 10, rho=1.0)
    with pytest.raises(ValueError):
        ScenarioSpec("B9", 10)


def test_nonadditive_functions_at_origin():
    z = np.zeros(10)
    assert m_nonadditive_1(z) == pytest.approx(0.1 * (-math.sqrt(2) + math.exp(-12)), rel=1e-14)
    assert m_nonadditive_1(z) == pytest.approx(-0.14142, abs=1e-5)
    assert m_nonadditive_2(z) == pytest.approx(0.1 * (-5 + 0.2 + math.exp(-18)), rel=1e-14)
    assert m_nonadditive_2(z) == pytest.approx(-0.48, abs=1e-8)


def test_nonadditive_function_hand_value():
    x = np.array([0.5, -1.0, 0.3, 1.2, -0.4, 0.8])
    x1, x2, x3, x4, x5, x6 = x
    hand = 0.1 * (x1 * x2 + x2 * (1 - math.cos(math.pi * x2 * x3)) + 2 * math.sin(x3) / (abs(x3 - x4) + 2)
                  + 0.2 * (x4 + x4 * x5 / 2) ** 2 - math.sqrt(x5 ** 2 + x6 ** 2 + 2)
                  + math.exp(-12 + sum(x) / 10))
    assert m_nonadditive_1(x) == pytest.approx(hand, rel=1e-14)


def test_b1_linear_effects():
    x = np.zeros(10)
    x[6] = x[7] = 1.0
    f1 = eval_test_functions(x, "B1-case1")
    assert f1["m_L1"] == pytest.approx(2.8, rel=1e-15)
    assert f1["m_L2"] == pytest.approx(0.4 - 0.2, rel=1e-15)
    f2 = eval_test_functions(x, "B1-case2")
    assert f2["m_L1"] == pytest.approx(-0.5, rel=1e-15)


def test_case_two_drops_x7_and_x9():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 10))
    x2 = x.copy()
    x2[:, 6] += 3.0
    x2[:, 8] -= 2.0
    a, b = eval_test_functions(x, "B1-case2"), eval_test_functions(x2, "B1-case2")
    for key in ("m_L1", "m_L2", "m_A1", "m_A2"):
        np.testing.assert_array_equal(a[key], b[key])


def test_cubic_features_layout():
    f = cubic_features(np.array([[2.0, -1.0]]))
    np.testing.assert_array_equal(f, [[8.0, 4.0, 2.0, -1.0, 1.0, -1.0]])


# -- point-process responses -------------------------------------------------------------------


@pytest.mark.parametrize("study,rate", [("B1-case1", 0.01), ("B3-linear", 0.05)])
def test_exceedance_fraction(study, rate):
    sim = simulate(ScenarioSpec(study, 100_000, seed=3))
    frac = np.mean(sim.y > sim.u)
    assert abs(frac - rate) < 4 * math.sqrt(rate * (1 - rate) / 1e5)


def test_threshold_is_the_stated_quantile():
    sim = simulate(ScenarioSpec("B1-case1", 50, seed=0))
    np.testing.assert_allclose(sim.true_quantile(0.99)[:, 0], sim.u, rtol=1e-13)


def test_exceedances_follow_log_ratio_survivor():
    q, s, xi, p_u = 1.5, 0.8, 0.2, 0.9
    n = 1_000_000
    y, u = sample_pp_response(np.full(n, q), np.full(n, s), xi, p_u, np.random.default_rng(4))
    exc = y[y > u]
    assert exc.size > 90_000
    g = reparam_to_classic(QuantileParams(q, s, xi))
    law = stats.genextreme(c=-xi, loc=g.mu, scale=g.sigma)
    u0 = float(u[0])

    def cdf(v):
        return 1.0 - law.logcdf(v) / law.logcdf(u0)

    assert stats.kstest(exc, cdf).statistic < 0.01
    # sub-threshold values stay below u
    assert np.all(y[y <= u] <= u[0])


def test_gev_quantile_qs_matches_classic():
    g = reparam_to_classic(QuantileParams(1.0, 2.0, 0.25))
    p = np.array([0.1, 0.5, 0.99])
    np.testing.assert_allclose(gev_quantile_qs(p, 1.0, 2.0, 0.25),
                               stats.genextreme(c=-0.25, loc=g.mu, scale=g.sigma).ppf(p), rtol=1e-12)


# -- misspecified laws -------------------------------------------------------------------------


def test_lognormal_median_at_origin():
    mu0 = 6.0 + 0.2 * m_nonadditive_1(np.zeros(10))
    assert math.exp(mu0) == pytest.approx(392.1, abs=0.1)


def test_lognormal_scenario_law():
    sim = simulate(ScenarioSpec("B2-lognormal", 200_000, seed=5))
    z = (np.log(sim.y) - sim.truth["mu"]) / 0.5
    assert stats.kstest(z, "norm").statistic < 0.01
    np.testing.assert_allclose(sim.true_quantile(0.5)[:, 0], np.exp(sim.truth["mu"]), rtol=1e-13)
    assert np.mean(sim.y > sim.u) == pytest.approx(0.05, abs=0.003)


def test_gpd_scenario_law():
    sim = simulate(ScenarioSpec("B2-gpd", 1_000_000, seed=6))
    assert sim.y.min() >= 0
    std = sim.y / sim.truth["scale"]
    q999 = float(gpd_quantile(0.999, GpdParams(1.0, 0.1)))
    assert abs(np.quantile(std, 0.999) / q999 - 1) < 0.05
    np.testing.assert_allclose(sim.truth["scale"], np.exp(0.5 - 3 * m_nonadditive_2(sim.x)), rtol=1e-14)


# -- reproducibility and manifests -------------------------------------------------------------


@pytest.mark.parametrize("study", ["B1-case2", "B2-gpd", "B3-additive", "B3-nonlinear"])
def test_bitwise_reproducible(study):
    a = simulate(ScenarioSpec(study, 500, seed=9))
    b = simulate(ScenarioSpec(study, 500, seed=9))
    c = simulate(ScenarioSpec(study, 500, seed=10))
    assert a.y.tobytes() == b.y.tobytes() and a.x.tobytes() == b.x.tobytes()
    assert a.y.tobytes() != c.y.tobytes()


def test_b1_manifest_echoes_intercepts_and_shape():
    m = simulate(ScenarioSpec("B1-case1", 100)).manifest
    assert m["eta0_q"] == 1.0 and m["eta0_s"] == -0.5 and m["xi"] == 0.2


def test_b3_coefficients_frozen_across_replicates():
    a = simulate(ScenarioSpec("B3-linear", 100, seed=1, coef_seed=4))
    b = simulate(ScenarioSpec("B3-linear", 100, seed=2, coef_seed=4))
    assert a.manifest["coefficients"] == b.manifest["coefficients"]
    coefs = b3_coefficients(4)
    grid_wide = set(np.round(np.arange(-10, 11) / 10, 1))
    grid_narrow = set(np.round(np.arange(-5, 6) / 10, 1))
    assert set(coefs["eta1"]) <= grid_wide and set(coefs["eta2"]) <= grid_narrow
    assert coefs["eta3"].size == 36
    assert a.manifest["coefficients"]["eta1"] == coefs["eta1"].tolist()
