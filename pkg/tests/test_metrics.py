import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from pinnex.evt import QuantileParams, bgev_cdf
from pinnex.metrics import (
    ScorePanel,
    aic,
    equal_probability_grid,
    mise_centered,
    pit_exponential,
    pp_cdf_table,
    pp_log_survival,
    pp_predictive_cdf,
    qq_table,
    smad,
    stls,
    stls_from_log_survival,
    stls_grid,
    tw_weight,
    twcrps,
    twcrps_thresholds,
)


# -- twCRPS ---------------------------------------------------------------------------------


def test_default_thresholds_span_endpoints():
    v = twcrps_thresholds()
    assert v.size == 24 and np.all(np.diff(v) > 0)
    assert v[0] == pytest.approx(math.sqrt(30), rel=1e-14)
    assert v[-1] == pytest.approx(math.sqrt(100_000), rel=1e-14)


def test_weight_normalised_at_top_threshold():
    v = twcrps_thresholds()
    assert tw_weight(v[-1], v[-1]) == 1.0
    assert np.all(np.diff(tw_weight(v, v[-1])) > 0)


def test_perfect_forecast_scores_zero():
    v = twcrps_thresholds()
    y = np.array([3.0, 40.0, 400.0, 10.0])
    p = (y[:, None] <= v).astype(float)
    assert twcrps(y, p, v) == 0.0


def test_single_cell_half_forecast():
    v = twcrps_thresholds()
    y = np.array([0.5 * (v[0] + v[1])])
    p = np.full((1, 24), 0.5)
    # direct summation with the weight written out
    def wt(x):
        return 1 - (1 + (x + 1) ** 2 / 1000) ** -0.25

    expected = sum(wt(vi) / wt(v[-1]) * 0.25 for vi in v)
    assert twcrps(y, p, v) == pytest.approx(expected, rel=1e-13)


def test_twcrps_ignores_masked_cells():
    v = twcrps_thresholds()
    y = np.array([5.0, np.nan, 20.0])
    p = np.tile(np.linspace(0.1, 0.9, 24), (3, 1))
    obs = np.array([True, False, True])
    full = twcrps(y, p, v, obs)
    assert full == pytest.approx(twcrps(y[[0, 2]], p[[0, 2]], v), rel=1e-15)


def test_twcrps_flags_non_monotone_forecast():
    v = twcrps_thresholds()
    p = np.linspace(0.9, 0.1, 24)[None, :]
    with pytest.raises(ValueError):
        twcrps(np.array([10.0]), p, v)
    with pytest.raises(ValueError):
        twcrps(np.array([10.0]), np.zeros((1, 3)), np.array([1.0, 3.0, 2.0]))


def test_twcrps_prefers_the_true_distribution():
    v = twcrps_thresholds()
    rng = np.random.default_rng(0)
    truth, shifted = stats.norm(60, 25), stats.norm(90, 25)
    p_true, p_shift = truth.cdf(v)[None, :], shifted.cdf(v)[None, :]
    wins = 0
    for _ in range(200):
        y = truth.rvs(size=50, random_state=rng)
        a = twcrps(y, np.repeat(p_true, 50, 0), v)
        b = twcrps(y, np.repeat(p_shift, 50, 0), v)
        wins += a < b
    assert wins >= 0.95 * 200


# -- PIT and sMAD ----------------------------------------------------------------------------


def test_pit_values():
    assert pit_exponential(1 - math.exp(-1)) == pytest.approx(1.0, rel=1e-14)
    assert pit_exponential(0.0) == 0.0
    assert pit_exponential(1.0) == pytest.approx(-math.log(1e-12), rel=1e-3)


def test_pit_of_uniform_draws_is_exponential():
    u = np.random.default_rng(1).uniform(size=10_000)
    e = pit_exponential(u)
    assert stats.kstest(e, "expon").statistic < 0.02


def exact_exponential_sample(n):
    # order statistic k sits at the exponential quantile k/n; the last one is arbitrary
    k = np.arange(1, n)
    return np.append(-np.log1p(-k / n), 50.0)


def test_smad_of_exact_quantiles_is_zero():
    e = exact_exponential_sample(1000)
    assert smad(e, 0.95) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("c", [0.1, 0.5, 2.0])
def test_smad_of_shifted_data(c):
    e = exact_exponential_sample(1000) + c
    assert smad(e, 0.95) == pytest.approx(c, rel=1e-10)
    assert smad(e, 0.95) <= c + 1e-12


def test_smad_matches_sort_oracle():
    e = np.random.default_rng(2).exponential(size=100)
    xs = sorted(e.tolist())
    m = 5
    devs = []
    for j in range(1, m + 1):
        p = 0.95 + (j - 1) * 0.05 / m
        k = round(100 * p)  # ceil(100 p), exact here
        devs.append(abs(xs[k - 1] + math.log(1 - p)))
    assert smad(e, 0.95) == pytest.approx(sum(devs) / m, rel=1e-13)


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_smad_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    e = rng.exponential(size=200)
    assert smad(e) == smad(rng.permutation(e))


def test_smad_needs_two_points():
    with pytest.raises(ValueError):
        smad(np.ones(20), 0.95)


def test_qq_table_columns():
    qq = qq_table(np.random.default_rng(3).exponential(size=400))
    assert qq["p"].size == 20
    assert np.all(np.diff(qq["empirical"]) >= 0)


# -- stLS --------------------------------------------------------------------------------------


def test_stls_grid():
    p = stls_grid()
    assert p.size == 200 and p[0] == 0.99 and p[-1] == 0.9999


def test_stls_of_truth_is_exactly_zero():
    p = stls_grid()
    assert stls(np.tile(p, (3, 1)), p) == 0.0
    p2 = np.sort(np.random.default_rng(4).uniform(0.9, 0.999, 37))
    assert stls(p2[None, :], p2) == 0.0


@pytest.mark.parametrize("delta", [0.3, -1.2, 2.5])
def test_stls_constant_offset(delta):
    p = stls_grid()
    ls = np.log1p(-p) + delta
    assert stls_from_log_survival(ls[None, :], p, 0.99) == pytest.approx(delta ** 2 * 0.01, abs=1e-10)


def test_stls_singular_fit_rejected():
    p = stls_grid()
    f = p.copy()
    f[-1] = 1.0
    with pytest.raises(ValueError):
        stls(f[None, :], p)


def test_stls_matches_refined_quadrature():
    qp = QuantileParams(380.0, 250.0, 0.15)
    truth = stats.lognorm(s=0.5, scale=math.exp(5.97))

    def integrand(p):
        return (math.log1p(-float(bgev_cdf(truth.ppf(p), qp))) - math.log1p(-p)) ** 2

    p = stls_grid()
    got = stls(np.array([bgev_cdf(truth.ppf(p), qp)]), p, 0.99)
    fine = np.linspace(0.99, 0.9999, 100_000)
    vals = (np.log1p(-bgev_cdf(truth.ppf(fine), qp)) - np.log1p(-fine)) ** 2
    oracle = np.trapezoid(vals, fine) * 0.01 / (0.9999 - 0.99)
    quad, _ = integrate.quad(integrand, 0.99, 0.9999, epsabs=1e-12, epsrel=1e-10, limit=200)
    assert oracle == pytest.approx(quad * 0.01 / 0.0099, rel=1e-6)
    assert got == pytest.approx(oracle, abs=1e-4)


# -- MISE and AIC --------------------------------------------------------------------------------


def test_equal_probability_grid():
    x = equal_probability_grid()
    assert x.size == 5000 and np.all(np.diff(x) > 0)
    np.testing.assert_allclose(x, -x[::-1], atol=1e-12)


def test_mise_translation_invariant():
    x = equal_probability_grid()
    m = np.sin
    assert mise_centered(m, lambda v: np.sin(v) + 3.7, x) == pytest.approx(0.0, abs=1e-25)
    assert mise_centered(m, m, x) == 0.0


def test_mise_linear_scaling_closed_form():
    x = np.linspace(-1, 1, 5001)
    assert mise_centered(lambda v: v, lambda v: 1.1 * v, x) == pytest.approx(0.01 * 2 / 3, rel=1e-6)


def test_mise_averages_replicates():
    x = np.linspace(-1, 1, 2001)
    reps = [lambda v: 1.1 * v, lambda v: 0.9 * v, lambda v: v]
    assert mise_centered(lambda v: v, reps, x) == pytest.approx(2 * 0.01 * 2 / 3 / 3, rel=1e-6)


def test_aic_values():
    assert aic(0.0, 0) == 0.0
    assert aic(100.0, 43) == 286.0


def test_aic_comparison_of_forms_is_finite():
    from pinnex.forms import bgev_model_spec, mlp
    from pinnex.objectives import LossSpec, Objective
    from pinnex.pinn.surface import PinnModel, count_params

    rng = np.random.default_rng(5)
    X = rng.normal(size=(200, 3))
    y = 1 + X[:, 0] + rng.gumbel(size=200)
    u = np.full(200, np.quantile(y, 0.8))
    scores = {}
    for form in ("fully-linear", "fully-NN"):
        spec = bgev_model_spec(form, 3, mlp((4,)))
        model = PinnModel(spec).prepare(X)
        params = model.init_params(np.random.default_rng(0), {"q": 1.0, "s": 1.0, "xi": 0.2})
        nll = Objective(model, X, y, LossSpec("bgev_pp"), u=u).value(params)
        scores[form] = aic(nll, count_params(spec))
    assert all(np.isfinite(v) for v in scores.values())
    assert scores["fully-linear"] != scores["fully-NN"]


# -- point-process predictive distribution -------------------------------------------------------


def test_pp_predictive_cdf_annual_to_single():
    qp = QuantileParams(2.0, 1.0, 0.2)
    v = np.array([1.0, 3.0, 8.0])
    np.testing.assert_allclose(pp_predictive_cdf(v, 2.0, 1.0, 0.2), bgev_cdf(v, qp), rtol=1e-13)
    np.testing.assert_allclose(pp_predictive_cdf(v, 2.0, 1.0, 0.2, n_y=12), bgev_cdf(v, qp) ** (1 / 12), rtol=1e-12)
    mixed = pp_predictive_cdf(v, 2.0, 1.0, 0.2, p0=0.3)
    np.testing.assert_allclose(mixed, 0.7 + 0.3 * bgev_cdf(v, qp), rtol=1e-13)


def test_pp_cdf_table_shape_and_monotone():
    v = twcrps_thresholds()
    t = pp_cdf_table(v, np.array([[5.0, 10.0]]), np.array([[2.0, 3.0]]), 0.3)
    assert t.shape == (1, 2, 24)
    assert np.all(np.diff(t, axis=-1) >= 0)


def test_pp_log_survival_tail_accuracy():
    y = np.array([3.0, 50.0, 1e4])
    direct = np.log1p(-pp_predictive_cdf(y[:1], 2.0, 1.0, 0.2))
    ls = pp_log_survival(y, 2.0, 1.0, 0.2)
    assert ls[0] == pytest.approx(direct[0], rel=1e-12)
    assert np.all(np.isfinite(ls)) and np.all(np.diff(ls) < 0)


def test_score_panel_dict():
    panel = ScorePanel(1.0, 2.0, 3.0, twcrps=4.0, n_params=43)
    d = panel.to_dict()
    assert d["training_loss"] == 1.0 and d["n_params"] == 43 and d["stls"] is None
