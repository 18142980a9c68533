import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinnex import autodiff as ad
from pinnex.folds import great_circle_miles, make_cv_folds, separable_correlation
from pinnex.forms import bgev_model_spec, mlp, single_surface_spec
from pinnex.newton import PpNewton
from pinnex.objectives import LossSpec, Objective
from pinnex.pinn.surface import ModelSpec, PinnModel, PredictorPartition, SurfaceSpec, eval_theta
from pinnex.train import (
    Checkpoint,
    DivergenceError,
    FitConfig,
    aligned_start,
    constant_pp_fit,
    estimate_threshold,
    fit,
    params_fingerprint,
    warm_start,
)


def quadratic(p):
    d = ad.sub(p["w"], np.array([1.0, -2.0, 0.5]))
    return ad.sum_(ad.mul(d, d))


def test_saved_losses_nonincreasing_on_convex_toy():
    rep = fit(quadratic, {"w": np.zeros(3)}, FitConfig(epochs=400, stride=20, lr=0.05))
    losses = [s[1] for s in rep.saves]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert rep.best.loss == min(losses)
    assert rep.best.loss < 1e-3


def test_fewer_epochs_than_stride_keeps_initial_state():
    rep = fit(quadratic, {"w": np.zeros(3)}, FitConfig(epochs=10, stride=50, lr=0.05))
    assert len(rep.saves) == 1 and rep.best.epoch == 0
    np.testing.assert_array_equal(rep.params["w"], 0.0)
    assert len(rep.train_losses) == 10


def test_fit_is_deterministic():
    model, X, y, u = pp_setup()
    obj = Objective(model, X, y, LossSpec("bgev_pp"), u=u)
    p0 = model.init_params(np.random.default_rng(5), {"q": 1.0, "s": 1.0, "xi": 0.2})
    cfg = FitConfig(epochs=30, stride=5, lr=0.01, batch_size=40, seed=3)
    a = fit(obj, p0, cfg, n_rows=y.size)
    b = fit(obj, p0, cfg, n_rows=y.size)
    assert a.to_dict() == b.to_dict()
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()


def test_divergence_aborts_with_last_good_state():
    def loss(p):
        w = ad.getitem(p["w"], 0)
        # log of a quantity that turns negative once w passes 1
        return ad.log(ad.sub(1.0, w))

    with pytest.raises(DivergenceError) as info:
        fit(loss, {"w": np.array([0.0])}, FitConfig(epochs=500, stride=1, lr=0.2))
    rep = info.value.report
    assert rep.diverged and np.isfinite(rep.best.loss)


def test_nonfinite_initial_loss_rejected():
    with pytest.raises(ValueError):
        fit(lambda p: ad.log(ad.sub(p["w"], 1.0)), {"w": np.array(0.0)}, FitConfig(epochs=1))


def test_validation_selection_uses_validation_loss():
    def val(p):
        return ad.sum_(ad.mul(p["w"], p["w"]))

    rep = fit(quadratic, {"w": np.zeros(3)}, FitConfig(epochs=50, stride=1, lr=0.05, criterion="validation-loss"),
              validation=val)
    # moving away from 0 only worsens the validation loss
    assert rep.best.epoch == 0
    assert len(rep.val_losses) == 50


def test_fit_config_validation():
    with pytest.raises(ValueError):
        FitConfig(stride=0)
    with pytest.raises(ValueError):
        FitConfig(criterion="aic")


# -- checkpoints and warm starts -------------------------------------------------------------


def pp_setup(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = 1.0 + 0.5 * X[:, 0] + rng.gumbel(size=n)
    spec = bgev_model_spec("lin+GAM+NN", 3, mlp((4,)), n_knots=4, q_split=((0,), (1,)), s_split=((0,), ()))
    model = PinnModel(spec).prepare(X)
    u = np.quantile(y, 0.7) + 0.3 * X[:, 0]
    return model, X, y, u


def test_checkpoint_round_trip_bitwise(tmp_path):
    model, X, y, u = pp_setup()
    params = model.init_params(np.random.default_rng(1))
    ck = Checkpoint(params, 7, 1.25, params_fingerprint(params), {"step": 7})
    path = str(tmp_path / "m.ckpt")
    ck.save(path)
    back = Checkpoint.load(path)
    assert back.epoch == 7 and back.loss == 1.25 and back.fingerprint == ck.fingerprint
    a, b = eval_theta(model, params, X), eval_theta(model, back.params, X)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b'{"magic": "nope"}\n')
    with pytest.raises(ValueError):
        Checkpoint.load(str(path))


def test_warm_start_zero_epochs_identical():
    model, X, y, u = pp_setup()
    obj = Objective(model, X, y, LossSpec("bgev_pp"), u=u)
    p0 = model.init_params(np.random.default_rng(2), {"q": 1.0, "s": 1.0, "xi": 0.2})
    rep = fit(obj, p0, FitConfig(epochs=20, stride=5, lr=0.01))
    warm = warm_start(rep.best, model.init_params(np.random.default_rng(9)))
    rep2 = fit(obj, warm, FitConfig(epochs=0))
    a, b = eval_theta(model, rep.params, X), eval_theta(model, rep2.params, X)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_warm_start_mismatched_widths():
    model, X, y, u = pp_setup()
    params = model.init_params(np.random.default_rng(0))
    other = bgev_model_spec("lin+GAM+NN", 3, mlp((5,)), n_knots=4, q_split=((0,), (1,)), s_split=((0,), ()))
    fresh = PinnModel(other).prepare(X).init_params(np.random.default_rng(0))
    with pytest.raises(ValueError):
        warm_start(Checkpoint(params, 0, 0.0, ""), fresh)
    with pytest.raises(ValueError):
        warm_start(Checkpoint(params, 0, 0.0, "abc"), params, fingerprint="def")


def test_warm_start_beats_cold_start_on_bootstrap_replicates():
    model, X, y, u = pp_setup(n=200)
    obj = Objective(model, X, y, LossSpec("bgev_pp"), u=u)
    p0 = aligned_start(model, X, y, u, np.random.default_rng(0), epochs=100)
    full = fit(obj, p0, FitConfig(epochs=150, stride=10, lr=0.01))
    wins, seeds = 0, range(10)
    for seed in seeds:
        rng = np.random.default_rng(100 + seed)
        rows = rng.integers(0, y.size, y.size)
        sub = PinnModel(model.spec).prepare(X[rows])
        rep_obj = Objective(sub, X[rows], y[rows], LossSpec("bgev_pp"), u=u[rows])
        cold = sub.init_params(np.random.default_rng(seed), {"q": float(np.median(y)), "s": 1.0, "xi": 0.2})
        warm = warm_start(full.best, cold)
        one = FitConfig(epochs=1, stride=1, lr=0.01)
        if fit(rep_obj, warm, one).train_losses[0] < fit(rep_obj, cold, one).train_losses[0]:
            wins += 1
    assert wins >= 0.8 * len(seeds)


# -- thresholds -----------------------------------------------------------------------------


def threshold_model(X):
    part = PredictorPartition(linear=tuple(range(X.shape[1])))
    return PinnModel(ModelSpec(X.shape[1], (SurfaceSpec("u", "identity", part),))).prepare(X)


def test_threshold_of_constant_response():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 2))
    y = np.full(200, 3.5)
    model = threshold_model(X)
    obj = Objective(model, X, y, LossSpec("tilted", tau=0.8))
    rep = fit(obj, model.init_params(rng), FitConfig(epochs=3000, stride=50, lr=0.01))
    u = estimate_threshold(model, rep.params, X)
    np.testing.assert_allclose(u, 3.5, atol=0.02)


def test_threshold_exceedance_rate_matches_level():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(4000, 2))
    y = 2.0 + X[:, 0] + rng.gumbel(size=4000)
    model = threshold_model(X)
    obj = Objective(model, X, y, LossSpec("tilted", tau=0.8))
    rep = fit(obj, model.init_params(rng, {"u": float(np.median(y))}), FitConfig(epochs=1500, stride=50, lr=0.02))
    u = estimate_threshold(model, rep.params, X)
    assert abs(np.mean(y > u) - 0.2) <= 0.02


def test_network_threshold_model_trains():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 3))
    y = np.exp(X[:, 0]) + rng.exponential(size=300)
    model = PinnModel(single_surface_spec("u", "identity", 3, mlp((4,)))).prepare(X)
    obj = Objective(model, X, y, LossSpec("tilted", tau=0.8))
    rep = fit(obj, model.init_params(rng, {"u": float(np.median(y))}), FitConfig(epochs=200, stride=10, lr=0.02))
    assert rep.best.loss < rep.saves[0][1]


# -- constant fit, aligned start and Newton steps -----------------------------------------------


def test_constant_pp_fit_recovers_intercepts():
    from pinnex.simgen import sample_pp_response

    n, est = 20_000, []
    for seed in range(6):
        y, u = sample_pp_response(np.full(n, 2.0), np.full(n, 1.5), 0.2, 0.9, np.random.default_rng(seed))
        e = constant_pp_fit(y, u, epochs=800)
        est.append([e["q"], e["s"], e["xi"]])
    # replicate means, single-replicate spread is about (0.1, 0.1, 0.03)
    assert np.all(np.abs(np.mean(est, axis=0) - [2.0, 1.5, 0.2]) <= [0.12, 0.12, 0.04])


def newton_setup(seed=0, n=3000):
    from pinnex.simgen import sample_pp_response

    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    q = 1.0 + 0.8 * X[:, 0] + 0.3 * X[:, 1] ** 2
    s = np.exp(0.2 + 0.3 * X[:, 0])
    y, u = sample_pp_response(q, s, 0.2, 0.9, rng)
    spec = bgev_model_spec("lin+GAM", 3, (), n_knots=5, smoothing=0.01, q_split=((0,), ()), s_split=((0,), ()))
    model = PinnModel(spec).prepare(X)
    return model, X, y, u, rng


def test_newton_hessian_matches_finite_differences():
    model, X, y, u, rng = newton_setup(n=400)
    nt = PpNewton(model, X, y, u)
    p0 = aligned_start(model, X, y, u, rng, epochs=50)
    v = nt.pack(p0)
    H = nt.hessian(v)
    h = 1e-5
    fd = np.empty_like(H)
    for i in range(v.size):
        e = np.zeros(v.size)
        e[i] = h
        fd[i] = (nt.loss_grad(v + e)[1] - nt.loss_grad(v - e)[1]) / (2 * h)
    np.testing.assert_allclose(H, 0.5 * (fd + fd.T), rtol=1e-5, atol=1e-5 * np.abs(H).max())


def test_newton_gradient_matches_objective():
    model, X, y, u, rng = newton_setup(n=400)
    nt = PpNewton(model, X, y, u)
    p0 = aligned_start(model, X, y, u, rng, epochs=50)
    obj = Objective(model, X, y, LossSpec("bgev_pp"), u=u)
    loss, grad = nt.loss_grad(nt.pack(p0))
    assert loss == pytest.approx(obj.value(p0), rel=1e-12)
    leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in p0.items()}
    with ad.Tape() as tape:
        out = obj(leaves)
    g = tape.gradient(out, leaves)
    np.testing.assert_allclose(grad, np.concatenate([np.ravel(g[k]) for k in nt.keys]), rtol=1e-10, atol=1e-10)


def test_newton_fit_reaches_stationary_point():
    model, X, y, u, rng = newton_setup()
    nt = PpNewton(model, X, y, u)
    p0 = aligned_start(model, X, y, u, rng, epochs=100)
    p1, info = nt.fit(p0, max_iter=100)
    assert info["loss"] < nt.loss_grad(nt.pack(p0))[0]
    assert np.max(np.abs(nt.loss_grad(nt.pack(p1))[1])) < 1e-3
    coef = model.linear_coefficients(p1, "q")
    assert coef["x_1"] == pytest.approx(0.8, abs=0.15)


def test_newton_rejects_network_models():
    model, X, y, u = pp_setup()
    with pytest.raises(ValueError):
        PpNewton(model, X, y, u)


# -- cross-validation folds ------------------------------------------------------------------


def fold_grid(seed=0, T=20, S=30):
    rng = np.random.default_rng(seed)
    lat = rng.uniform(30, 40, S)
    lon = rng.uniform(-110, -100, S)
    observed = rng.uniform(size=(T, S)) < 0.8
    return lat, lon, np.arange(T), observed


def test_zero_distance_correlation_is_one():
    assert separable_correlation(0.0, 0.0) == 1.0


def test_spatial_factor_at_one_hundred_miles():
    dlat = math.degrees(100.0 / 3958.8)
    d = great_circle_miles(np.array([10.0, 10.0 + dlat]), np.array([20.0, 20.0]))[0, 1]
    assert d == pytest.approx(100.0, rel=1e-12)
    assert separable_correlation(d, 0) == pytest.approx(math.exp(-1), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 1000), st.integers(2, 7))
def test_folds_partition_observed_cells(seed, K):
    lat, lon, times, observed = fold_grid(seed)
    plan = make_cv_folds(lat, lon, times, observed, K=K, seed=seed)
    labels = plan.labels
    assert np.all((labels > 0) == observed)
    assert set(np.unique(labels[observed])) <= set(range(1, K + 1))
    for start in range(0, len(times), 9):
        block = labels[start:start + 9]
        n = int(observed[start:start + 9].sum())
        for k in range(1, K + 1):
            assert abs(int((block == k).sum()) - n / K) <= 1


def test_folds_reproducible_from_seed():
    lat, lon, times, observed = fold_grid()
    a = make_cv_folds(lat, lon, times, observed, seed=4).labels
    b = make_cv_folds(lat, lon, times, observed, seed=4).labels
    np.testing.assert_array_equal(a, b)


def test_folds_handle_duplicate_sites():
    lat, lon, times, observed = fold_grid(S=10)
    lat[1], lon[1] = lat[0], lon[0]
    plan = make_cv_folds(lat, lon, times, observed)
    assert np.all((plan.labels > 0) == observed)


def test_training_trajectory_ignores_validation_responses():
    model, X, y, u = pp_setup()
    val = np.arange(y.size) % 5 == 0
    p0 = model.init_params(np.random.default_rng(0), {"q": 1.0, "s": 1.0, "xi": 0.2})
    cfg = FitConfig(epochs=15, stride=5, lr=0.01)
    a = fit(Objective(model, X, y, LossSpec("bgev_pp"), observed=~val, u=u), p0, cfg)
    poisoned = np.where(val, np.nan, y)
    b = fit(Objective(model, X, poisoned, LossSpec("bgev_pp"), observed=~val, u=u), p0, cfg)
    assert a.train_losses == b.train_losses
