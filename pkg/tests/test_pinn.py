import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from pinnex import autodiff as ad
from pinnex.forms import bgev_model_spec, cnn, mlp, table_one_spec
from pinnex.pinn.network import (
    LayerSpec,
    conv_forward,
    dense_forward,
    init_network,
    network_forward,
    pad_domain,
    recurrent_forward,
    recurrent_valid_times,
)
from pinnex.pinn.prep import fit_standardization, place_knots, standardize
from pinnex.pinn.spline import penalty_matrix, penalty_value, spline_eval, tps_basis
from pinnex.pinn.surface import (
    ModelSpec,
    PinnModel,
    PredictorPartition,
    SurfaceSpec,
    apply_link,
    count_params,
    eval_theta,
)

# -- standardisation and knots -----------------------------------------------------------------


def test_standardize_sample_sd():
    z, stats = standardize(np.array([[1.0], [2.0], [3.0]]))
    np.testing.assert_allclose(z[:, 0], [-1.0, 0.0, 1.0], atol=1e-15)
    assert stats.sd[0] == 1.0


def test_standardize_is_idempotent_on_standard_columns():
    rng = np.random.default_rng(0)
    z, _ = standardize(rng.normal(size=(50, 3)))
    z2, stats = standardize(z)
    np.testing.assert_allclose(z2, z, atol=1e-12)
    np.testing.assert_allclose(stats.mean, 0, atol=1e-12)
    np.testing.assert_allclose(stats.sd, 1, atol=1e-12)


def test_standardize_constant_column_names_feature():
    with pytest.raises(ValueError, match="elev"):
        fit_standardization(np.array([[1.0, 2.0], [1.0, 3.0]]), names=["elev", "wind"])


@settings(max_examples=50)
@given(st.integers(2, 60), st.integers(0, 10_000))
def test_standardized_training_columns_have_unit_moments(n, seed):
    x = np.random.default_rng(seed).normal(3.0, 7.0, size=(n, 2))
    z, _ = standardize(x)
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(z.std(axis=0, ddof=1), 1, atol=1e-10)


def test_knots_strictly_increasing_with_ties():
    x = np.r_[np.zeros(90), np.linspace(1, 2, 10)]
    k = place_knots(x, 20)
    assert k.size == 20 and np.all(np.diff(k) > 0)


# -- splines ------------------------------------------------------------------------------


def test_tps_basis_values():
    assert tps_basis(np.array([3.0]), np.array([1.0]))[0, 0] == pytest.approx(4 * math.log(2), abs=1e-15)
    assert tps_basis(np.array([2.0]), np.array([1.0]))[0, 0] == 0.0
    assert tps_basis(np.array([1.0]), np.array([1.0]))[0, 0] == 0.0


def test_spline_eval_zero_weights():
    basis = tps_basis(np.linspace(0, 1, 7), np.array([0.0, 0.5, 1.0]))
    np.testing.assert_array_equal(spline_eval(basis, np.zeros(3)), np.zeros(7))


def test_penalty_values():
    S = penalty_matrix(np.array([0.0, 2.0]))
    assert penalty_value(np.ones(2), S, 1.0) == pytest.approx(4 * math.log(2), abs=1e-14)
    assert penalty_value(np.zeros(2), S, 1.0) == 0.0
    assert penalty_value(np.ones(2), S, 0.0) == 0.0


# -- layers ---------------------------------------------------------------------------------


def test_dense_forward_values():
    out = dense_forward(np.array([2.0, 1.0]), np.array([[1.0], [-1.0]]), np.array([0.5]))
    assert out[0] == 1.5
    assert dense_forward(np.array([0.0, 1.0]), np.array([[1.0], [-1.0]]), np.array([0.5]))[0] == 0.0
    np.testing.assert_array_equal(dense_forward(np.ones((4, 3)), np.zeros((3, 2)), np.zeros(2)), 0.0)


def test_dense_shape_mismatch():
    with pytest.raises(ValueError):
        dense_forward(np.ones(3), np.ones((2, 1)), np.zeros(1))


def test_conv_delta_filter_reproduces_input():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 4, 3))
    W = np.zeros((3, 3, 3, 3))
    for c in range(3):
        W[1, 1, c, c] = 1.0
    out = conv_forward(x, W, np.zeros(3), "identity")
    np.testing.assert_array_equal(out, x)


def test_conv_zero_input_gives_activated_bias():
    out = conv_forward(np.zeros((1, 6, 6, 2)), np.ones((3, 3, 2, 2)), np.array([-1.0, 0.7]), "relu")
    np.testing.assert_array_equal(out[..., 0], 0.0)
    np.testing.assert_array_equal(out[..., 1], 0.7)


def test_conv_all_ones_on_ramp_gives_neighbourhood_sums():
    ramp = np.arange(25, dtype=float).reshape(5, 5)
    out = conv_forward(ramp[None, :, :, None], np.ones((3, 3, 1, 1)), np.zeros(1), "identity")
    ref = ndimage.correlate(ramp, np.ones((3, 3)), mode="constant", cval=0.0)
    np.testing.assert_array_equal(out[0, :, :, 0], ref)


def test_conv_requires_grid():
    with pytest.raises(ValueError):
        conv_forward(np.ones((5, 3)), np.ones((3, 3, 3, 1)), np.zeros(1))


def test_pad_domain():
    assert pad_domain((10, 10), cnn((4,), (3, 3))) == (12, 12)
    assert pad_domain((10, 10), mlp((4, 2))) == (10, 10)
    assert pad_domain((10, 10), (LayerSpec("conv", 2, filter=(3, 3)), LayerSpec("conv", 2, filter=(5, 5)))) == (14, 14)


def test_delta_conv_stack_equals_mlp():
    rng = np.random.default_rng(4)
    conv_layers = (LayerSpec("conv", 4, filter=(3, 3)), LayerSpec("conv", 3, filter=(5, 5)))
    dense_layers = mlp((4, 3))
    x = rng.normal(size=(3, 6, 7, 5))
    dense_params = init_network(dense_layers, 5, rng)
    conv_params = {"out": dense_params["out"]}
    for j, spec in enumerate(conv_layers):
        W = dense_params[f"{j}.W"]
        bank = np.zeros(spec.filter + W.shape)
        bank[spec.filter[0] // 2, spec.filter[1] // 2] = W
        conv_params[f"{j}.W"], conv_params[f"{j}.b"] = bank, dense_params[f"{j}.b"] + 0.1
        dense_params[f"{j}.b"] = dense_params[f"{j}.b"] + 0.1
    a = network_forward(x, conv_params, conv_layers)
    b = network_forward(x, dense_params, dense_layers)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_recurrent_reduces_to_dense():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(6, 4, 3))
    W, b = rng.normal(size=(3, 2)), rng.normal(size=2)
    out = recurrent_forward(x, W, np.zeros((2, 2)), b, 0, 0)
    np.testing.assert_allclose(out, dense_forward(x, W, b), atol=1e-15)
    lagged = recurrent_forward(x, W, np.zeros((2, 2)), b, 2, 0)
    np.testing.assert_allclose(lagged[2:], dense_forward(x, W, b)[2:], atol=1e-15)


def test_recurrent_two_step_unrolled():
    x = np.array([[2.0], [3.0]])
    out = recurrent_forward(x, np.array([[1.0]]), np.array([[0.5]]), np.zeros(1), 1, 0, "identity")
    assert out[1, 0] == 3.0 + 0.5 * 2.0
    assert out[0, 0] == 0.0
    ahead = recurrent_forward(x, np.array([[1.0]]), np.array([[0.5]]), np.zeros(1), 0, 1, "identity")
    assert ahead[0, 0] == 4.0


def test_recurrent_window_errors_and_mask():
    with pytest.raises(ValueError):
        recurrent_forward(np.ones((2, 1)), np.ones((1, 1)), np.ones((1, 1)), np.zeros(1), 2, 0)
    valid = recurrent_valid_times(6, (LayerSpec("recurrent", 2, lookback=2, lookahead=1),))
    assert valid.tolist() == [False, False, True, True, True, False]


# -- surfaces -------------------------------------------------------------------------------


def toy_model(links=("identity", "exp", "logistic"), layers=mlp((3,)), seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, 5))
    part = PredictorPartition(linear=(0,), additive=(1,), network=(2, 3, 4))
    spec = ModelSpec(5, (SurfaceSpec("q", links[0], part, 4, 0.0, layers),
                         SurfaceSpec("s", links[1], part, 4, 0.0, layers),
                         SurfaceSpec("xi", links[2])))
    return PinnModel(spec).prepare(X), X, rng


def test_zero_components_give_intercept():
    model, X, rng = toy_model()
    params = {k: np.zeros(v) for k, v in model.spec.param_shapes().items()}
    params["q.eta0"] = np.array(1.25)
    th = eval_theta(model, params, X)
    np.testing.assert_array_equal(th["q"], 1.25)
    np.testing.assert_array_equal(th["s"], 1.0)
    assert float(th["xi"]) == 0.5


def test_links_keep_range():
    assert float(apply_link(np.array(-50.0), "exp")) > 0
    assert float(apply_link(np.array(-1000.0), "exp")) > 0
    v = float(apply_link(np.array(30.0), "logistic"))
    assert 0 < v < 1


def test_component_sum_on_two_cells():
    model, X, rng = toy_model()
    params = model.init_params(rng)
    params["q.eta0"] = np.array(0.3)
    params["q.eta"] = np.array([0.7])
    params["q.omega"] = rng.normal(size=4)
    X2 = X[:2]
    th = eval_theta(model, params, X2)
    # rebuild each component from raw inputs
    z = (X2 - model.x_stats.mean) / model.x_stats.sd
    st_ = model.states["q"]
    raw_basis = tps_basis(X2[:, 1], st_.knots[0])
    basis = (raw_basis - st_.basis_stats.mean) / st_.basis_stats.sd
    hidden = np.maximum(z[:, 2:] @ params["q.net.0.W"] + params["q.net.0.b"], 0)
    expected = 0.3 + 0.7 * z[:, 0] + basis @ params["q.omega"] + hidden @ params["q.net.out"]
    np.testing.assert_allclose(th["q"], expected, atol=1e-13)


def test_network_permutation_symmetry():
    model, X, rng = toy_model()
    params = model.init_params(rng)
    perm = [2, 0, 1]
    spec = model.spec
    part = PredictorPartition(linear=(0,), additive=(1,), network=tuple(np.array([2, 3, 4])[perm]))
    spec2 = ModelSpec(5, (SurfaceSpec("q", "identity", part, 4, 0.0, mlp((3,))),
                          SurfaceSpec("s", "exp", part, 4, 0.0, mlp((3,))), spec.surface("xi")))
    model2 = PinnModel(spec2).prepare(X)
    p2 = dict(params)
    for name in ("q", "s"):
        p2[f"{name}.net.0.W"] = params[f"{name}.net.0.W"][perm]
    a, b = eval_theta(model, params, X), eval_theta(model2, p2, X)
    np.testing.assert_allclose(a["q"], b["q"], atol=1e-13)
    np.testing.assert_allclose(a["s"], b["s"], atol=1e-13)


@pytest.mark.parametrize("form,expected", [("fully-linear", 43), ("fully-GAM", 803), ("fully-NN", 603)])
def test_table_one_parameter_counts(form, expected):
    assert count_params(table_one_spec(form)) == expected


def test_count_params_matches_initialised_leaves():
    for form in ("lin+GAM+NN", "fully-NN", "GAM+NN"):
        spec = bgev_model_spec(form, 8, cnn((4, 3)), 5, q_split=((0,), (1,)), s_split=((2,), (3,)))
        X = np.random.default_rng(0).normal(size=(2, 6, 6, 8))
        params = PinnModel(spec).prepare(X).init_params(np.random.default_rng(0))
        assert sum(np.size(v) for v in params.values()) == count_params(spec)


def test_prediction_reuses_training_stats():
    model, X, rng = toy_model()
    before = (model.x_stats.mean.tobytes(), model.states["q"].basis_stats.sd.tobytes())
    eval_theta(model, model.init_params(rng), X[:5] * 3.0 + 1.0)
    after = (model.x_stats.mean.tobytes(), model.states["q"].basis_stats.sd.tobytes())
    assert before == after


def test_state_dict_round_trip_is_bitwise():
    model, X, rng = toy_model()
    params = model.init_params(rng)
    clone = PinnModel.from_state_dict(model.state_dict())
    a, b = eval_theta(model, params, X), eval_theta(clone, params, X)
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_partition_validation():
    with pytest.raises(ValueError):
        PredictorPartition(linear=(0, 1), additive=(1,)).validate(3)
    with pytest.raises(ValueError):
        PredictorPartition(linear=(5,)).validate(3)
    with pytest.raises(ValueError):
        SurfaceSpec("q", "identity", PredictorPartition(network=(0,)))
