import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinnex.resample import BootstrapPlan, envelope, stationary_bootstrap, stationary_bootstrap_indices


@settings(max_examples=60)
@given(st.integers(1, 80), st.floats(1.0, 20.0), st.integers(0, 10_000))
def test_lengths_and_index_range(T, m, seed):
    idx = stationary_bootstrap_indices(T, m, np.random.default_rng(seed))
    assert idx.shape == (T,)
    assert idx.min() >= 0 and idx.max() <= T - 1


@settings(max_examples=40)
@given(st.integers(2, 60), st.floats(1.0, 10.0), st.integers(0, 10_000))
def test_blocks_are_wrapped_runs(T, m, seed):
    idx, blocks = stationary_bootstrap_indices(T, m, np.random.default_rng(seed), return_blocks=True)
    pos = 0
    for length in blocks:
        run = idx[pos:pos + length]
        # consecutive time points, wrapping from the last back to the first
        assert np.all((np.diff(run) % T) == 1)
        pos += length
        if pos >= T:
            break


def test_unit_mean_block_is_iid_resampling():
    idx, blocks = stationary_bootstrap_indices(50, 1.0, np.random.default_rng(0), return_blocks=True)
    assert blocks == [1] * 50


def test_mean_block_length():
    rng = np.random.default_rng(1)
    for m in (2.0, 5.0):
        lengths = []
        for _ in range(10_000):
            _, blocks = stationary_bootstrap_indices(40, m, rng, return_blocks=True)
            lengths.extend(blocks)
        assert abs(np.mean(lengths) - m) <= 0.05 * m


def test_marginal_frequencies_uniform():
    T, R = 24, 4000
    plan = BootstrapPlan(replicates=R, mean_block=4.0, seed=2)
    counts = np.bincount(np.concatenate(stationary_bootstrap(T, plan)), minlength=T)
    expected = R  # each replicate has T draws spread over T indices
    # block draws are dependent; allow a generous multiple of the i.i.d. standard error
    assert np.all(np.abs(counts - expected) < 6 * np.sqrt(expected * 4.0))


def test_plan_reproducible_and_seed_dependent():
    a = stationary_bootstrap(30, BootstrapPlan(5, 3.0, seed=7))
    b = stationary_bootstrap(30, BootstrapPlan(5, 3.0, seed=7))
    c = stationary_bootstrap(30, BootstrapPlan(5, 3.0, seed=8))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))
    assert len(a) == 5


def test_plan_validation():
    with pytest.raises(ValueError):
        BootstrapPlan(replicates=0)
    with pytest.raises(ValueError):
        BootstrapPlan(mean_block=0.5)
    with pytest.raises(ValueError):
        stationary_bootstrap_indices(0, 2.0, np.random.default_rng(0))


def test_envelope_median_and_bounds():
    samples = np.arange(101, dtype=float)[:, None] * np.array([1.0, -1.0])
    env = envelope(samples, (0.025, 0.5, 0.975))
    np.testing.assert_allclose(env[0.5], [50.0, -50.0])
    np.testing.assert_allclose(env[0.025], [2.5, -97.5])
    np.testing.assert_allclose(env[0.975], [97.5, -2.5])
