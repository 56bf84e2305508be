"""Tests for counthmm.model: series container, parameter types, transforms."""

import numpy as np
import pytest

from counthmm.model import (
    CountSeries,
    HmmParams,
    UnconstrainedParams,
    from_unconstrained,
    n_free_parameters,
    pack_free,
    simulate,
    softmax_rows,
    stationary_distribution,
    to_unconstrained,
    unpack_free,
)


def test_from_sequence_basic():
    series = CountSeries.from_sequence([3, None, 5, 0], support_bound=8)
    np.testing.assert_array_equal(series.values, [3, 0, 5, 0])
    np.testing.assert_array_equal(series.missing, [False, True, False, False])
    assert series.support_bound == 8
    assert len(series) == 4
    assert series.n_observed == 3
    np.testing.assert_array_equal(series.observed_values(), [3, 5, 0])


def test_from_sequence_nan_marks_missing():
    series = CountSeries.from_sequence([1.0, float("nan"), 2.0])
    np.testing.assert_array_equal(series.missing, [False, True, False])
    # default bound is the largest observed count
    assert series.support_bound == 2


def test_from_sequence_rejects_bad_input():
    with pytest.raises(ValueError):
        CountSeries.from_sequence([1, 2.5, 3])
    with pytest.raises(ValueError):
        CountSeries.from_sequence([-1, 2])
    with pytest.raises(ValueError):
        CountSeries.from_sequence([1, 9], support_bound=5)
    with pytest.raises(ValueError):
        CountSeries.from_sequence([None, None])


def test_with_missing_and_keep_only():
    series = CountSeries.from_sequence([3, None, 5, 0], support_bound=8)
    masked = series.with_missing([0])
    np.testing.assert_array_equal(masked.missing, [True, True, False, False])
    # original is untouched
    np.testing.assert_array_equal(series.missing, [False, True, False, False])
    kept = series.keep_only([1, 2])
    # position 1 was already missing and stays missing
    np.testing.assert_array_equal(kept.missing, [True, True, False, True])
    np.testing.assert_array_equal(kept.observed_values(), [5])


def test_hmm_params_validation():
    gamma = [[0.9, 0.1], [0.2, 0.8]]
    pmfs = [[0.5, 0.3, 0.2], [0.1, 0.2, 0.7]]
    params = HmmParams(gamma, [0.5, 0.5], pmfs)
    assert params.n_states == 2
    assert params.support_bound == 2
    with pytest.raises(ValueError):
        HmmParams([[0.9, 0.2], [0.2, 0.8]], [0.5, 0.5], pmfs)
    with pytest.raises(ValueError):
        HmmParams(gamma, [0.7, 0.5], pmfs)
    # (0.5, 0.5) is not stationary for this gamma
    with pytest.raises(ValueError):
        HmmParams(gamma, [0.5, 0.5], pmfs, stationary=True)


def test_with_stationary_delta():
    gamma = [[0.9, 0.1], [0.2, 0.8]]
    pmfs = [[0.5, 0.3, 0.2], [0.1, 0.2, 0.7]]
    params = HmmParams.with_stationary_delta(gamma, pmfs)
    # balance: 0.1 * d0 = 0.2 * d1 with d0 + d1 = 1
    np.testing.assert_allclose(params.delta, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)
    assert params.stationary


def test_stationary_distribution_hand_case():
    delta = stationary_distribution([[0.9, 0.1], [0.2, 0.8]])
    np.testing.assert_allclose(delta, [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_stationary_distribution_rejects_reducible_chain():
    with pytest.raises(ValueError):
        stationary_distribution(np.eye(2))


def test_n_free_parameters():
    # 2 off-diagonals + 2 * 2 pmf entries, plus 1 free delta entry
    assert n_free_parameters(2, 2, stationary=True) == 6
    assert n_free_parameters(2, 2, stationary=False) == 7
    assert n_free_parameters(3, 10, stationary=True) == 6 + 30


def test_pack_unpack_round_trip():
    u = UnconstrainedParams(
        gamma_star=[[0.0, 0.3], [-0.4, 0.0]],
        pmf_star=[[0.0, 1.0, 2.0], [0.0, -1.0, 0.5]],
        delta_star=[0.0, 0.7],
    )
    vec = pack_free(u)
    np.testing.assert_array_equal(vec, [0.3, -0.4, 0.7, 1.0, 2.0, -1.0, 0.5])
    back = unpack_free(vec, 2, 2, stationary=False)
    np.testing.assert_array_equal(back.gamma_star, u.gamma_star)
    np.testing.assert_array_equal(back.delta_star, u.delta_star)
    np.testing.assert_array_equal(back.pmf_star, u.pmf_star)
    with pytest.raises(ValueError):
        unpack_free(vec, 2, 2, stationary=True)


def test_unconstrained_pins_are_enforced():
    with pytest.raises(ValueError):
        UnconstrainedParams([[0.1, 0.3], [-0.4, 0.0]], [[0.0, 1.0], [0.0, 2.0]])
    with pytest.raises(ValueError):
        UnconstrainedParams([[0.0, 0.3], [-0.4, 0.0]], [[0.5, 1.0], [0.0, 2.0]])
    with pytest.raises(ValueError):
        UnconstrainedParams(
            [[0.0, 0.3], [-0.4, 0.0]], [[0.0, 1.0], [0.0, 2.0]], [0.2, 0.7]
        )


def test_softmax_rows_hand_case():
    row = np.log([[1.0, 2.0, 3.0]])
    np.testing.assert_allclose(
        softmax_rows(row), [[1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]], atol=1e-15
    )


def test_from_unconstrained_hand_case():
    u = UnconstrainedParams(
        gamma_star=[[0.0, np.log(1.0 / 3.0)], [np.log(0.25), 0.0]],
        pmf_star=[[0.0, 0.0], [0.0, np.log(3.0)]],
    )
    params = from_unconstrained(u)
    np.testing.assert_allclose(params.gamma, [[0.75, 0.25], [0.2, 0.8]], atol=1e-12)
    np.testing.assert_allclose(params.pmfs, [[0.5, 0.5], [0.25, 0.75]], atol=1e-12)
    # balance: 0.25 * d0 = 0.2 * d1
    np.testing.assert_allclose(params.delta, [4.0 / 9.0, 5.0 / 9.0], atol=1e-12)
    assert params.stationary


def test_transform_round_trip():
    gamma = [[0.85, 0.1, 0.05], [0.3, 0.6, 0.1], [0.25, 0.25, 0.5]]
    pmfs = [
        [0.2, 0.3, 0.1, 0.4],
        [0.25, 0.25, 0.25, 0.25],
        [0.05, 0.15, 0.35, 0.45],
    ]
    params = HmmParams(gamma, [0.2, 0.5, 0.3], pmfs)
    back = from_unconstrained(to_unconstrained(params))
    np.testing.assert_allclose(back.gamma, params.gamma, atol=1e-10)
    np.testing.assert_allclose(back.delta, params.delta, atol=1e-10)
    np.testing.assert_allclose(back.pmfs, params.pmfs, atol=1e-10)


def test_simulate_deterministic_chain():
    # delta puts all mass on state 1 and state 1 is absorbing with a
    # one-point pmf, so every draw is forced
    params = HmmParams(
        gamma=[[0.5, 0.5], [0.0, 1.0]],
        delta=[0.0, 1.0],
        pmfs=[[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]],
    )
    states, series = simulate(params, 6, seed=0)
    np.testing.assert_array_equal(states, [1, 1, 1, 1, 1, 1])
    np.testing.assert_array_equal(series.values, [2, 2, 2, 2, 2, 2])
    assert not series.missing.any()
    assert series.support_bound == 2


def test_simulate_reproducible_and_in_range():
    params = HmmParams.with_stationary_delta(
        [[0.9, 0.1], [0.2, 0.8]],
        [[0.5, 0.3, 0.2], [0.1, 0.2, 0.7]],
    )
    states_a, series_a = simulate(params, 200, seed=42)
    states_b, series_b = simulate(params, 200, seed=42)
    np.testing.assert_array_equal(states_a, states_b)
    np.testing.assert_array_equal(series_a.values, series_b.values)
    assert states_a.min() >= 0 and states_a.max() <= 1
    assert series_a.values.min() >= 0 and series_a.values.max() <= 2
    states_c, _ = simulate(params, 200, seed=43)
    assert not np.array_equal(states_a, states_c)
    with pytest.raises(ValueError):
        simulate(params, 0, seed=1)
