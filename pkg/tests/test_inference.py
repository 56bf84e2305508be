"""Tests for counthmm.inference: decoding, residuals, comparison metrics."""

import itertools

import numpy as np
import pytest
from scipy.stats import norm

from counthmm.inference import (
    conditional_distributions,
    kld,
    misclassification_rate,
    pseudo_residuals,
    state_probabilities,
    transition_mae,
    viterbi,
)
from counthmm.model import CountSeries, HmmParams


def enumeration_viterbi(params, data):
    """Brute-force most probable path; first maximum is lexicographically least."""
    n, big_t = params.n_states, len(data)
    best_path, best_prob = None, -1.0
    for path in itertools.product(range(n), repeat=big_t):
        prob = params.delta[path[0]]
        for t in range(1, big_t):
            prob *= params.gamma[path[t - 1], path[t]]
        for t in range(big_t):
            if not data.missing[t]:
                prob *= params.pmfs[path[t], data.values[t]]
        if prob > best_prob:
            best_path, best_prob = path, prob
    return np.array(best_path), best_prob


def random_instance(rng, n, big_t, k, missing_rate=0.0):
    params = HmmParams(
        rng.dirichlet(np.ones(n), size=n),
        rng.dirichlet(np.ones(n)),
        rng.dirichlet(np.ones(k + 1), size=n),
    )
    values = rng.integers(0, k + 1, size=big_t)
    missing = rng.random(big_t) < missing_rate
    return params, CountSeries(values, missing, k)


def test_viterbi_hand_case():
    params = HmmParams(
        [[0.7, 0.3], [0.4, 0.6]], [0.6, 0.4], [[0.8, 0.2], [0.1, 0.9]]
    )
    data = CountSeries.from_sequence([0, 1], support_bound=1)
    result = viterbi(params, data)
    # path probabilities: (0,0) 0.0672, (0,1) 0.1296, (1,0) 0.0032, (1,1) 0.0216
    np.testing.assert_array_equal(result.states, [0, 1])
    assert result.joint_log_prob == pytest.approx(np.log(0.1296), abs=1e-12)


def test_viterbi_matches_enumeration():
    rng = np.random.default_rng(13)
    for _ in range(25):
        n = int(rng.integers(1, 4))
        big_t = int(rng.integers(1, 8))
        k = int(rng.integers(1, 4))
        params, data = random_instance(rng, n, big_t, k, missing_rate=0.2)
        expected_path, expected_prob = enumeration_viterbi(params, data)
        result = viterbi(params, data)
        np.testing.assert_array_equal(result.states, expected_path)
        assert result.joint_log_prob == pytest.approx(np.log(expected_prob), abs=1e-9)


def test_viterbi_total_tie_takes_lexicographic_least():
    # identical emissions and a symmetric chain tie every path
    params = HmmParams(
        [[0.5, 0.5], [0.5, 0.5]], [0.5, 0.5], [[0.3, 0.7], [0.3, 0.7]]
    )
    data = CountSeries.from_sequence([1, 0, 1, 1], support_bound=1)
    result = viterbi(params, data)
    np.testing.assert_array_equal(result.states, [0, 0, 0, 0])


def test_viterbi_zero_probability_raises():
    params = HmmParams(
        [[0.7, 0.3], [0.4, 0.6]], [0.5, 0.5], [[1.0, 0.0], [1.0, 0.0]]
    )
    with pytest.raises(ValueError):
        viterbi(params, CountSeries.from_sequence([1], support_bound=1))


def test_state_probabilities_rows_are_distributions():
    rng = np.random.default_rng(2)
    params, data = random_instance(rng, 3, 15, 4, missing_rate=0.2)
    post = state_probabilities(params, data)
    assert post.shape == (15, 3)
    np.testing.assert_allclose(post.sum(axis=1), np.ones(15), atol=1e-12)
    assert np.all(post >= 0.0)


def test_conditional_distribution_single_point():
    # with T=1 the conditional distribution is the delta-mixture of the pmfs
    params = HmmParams(
        [[0.7, 0.3], [0.4, 0.6]], [0.6, 0.4], [[0.8, 0.2], [0.1, 0.9]]
    )
    data = CountSeries.from_sequence([0], support_bound=1)
    cond = conditional_distributions(params, data)
    np.testing.assert_allclose(cond, [[0.52, 0.48]], atol=1e-12)


def test_pseudo_residuals_hand_case():
    params = HmmParams(
        [[0.7, 0.3], [0.4, 0.6]], [0.6, 0.4], [[0.8, 0.2], [0.1, 0.9]]
    )
    res = pseudo_residuals(params, CountSeries.from_sequence([0], support_bound=1))
    assert res.saturated_low[0] and not res.saturated_high[0]
    assert res.lower[0] == -np.inf
    assert res.upper[0] == pytest.approx(norm.ppf(0.52), abs=1e-12)
    assert res.mid[0] == pytest.approx(norm.ppf(0.26), abs=1e-12)
    res = pseudo_residuals(params, CountSeries.from_sequence([1], support_bound=1))
    assert res.saturated_high[0] and not res.saturated_low[0]
    assert res.upper[0] == np.inf
    assert res.lower[0] == pytest.approx(norm.ppf(0.52), abs=1e-12)
    assert res.mid[0] == pytest.approx(norm.ppf(0.76), abs=1e-12)


def test_pseudo_residuals_require_fully_observed():
    params = HmmParams(
        [[0.7, 0.3], [0.4, 0.6]], [0.6, 0.4], [[0.8, 0.2], [0.1, 0.9]]
    )
    with pytest.raises(ValueError):
        pseudo_residuals(params, CountSeries.from_sequence([0, None], support_bound=1))


def test_kld_hand_case():
    value = kld([[0.5, 0.5, 0.0]], [[0.25, 0.75, 0.0]])
    expected = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
    np.testing.assert_allclose(value, [expected], atol=1e-12)
    # zero established mass contributes nothing even where the estimate is positive
    np.testing.assert_allclose(kld([[1.0, 0.0]], [[0.5, 0.5]]), [np.log(2.0)], atol=1e-12)
    # zero estimated mass is floored rather than infinite
    np.testing.assert_allclose(kld([[1.0, 0.0]], [[0.0, 1.0]]), [np.log(1e12)], rtol=1e-10)
    with pytest.raises(ValueError):
        kld([[0.5, 0.5]], [[0.5, 0.25, 0.25]])


def test_transition_mae_hand_case():
    errors = transition_mae([[0.9, 0.1], [0.2, 0.8]], [[0.85, 0.15], [0.3, 0.7]])
    np.testing.assert_allclose(errors, [[0.05, 0.05], [0.1, 0.1]], atol=1e-12)
    with pytest.raises(ValueError):
        transition_mae(np.eye(2), np.eye(3))


def test_misclassification_rate_permutation_invariant():
    assert misclassification_rate([0, 0, 1, 1], [1, 1, 0, 0]) == 0.0
    assert misclassification_rate([0, 1, 0], [0, 0, 0]) == pytest.approx(1.0 / 3.0)
    # three states, decoded with labels rotated
    true = np.array([0, 1, 2, 0, 1, 2])
    rotated = (true + 1) % 3
    assert misclassification_rate(rotated, true) == 0.0
