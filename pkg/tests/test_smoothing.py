"""Tests for counthmm.smoothing: grid, folds, out-of-sample scores, search."""

import numpy as np
import pytest

from counthmm.estimation import FitConfig
from counthmm.model import CountSeries, HmmParams, simulate
from counthmm.smoothing import CvGrid, FoldPlan, greedy_search, make_folds, oos_loglik


def test_grid_log10_axis():
    grid = CvGrid.log10(1, 4, 2)
    np.testing.assert_allclose(grid.axis, [10.0, 100.0, 1000.0, 10000.0])
    assert grid.dimension == 2
    assert grid.index_of(1000.0) == 2
    assert grid.values((0, 3)) == (10.0, 10000.0)
    with pytest.raises(ValueError):
        grid.index_of(55.5)


def test_grid_neighbors_prefer_larger_step_first():
    grid = CvGrid.log10(1, 3, 2)
    # interior point: +1 moves first (larger smoothing), then -1 moves
    assert grid.neighbors((1, 1)) == [(2, 1), (1, 2), (0, 1), (1, 0)]
    # corner points drop out-of-range moves
    assert grid.neighbors((0, 0)) == [(1, 0), (0, 1)]
    assert grid.neighbors((2, 2)) == [(1, 2), (2, 1)]


def test_grid_validation():
    with pytest.raises(ValueError):
        CvGrid([10.0, 10.0], 1)
    with pytest.raises(ValueError):
        CvGrid([10.0, 1.0], 1)
    with pytest.raises(ValueError):
        CvGrid([1.0, 10.0], 0)


def test_make_folds_partitions_exactly():
    plan = make_folds(107, 20, seed=0)
    sizes = sorted(a.size for a in plan.assignments)
    # 107 = 7 folds of 6 and 13 folds of 5
    assert sizes == [5] * 13 + [6] * 7
    combined = np.sort(np.concatenate(plan.assignments))
    np.testing.assert_array_equal(combined, np.arange(107))


def test_make_folds_reproducible():
    a = make_folds(50, 5, seed=3)
    b = make_folds(50, 5, seed=3)
    for x, y in zip(a.assignments, b.assignments):
        np.testing.assert_array_equal(x, y)
    c = make_folds(50, 5, seed=4)
    assert any(
        not np.array_equal(x, y) for x, y in zip(a.assignments, c.assignments)
    )
    with pytest.raises(ValueError):
        make_folds(3, 4)
    with pytest.raises(ValueError):
        make_folds(10, 1)


def test_fold_plan_rejects_non_partition():
    with pytest.raises(ValueError):
        FoldPlan(2, (np.array([0, 1]), np.array([1, 2])), seed=0)


def test_oos_loglik_single_state_hand_case():
    # training without position 1 gives the uniform MLE on {0,1,2}, so the
    # held-out observation scores log(1/3)
    data = CountSeries.from_sequence([0, 0, 1, 2], support_bound=2)
    config = FitConfig(n_starts=1, stationary=False)
    score = oos_loglik([0.0], data, [1], 1, 1, config)
    assert score == pytest.approx(np.log(1.0 / 3.0), abs=1e-6)


def test_greedy_search_terminates_and_improves():
    truth = HmmParams(
        np.ones((1, 1)), np.ones(1), [[0.3, 0.25, 0.2, 0.15, 0.1]]
    )
    _, data = simulate(truth, 80, seed=12)
    grid = CvGrid([1.0, 10.0, 100.0], 1)
    plan = make_folds(len(data), 5, seed=0)
    config = FitConfig(n_starts=1, stationary=False)
    result = greedy_search(grid, data, 1, 2, plan, fit_config=config)
    assert result.best_lambda[0] in (1.0, 10.0, 100.0)
    scores = [s for _, s in result.path]
    assert all(b > a for a, b in zip(scores, scores[1:]))
    assert result.path[-1][0] == result.best_lambda
    assert result.per_fold_logliks.shape == (5,)
    assert result.per_fold_logliks.mean() == pytest.approx(scores[-1])


def test_greedy_search_deterministic():
    truth = HmmParams(
        np.ones((1, 1)), np.ones(1), [[0.3, 0.25, 0.2, 0.15, 0.1]]
    )
    _, data = simulate(truth, 80, seed=12)
    grid = CvGrid([1.0, 10.0, 100.0], 1)
    plan = make_folds(len(data), 5, seed=0)
    config = FitConfig(n_starts=1, stationary=False)
    a = greedy_search(grid, data, 1, 2, plan, fit_config=config)
    b = greedy_search(grid, data, 1, 2, plan, fit_config=config)
    assert a.best_lambda == b.best_lambda
    assert a.path == b.path


def test_greedy_search_respects_start_lambda():
    truth = HmmParams(
        np.ones((1, 1)), np.ones(1), [[0.3, 0.25, 0.2, 0.15, 0.1]]
    )
    _, data = simulate(truth, 60, seed=5)
    grid = CvGrid([1.0, 10.0, 100.0], 1)
    plan = make_folds(len(data), 4, seed=1)
    config = FitConfig(n_starts=1, stationary=False)
    result = greedy_search(
        grid, data, 1, 2, plan, start_lambda=(100.0,), fit_config=config
    )
    assert result.path[0][0] == (100.0,)
    with pytest.raises(ValueError):
        greedy_search(grid, data, 1, 2, plan, start_lambda=(55.0,), fit_config=config)
