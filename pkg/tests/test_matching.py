import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from naogat.losses import LossWeights, hungarian_match, matching_cost
from naogat.matching import CapacityError, match_cost_matrix, solve_assignment
from oracles import brute_force_assignment


@pytest.mark.parametrize("n_q,n_t", [(1, 1), (3, 3), (5, 2), (7, 7), (8, 4)])
def test_matches_brute_force(n_q, n_t, rng):
    for _ in range(20):
        cost = rng.normal(size=(n_q, n_t))
        a = match_cost_matrix(cost)
        assert a.total_cost == pytest.approx(brute_force_assignment(cost), abs=1e-9)
        assert len(a.pairs) == n_t and len({q for q, _ in a.pairs}) == n_t


def test_agrees_with_scipy_on_rectangular(rng):
    for _ in range(30):
        cost = rng.uniform(size=(12, 9))
        rows, cols = linear_sum_assignment(cost)
        assert match_cost_matrix(cost).total_cost == pytest.approx(cost[rows, cols].sum(), abs=1e-9)


def test_integer_costs_with_many_ties(rng):
    for _ in range(50):
        cost = rng.integers(0, 3, size=(6, 4)).astype(float)
        assert match_cost_matrix(cost).total_cost == brute_force_assignment(cost)


def test_identical_queries_tie_to_lower_index():
    cost = np.array([[0.3], [0.3], [0.9]])
    assert match_cost_matrix(cost).pairs == [(0, 0)]
    assert match_cost_matrix(cost).unmatched_queries == [1, 2]


def test_single_pair_and_empty():
    assert match_cost_matrix(np.array([[2.5]])).pairs == [(0, 0)]
    empty = match_cost_matrix(np.zeros((3, 0)))
    assert empty.pairs == [] and empty.unmatched_queries == [0, 1, 2] and empty.total_cost == 0.0


def test_capacity_error():
    with pytest.raises(CapacityError):
        match_cost_matrix(np.zeros((2, 3)))
    with pytest.raises(CapacityError):
        solve_assignment(np.zeros((3, 2)))


def test_matching_cost_formula():
    boxes = np.array([[0.5, 0.5, 1.0, 1.0], [0.25, 0.25, 0.5, 0.5]])
    logits = np.zeros((2, 4))
    target = np.array([[0.0, 0.0, 1.0, 1.0]])
    w = LossWeights(iou=2.0, l1=3.0)
    cost = matching_cost(boxes, logits, target, [1], w)
    # query 0 is exact: -1/4 ; query 1 is (0,0,.5,.5): L1 = 1, giou = 0.25
    np.testing.assert_allclose(cost[:, 0], [-0.25, -0.25 + 3.0 * 1.0 + 2.0 * 0.75])
    assert hungarian_match(boxes, logits, target, [1], w).pairs == [(0, 0)]
