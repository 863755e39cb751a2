import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orchsim.core import CostModel, CostVariant, PaddingMode
from orchsim.oracle import SizeCapError, oracle_optimal

U, P = PaddingMode.UNPADDED, PaddingMode.PADDED
LINEAR_U = CostModel(1, 0, U, CostVariant.LINEAR_ONLY)
LINEAR_P = CostModel(1, 0, P, CostVariant.LINEAR_ONLY)

MODELS = [
    LINEAR_U,
    LINEAR_P,
    CostModel(1, 0.1, U, CostVariant.TRANSFORMER_QUADRATIC),
    CostModel(1, 0.1, P, CostVariant.TRANSFORMER_QUADRATIC),
    CostModel(1, 0.05, U, CostVariant.CONV_TRANSFORMER_PADDED),
]


def brute_force(d, lengths, model):
    """Plain enumeration of all d**n labelled assignments."""
    best = float("inf")
    for labels in itertools.product(range(d), repeat=len(lengths)):
        groups = [[x for x, g in zip(lengths, labels) if g == i] for i in range(d)]
        best = min(best, max(model.of_lengths(g) for g in groups))
    return best


def evaluate(d, lengths, assignment, model):
    groups = [[x for x, g in zip(lengths, assignment) if g == i] for i in range(d)]
    return max(model.of_lengths(g) for g in groups)


def test_frozen_values():
    assert oracle_optimal(2, [3, 3, 2, 2, 2], LINEAR_U)[1] == 6
    assert oracle_optimal(2, [7, 5, 3, 2], LINEAR_P)[1] == 14
    assert oracle_optimal(2, [5, 4, 3, 3, 2, 1], LINEAR_U)[1] == 9


def test_one_item_per_instance():
    assert oracle_optimal(4, [9, 2, 30, 7], LINEAR_U)[1] == 30


def test_empty():
    assert oracle_optimal(3, [], LINEAR_U) == ([], 0.0)


def test_size_cap():
    with pytest.raises(SizeCapError):
        oracle_optimal(2, [1] * 15, LINEAR_U)
    with pytest.raises(SizeCapError):
        oracle_optimal(5, [1, 2], LINEAR_U)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 3), st.lists(st.integers(1, 20), min_size=1, max_size=7),
       st.sampled_from(MODELS))
def test_matches_brute_force(d, lengths, model):
    assignment, value = oracle_optimal(d, lengths, model)
    assert value == pytest.approx(brute_force(d, lengths, model))
    assert len(assignment) == len(lengths)
    assert all(0 <= a < d for a in assignment)
    assert evaluate(d, lengths, assignment, model) == pytest.approx(value)
