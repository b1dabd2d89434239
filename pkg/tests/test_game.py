"""Tests for the bimatrix negotiation game."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsim.errors import MatrixError
from coopsim.game import (
    CLC_RECOMMENDED,
    CLC_ROLE1_STRATEGIES,
    CLC_ROLE2_STRATEGIES,
    Decision,
    Lateral,
    Longitudinal,
    PayoffMatrix,
    RejectReason,
    Strategy,
    decide,
    merge_evaluations,
    pure_nash_equilibria,
)


def brute_force_equilibria(cells):
    """Independent oracle: check every cell against all unilateral deviations."""
    n, m = len(cells), len(cells[0])
    result = []
    for i in range(n):
        for j in range(m):
            p1, p2 = cells[i][j]
            row_dev_ok = all(cells[k][j][0] <= p1 for k in range(n))
            col_dev_ok = all(cells[i][l][1] <= p2 for l in range(m))
            if row_dev_ok and col_dev_ok:
                result.append((i, j))
    return result


def strategies(prefix, count):
    return tuple(
        Strategy(f"{prefix}.{k + 1}", Longitudinal.CONTINUE, Lateral.CONTINUE)
        for k in range(count)
    )


def matrix_of(cells):
    return PayoffMatrix(strategies("R", len(cells)), strategies("C", len(cells[0])), cells)


# The worked example: E1 carries candidate 1's payoffs, E2 candidate 2's.
E1_VALUES = [[4.0, 3.0], [-2.0, 1.0]]
E2_VALUES = [[2.0, -2.0], [1.0, 0.0]]
D_CELLS = [[(4.0, 2.0), (3.0, -2.0)], [(-2.0, 1.0), (1.0, 0.0)]]


def clc_halves():
    empty = PayoffMatrix(CLC_ROLE1_STRATEGIES, CLC_ROLE2_STRATEGIES)
    e1 = empty.with_side_filled(1, E1_VALUES)
    e2 = empty.with_side_filled(2, E2_VALUES)
    return e1, e2


class TestMerge:
    def test_worked_example_halves_merge_to_decision_matrix(self):
        e1, e2 = clc_halves()
        d = merge_evaluations(e1, e2)
        assert d.cells == D_CELLS

    def test_merge_is_role_directed_not_positional(self):
        e1, e2 = clc_halves()
        assert merge_evaluations(e2, e1) == merge_evaluations(e1, e2)

    def test_missing_entry_rejected(self):
        e1, e2 = clc_halves()
        e1.cells[0][1] = (None, None)
        with pytest.raises(MatrixError, match="missing entry"):
            merge_evaluations(e1, e2)

    def test_conflicting_duplicate_rejected(self):
        e1, e2 = clc_halves()
        # e2 also claims a value for player 1 that contradicts e1's.
        e2.cells[0][0] = (99.0, e2.cells[0][0][1])
        with pytest.raises(MatrixError, match="conflicting duplicate"):
            merge_evaluations(e1, e2)

    def test_agreeing_duplicate_tolerated(self):
        e1, e2 = clc_halves()
        e2.cells[0][0] = (4.0, e2.cells[0][0][1])
        assert merge_evaluations(e1, e2).cells == D_CELLS

    def test_dimension_mismatch_rejected(self):
        e1, _ = clc_halves()
        other = PayoffMatrix(strategies("R", 3), CLC_ROLE2_STRATEGIES)
        with pytest.raises(MatrixError, match="dimension mismatch"):
            merge_evaluations(e1, other)


class TestNashEquilibria:
    def test_worked_example_has_unique_boxed_equilibrium(self):
        d = matrix_of(D_CELLS)
        assert pure_nash_equilibria(d) == [(0, 0)]

    def test_single_cell_matrix(self):
        assert pure_nash_equilibria(matrix_of([[(0.0, 0.0)]])) == [(0, 0)]

    def test_coordination_game_has_two_equilibria(self):
        d = matrix_of([[(1.0, 1.0), (0.0, 0.0)], [(0.0, 0.0), (1.0, 1.0)]])
        assert pure_nash_equilibria(d) == [(0, 0), (1, 1)]

    def test_matching_pennies_has_no_pure_equilibrium(self):
        d = matrix_of([[(1.0, -1.0), (-1.0, 1.0)], [(-1.0, 1.0), (1.0, -1.0)]])
        assert pure_nash_equilibria(d) == []

    def test_incomplete_matrix_rejected(self):
        d = PayoffMatrix(strategies("R", 2), strategies("C", 2))
        with pytest.raises(MatrixError):
            pure_nash_equilibria(d)

    def test_matches_oracle_on_random_games(self):
        rng = random.Random(20240817)
        for _ in range(1000):
            n = rng.randint(1, 4)
            m = rng.randint(1, 4)
            cells = [
                [(float(rng.randint(-5, 5)), float(rng.randint(-5, 5))) for _ in range(m)]
                for _ in range(n)
            ]
            d = matrix_of(cells)
            assert pure_nash_equilibria(d) == brute_force_equilibria(cells)


class TestDecide:
    def test_worked_example_executes_recommendation(self):
        e1, e2 = clc_halves()
        d = merge_evaluations(e1, e2)
        decision = decide(d, CLC_RECOMMENDED)
        assert decision == Decision(True, combination=("S1.1", "S2.1"))

    def test_unique_equilibrium_that_differs_from_r_rejects(self):
        e1, e2 = clc_halves()
        d = merge_evaluations(e1, e2)
        decision = decide(d, ("S1.2", "S2.2"))
        assert not decision.execute
        assert decision.reason == RejectReason.EQUILIBRIUM_DIFFERS_FROM_R

    def test_multiple_equilibria_reject_regardless_of_r(self):
        d = matrix_of([[(1.0, 1.0), (0.0, 0.0)], [(0.0, 0.0), (1.0, 1.0)]])
        for r in [("R.1", "C.1"), ("R.2", "C.2")]:
            decision = decide(d, r)
            assert decision.reason == RejectReason.MULTIPLE_EQUILIBRIA

    def test_no_equilibrium_rejects_with_condition_1(self):
        d = matrix_of([[(1.0, -1.0), (-1.0, 1.0)], [(-1.0, 1.0), (1.0, -1.0)]])
        assert decide(d, ("R.1", "C.1")).reason == RejectReason.NO_EQUILIBRIUM

    def test_invalid_recommendation_cell_rejected(self):
        d = matrix_of(D_CELLS)
        with pytest.raises(MatrixError):
            decide(d, ("R.1", "nope"))

    def test_decide_is_pure(self):
        d = matrix_of(D_CELLS)
        assert decide(d, ("R.1", "C.1")) == decide(d, ("R.1", "C.1"))


payoff = st.integers(min_value=-5, max_value=5).map(float)
dims = st.tuples(st.integers(1, 4), st.integers(1, 4))


@st.composite
def random_game(draw):
    n, m = draw(dims)
    cells = [[(draw(payoff), draw(payoff)) for _ in range(m)] for _ in range(n)]
    return cells


@given(random_game())
@settings(max_examples=300, deadline=None)
def test_affine_transform_of_one_player_preserves_equilibrium_set(cells):
    alpha, beta = 2.5, -7.0
    base = pure_nash_equilibria(matrix_of(cells))
    scaled_p1 = [[(alpha * p1 + beta, p2) for p1, p2 in row] for row in cells]
    scaled_p2 = [[(p1, alpha * p2 + beta) for p1, p2 in row] for row in cells]
    assert pure_nash_equilibria(matrix_of(scaled_p1)) == base
    assert pure_nash_equilibria(matrix_of(scaled_p2)) == base


@given(random_game())
@settings(max_examples=300, deadline=None)
def test_transposed_game_maps_equilibria_to_transposed_cells(cells):
    base = pure_nash_equilibria(matrix_of(cells))
    transposed = [
        [(cells[i][j][1], cells[i][j][0]) for i in range(len(cells))]
        for j in range(len(cells[0]))
    ]
    swapped = pure_nash_equilibria(matrix_of(transposed))
    assert sorted((j, i) for i, j in base) == sorted(swapped)


@given(random_game())
@settings(max_examples=300, deadline=None)
def test_solver_agrees_with_brute_force(cells):
    assert pure_nash_equilibria(matrix_of(cells)) == brute_force_equilibria(cells)


def test_matrix_serialization_round_trip():
    e1, e2 = clc_halves()
    d = merge_evaluations(e1, e2)
    for m in (e1, e2, d):
        assert PayoffMatrix.from_dict(m.to_dict()) == m
