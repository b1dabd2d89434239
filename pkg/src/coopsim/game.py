"""Bimatrix negotiation game: strategies, payoff matrices, equilibria, decisions.

A cooperation is negotiated over a matrix whose rows are the strategies of
the first cooperation candidate and whose columns are those of the second.
The matrix travels through three stages: issued empty by the infrastructure,
half-filled by each vehicle's local evaluation, and merged into a complete
decision matrix on which the pure-strategy Nash equilibria are computed.
Everything in this module is value-semantic and side-effect free.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import MatrixError


class Longitudinal(str, Enum):
    CONTINUE = "continue"
    DECELERATE = "decelerate"
    ACCELERATE = "accelerate"


class Lateral(str, Enum):
    CONTINUE = "continue"
    LANE_CHANGE = "lane_change"


@dataclass(frozen=True)
class Strategy:
    """Abstract (longitudinal, lateral) behavior pair of one candidate."""

    id: str
    longitudinal: Longitudinal
    lateral: Lateral

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "longitudinal": self.longitudinal.value,
            "lateral": self.lateral.value,
        }

    @staticmethod
    def from_dict(d: dict) -> "Strategy":
        return Strategy(d["id"], Longitudinal(d["longitudinal"]), Lateral(d["lateral"]))


Cell = tuple[float | None, float | None]


class PayoffMatrix:
    """Bimatrix over strategy combinations; individual payoffs may be absent.

    `cells[i][j]` holds the pair (payoff of candidate 1, payoff of candidate 2)
    for row strategy i and column strategy j, each side possibly None.
    """

    def __init__(
        self,
        rows: tuple[Strategy, ...],
        cols: tuple[Strategy, ...],
        cells: list[list[Cell]] | None = None,
    ):
        if not rows or not cols:
            raise MatrixError("matrix needs at least one row and one column strategy")
        if len({s.id for s in rows}) != len(rows) or len({s.id for s in cols}) != len(cols):
            raise MatrixError("strategy ids must be unique per side")
        self.rows = tuple(rows)
        self.cols = tuple(cols)
        if cells is None:
            cells = [[(None, None) for _ in cols] for _ in rows]
        if len(cells) != len(rows) or any(len(r) != len(cols) for r in cells):
            raise MatrixError("cell grid does not match strategy dimensions")
        self.cells = [[(c[0], c[1]) for c in row] for row in cells]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.rows), len(self.cols)

    def is_complete(self) -> bool:
        return all(p1 is not None and p2 is not None for row in self.cells for p1, p2 in row)

    def is_empty(self) -> bool:
        return all(p1 is None and p2 is None for row in self.cells for p1, p2 in row)

    def with_side_filled(self, side: int, values: list[list[float]]) -> "PayoffMatrix":
        """Copy with one player's payoffs set; side 1 fills p1, side 2 fills p2."""
        if side not in (1, 2):
            raise MatrixError(f"side must be 1 or 2, got {side}")
        cells = []
        for i, row in enumerate(self.cells):
            new_row = []
            for j, (p1, p2) in enumerate(row):
                v = float(values[i][j])
                new_row.append((v, p2) if side == 1 else (p1, v))
            cells.append(new_row)
        return PayoffMatrix(self.rows, self.cols, cells)

    def combination(self, i: int, j: int) -> tuple[Strategy, Strategy]:
        return self.rows[i], self.cols[j]

    def index_of(self, row_id: str, col_id: str) -> tuple[int, int]:
        try:
            i = next(k for k, s in enumerate(self.rows) if s.id == row_id)
            j = next(k for k, s in enumerate(self.cols) if s.id == col_id)
        except StopIteration:
            raise MatrixError(f"({row_id}, {col_id}) is not a cell of this matrix") from None
        return i, j

    def to_dict(self) -> dict:
        return {
            "rows": [s.to_dict() for s in self.rows],
            "cols": [s.to_dict() for s in self.cols],
            "cells": [[[p1, p2] for p1, p2 in row] for row in self.cells],
        }

    @staticmethod
    def from_dict(d: dict) -> "PayoffMatrix":
        return PayoffMatrix(
            tuple(Strategy.from_dict(s) for s in d["rows"]),
            tuple(Strategy.from_dict(s) for s in d["cols"]),
            [[(c[0], c[1]) for c in row] for row in d["cells"]],
        )

    def __eq__(self, other):
        if not isinstance(other, PayoffMatrix):
            return NotImplemented
        return (
            self.rows == other.rows and self.cols == other.cols and self.cells == other.cells
        )

    def __repr__(self):
        return f"PayoffMatrix({len(self.rows)}x{len(self.cols)}, {self.cells})"


class RejectReason(str, Enum):
    NO_EQUILIBRIUM = "no_equilibrium"
    MULTIPLE_EQUILIBRIA = "multiple_equilibria"
    EQUILIBRIUM_DIFFERS_FROM_R = "equilibrium_differs_from_R"
    PROTOCOL_ABORT = "protocol_abort"


@dataclass(frozen=True)
class Decision:
    """Outcome of the two-condition decision rule."""

    execute: bool
    combination: tuple[str, str] | None = None
    reason: RejectReason | None = None

    def to_dict(self) -> dict:
        return {
            "execute": self.execute,
            "combination": list(self.combination) if self.combination else None,
            "reason": self.reason.value if self.reason else None,
        }


def merge_evaluations(e1: PayoffMatrix, e2: PayoffMatrix) -> PayoffMatrix:
    """Merge two half-filled evaluation matrices into one complete decision matrix.

    Each argument must fill exactly one player's side; the merge is directed
    by which side is present, so swapping the argument order yields the same
    result.  Duplicate entries are tolerated only when they agree.
    """
    if e1.rows != e2.rows or e1.cols != e2.cols:
        raise MatrixError("dimension mismatch: evaluation matrices span different strategies")
    cells: list[list[Cell]] = []
    for i in range(len(e1.rows)):
        row: list[Cell] = []
        for j in range(len(e1.cols)):
            merged = []
            for side in (0, 1):
                values = {
                    m.cells[i][j][side]
                    for m in (e1, e2)
                    if m.cells[i][j][side] is not None
                }
                if not values:
                    raise MatrixError(
                        f"missing entry: no payoff for player {side + 1} at cell ({i}, {j})"
                    )
                if len(values) > 1:
                    raise MatrixError(
                        f"conflicting duplicate entry for player {side + 1} at cell ({i}, {j})"
                    )
                merged.append(values.pop())
            row.append((merged[0], merged[1]))
        cells.append(row)
    return PayoffMatrix(e1.rows, e1.cols, cells)


def pure_nash_equilibria(d: PayoffMatrix) -> list[tuple[int, int]]:
    """All pure-strategy Nash equilibria of a complete bimatrix, row-major.

    A cell is an equilibrium when it is a weak best response for both players:
    p1 maximal in its column and p2 maximal in its row.
    """
    if not d.is_complete():
        raise MatrixError("equilibria require a completely filled matrix")
    n, m = d.shape
    col_max = [max(d.cells[i][j][0] for i in range(n)) for j in range(m)]
    row_max = [max(d.cells[i][j][1] for j in range(m)) for i in range(n)]
    return [
        (i, j)
        for i in range(n)
        for j in range(m)
        if d.cells[i][j][0] == col_max[j] and d.cells[i][j][1] == row_max[i]
    ]


def decide(d: PayoffMatrix, recommended: tuple[str, str]) -> Decision:
    """Execute iff the game has exactly one equilibrium and it matches R.

    Condition 1 (uniqueness) is checked before condition 2 (agreement with
    the recommendation); zero equilibria count as a condition-1 failure.
    """
    ri, rj = d.index_of(*recommended)
    equilibria = pure_nash_equilibria(d)
    if len(equilibria) == 0:
        return Decision(False, reason=RejectReason.NO_EQUILIBRIUM)
    if len(equilibria) > 1:
        return Decision(False, reason=RejectReason.MULTIPLE_EQUILIBRIA)
    ne = equilibria[0]
    if ne != (ri, rj):
        return Decision(False, reason=RejectReason.EQUILIBRIUM_DIFFERS_FROM_R)
    return Decision(True, combination=(d.rows[ne[0]].id, d.cols[ne[1]].id))


# Strategy catalogue for the cooperative lane change: the obstructed vehicle
# either keeps its speed and changes lane or brakes and stays; the supporting
# vehicle either opens a gap by decelerating or just continues.
CLC_ROLE1_STRATEGIES = (
    Strategy("S1.1", Longitudinal.CONTINUE, Lateral.LANE_CHANGE),
    Strategy("S1.2", Longitudinal.DECELERATE, Lateral.CONTINUE),
)
CLC_ROLE2_STRATEGIES = (
    Strategy("S2.1", Longitudinal.DECELERATE, Lateral.CONTINUE),
    Strategy("S2.2", Longitudinal.CONTINUE, Lateral.CONTINUE),
)
CLC_RECOMMENDED = ("S1.1", "S2.1")
