"""Accuracy matrix and the final-average / average-forgetting metrics."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import IncompleteMatrix, SingleTask


class AccuracyMatrix:
    """Lower-triangular record ``a[l][j]``: accuracy on task j after training task l.

    Indices are 0-based; entries are write-once.
    """

    def __init__(self, num_tasks: int):
        if num_tasks < 1:
            raise ValueError("need at least one task")
        self.num_tasks = num_tasks
        self._data = np.full((num_tasks, num_tasks), np.nan)

    def set(self, l: int, j: int, acc: float) -> None:
        if not 0 <= j <= l < self.num_tasks:
            raise IndexError(f"entry ({l}, {j}) is outside the lower triangle")
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        if not np.isnan(self._data[l, j]):
            raise ValueError(f"entry ({l}, {j}) already written")
        self._data[l, j] = acc

    def get(self, l: int, j: int) -> float:
        return float(self._data[l, j])

    def is_complete(self) -> bool:
        return not np.isnan(self._data[np.tril_indices(self.num_tasks)]).any()

    def rows(self) -> list[list[float]]:
        return [[float(x) for x in self._data[l, : l + 1]] for l in range(self.num_tasks)]

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence[float]]) -> "AccuracyMatrix":
        m = cls(len(rows))
        for l, row in enumerate(rows):
            for j, acc in enumerate(row[: l + 1]):
                m.set(l, j, float(acc))
        return m


def _as_rows(m) -> list[list[float]]:
    if isinstance(m, AccuracyMatrix):
        if not m.is_complete():
            raise IncompleteMatrix("accuracy matrix has unwritten entries")
        return m.rows()
    rows = [list(r) for r in m]
    for l, row in enumerate(rows):
        if len(row) < l + 1 or any(x is None or np.isnan(x) for x in row[: l + 1]):
            raise IncompleteMatrix(f"row {l} is incomplete")
    return rows


def compute_ap(m) -> float:
    """Mean accuracy over all tasks after the final task."""
    rows = _as_rows(m)
    last = rows[-1][: len(rows)]
    return float(sum(last) / len(last))


def compute_af(m) -> float:
    """Mean over earlier tasks of (best accuracy before the final task - final accuracy)."""
    rows = _as_rows(m)
    T = len(rows)
    if T < 2:
        raise SingleTask("forgetting needs at least two tasks")
    drops = [max(rows[l][j] for l in range(j, T - 1)) - rows[T - 1][j] for j in range(T - 1)]
    return float(sum(drops) / (T - 1))
