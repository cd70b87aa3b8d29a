"""Accuracy matrix bookkeeping plus the average accuracy (A) and forgetting (F) metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from errors import ContractError, DataFormatError

RESULT_COLUMNS = ["method", "task_k", "A_k", "F_k", "seed"]


@dataclass
class AccuracyMatrix:
    """Lower-triangular a[k][j]: accuracy on task j after training task k (0-based)."""

    num_tasks: int
    rows: list[list[float]] = field(default_factory=list)

    def append_row(self, row: list[float]) -> None:
        k = len(self.rows)
        if k >= self.num_tasks:
            raise ContractError(f"matrix already holds all {self.num_tasks} rows")
        if len(row) != k + 1:
            raise ContractError(f"row {k} needs {k + 1} entries, got {len(row)}")
        if any(not 0.0 <= float(a) <= 1.0 for a in row):
            raise ContractError(f"accuracies must lie in [0, 1]: {row}")
        self.rows.append([float(a) for a in row])

    @property
    def is_complete(self) -> bool:
        return len(self.rows) == self.num_tasks

    def entry(self, k: int, j: int) -> float:
        if j > k:
            raise ContractError(f"a[{k}][{j}] lies above the diagonal")
        return self.rows[k][j]

    def to_dict(self) -> dict:
        return {"num_tasks": self.num_tasks, "rows": [list(r) for r in self.rows]}

    @classmethod
    def from_dict(cls, raw: dict) -> "AccuracyMatrix":
        m = cls(num_tasks=int(raw["num_tasks"]))
        for row in raw["rows"]:
            m.append_row(row)
        return m


def _check(m: AccuracyMatrix, allow_partial: bool) -> int:
    done = len(m.rows)
    if done == 0 or (not allow_partial and not m.is_complete):
        raise ContractError(f"accuracy matrix has {done} of {m.num_tasks} rows")
    return done


def avg_accuracy(m: AccuracyMatrix, allow_partial: bool = False) -> tuple[float, list[float]]:
    """A = mean over k of A_k, where A_k is the mean of row k."""
    done = _check(m, allow_partial)
    per_step = [float(np.mean(m.rows[k])) for k in range(done)]
    return float(np.mean(per_step)), per_step


def avg_forgetting(m: AccuracyMatrix, allow_partial: bool = False) -> tuple[float, list[float]]:
    """F averages F_k over k >= 2; F_1 is reported as 0 and F = 0 for one task.

    F_k = mean over j < k of max over l in [j, k) of (a[l][j] - a[k][j]).
    """
    done = _check(m, allow_partial)
    per_step = [0.0]
    for k in range(1, done):
        drops = [max(m.rows[l][j] for l in range(j, k)) - m.rows[k][j] for j in range(k)]
        per_step.append(float(np.mean(drops)))
    overall = float(np.mean(per_step[1:])) if done > 1 else 0.0
    return overall, per_step


def summarize(m: AccuracyMatrix, method: str, seed: int) -> pd.DataFrame:
    """Per-step rows for results.csv."""
    _, a_k = avg_accuracy(m, allow_partial=True)
    _, f_k = avg_forgetting(m, allow_partial=True)
    return pd.DataFrame(
        {
            "method": method,
            "task_k": np.arange(1, len(a_k) + 1),
            "A_k": a_k,
            "F_k": f_k,
            "seed": seed,
        },
        columns=RESULT_COLUMNS,
    )


def matrix_to_frame(m: AccuracyMatrix) -> pd.DataFrame:
    grid = np.full((len(m.rows), m.num_tasks), np.nan)
    for k, row in enumerate(m.rows):
        grid[k, : len(row)] = row
    frame = pd.DataFrame(grid, columns=[f"task_{j + 1}" for j in range(m.num_tasks)])
    frame.insert(0, "task_k", np.arange(1, len(m.rows) + 1))
    return frame


def matrix_from_frame(frame: pd.DataFrame) -> AccuracyMatrix:
    cols = [c for c in frame.columns if c != "task_k"]
    values = frame[cols].to_numpy(dtype=float)
    m = AccuracyMatrix(num_tasks=len(cols))
    for k in range(values.shape[0]):
        row = values[k, : k + 1]
        if np.isnan(row).any() or not np.isnan(values[k, k + 1:]).all():
            raise DataFormatError(f"matrix row {k + 1} is not lower-triangular")
        m.append_row(row.tolist())
    return m


def read_matrix_csv(path: str | Path) -> AccuracyMatrix:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataFormatError(f"cannot read matrix {path}: {exc}") from exc
    if frame.empty:
        raise DataFormatError(f"{path} holds no matrix rows")
    try:
        return matrix_from_frame(frame)
    except ContractError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


def format_table(frame: pd.DataFrame) -> str:
    return frame.to_markdown(index=False, floatfmt=".4f")
