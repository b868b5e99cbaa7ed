"""Score-matrix ingestion, standardization, splitting and report output."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)

TASK_KINDS = ("scoring", "binary", "preference")
MAX_MISSING_FRAC = 0.10


@dataclass(frozen=True)
class ScoreMatrix:
    """An ``n x p`` matrix of judge scores (rows are items, columns judges)."""

    values: np.ndarray
    judge_names: tuple[str, ...]
    truth: np.ndarray | None = None
    task_kind: str = "scoring"
    n_dropped: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise InputError(f"score matrix must be 2-D, got shape {values.shape}")
        n, p = values.shape
        if n < 2 or p < 1:
            raise InputError(f"need at least 2 items and 1 judge, got {n}x{p}")
        if not np.all(np.isfinite(values)):
            raise InputError("score matrix contains non-finite entries")
        names = tuple(str(s) for s in self.judge_names)
        if len(names) != p:
            raise InputError(f"{len(names)} judge names for {p} columns")
        if len(set(names)) != p:
            raise InputError("judge names must be unique")
        if self.task_kind not in TASK_KINDS:
            raise InputError(f"unknown task kind {self.task_kind!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "judge_names", names)
        if self.truth is not None:
            truth = np.asarray(self.truth, dtype=float).ravel()
            if truth.shape[0] != n:
                raise InputError(f"truth has {truth.shape[0]} entries for {n} items")
            object.__setattr__(self, "truth", truth)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def subset(self, rows) -> "ScoreMatrix":
        rows = np.asarray(rows)
        truth = None if self.truth is None else self.truth[rows]
        return replace(self, values=self.values[rows], truth=truth, n_dropped=0)

    def with_values(self, values) -> "ScoreMatrix":
        return replace(self, values=values)

    def take_judges(self, cols) -> "ScoreMatrix":
        cols = list(cols)
        return replace(self, values=self.values[:, cols],
                       judge_names=tuple(self.judge_names[c] for c in cols))


def from_array(values, judge_names: Sequence[str] | None = None, truth=None,
               task_kind: str = "scoring") -> ScoreMatrix:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if judge_names is None:
        judge_names = [f"judge_{j}" for j in range(values.shape[1])]
    return ScoreMatrix(values, tuple(judge_names), truth, task_kind)


def _parse(cell: str) -> float:
    try:
        x = float(cell)
    except ValueError:
        return math.nan
    return x if math.isfinite(x) else math.nan


def load_csv(path, truth_column: str | None = None, task_kind: str = "scoring") -> ScoreMatrix:
    """Read a headed CSV of judge scores.

    Rows containing any cell that does not parse as a finite number are
    dropped. A judge with more than 10% unparseable cells is an error, as is
    dropping more than 10% of all rows.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        raw = [row for row in reader if any(c.strip() for c in row)]

    if truth_column is not None and truth_column not in header:
        raise InputError(f"truth column {truth_column!r} not in header {header}")
    judge_cols = [i for i, h in enumerate(header) if h != truth_column]
    n_raw = len(raw)
    if n_raw == 0:
        raise InputError(f"{path} has a header but no data rows")

    grid = np.full((n_raw, len(header)), math.nan)
    for r, row in enumerate(raw):
        for c in range(min(len(row), len(header))):
            grid[r, c] = _parse(row[c].strip())

    bad = ~np.isfinite(grid)
    per_judge = bad[:, judge_cols].sum(axis=0)
    offenders = [header[judge_cols[k]] for k, cnt in enumerate(per_judge)
                 if cnt > MAX_MISSING_FRAC * n_raw]
    if offenders:
        raise InputError(f"judges with more than {MAX_MISSING_FRAC:.0%} unparseable "
                         f"cells: {', '.join(offenders)}")
    bad_rows = bad.any(axis=1)
    n_dropped = int(bad_rows.sum())
    if n_dropped > MAX_MISSING_FRAC * n_raw:
        worst = [header[c] for c in np.flatnonzero(bad.sum(axis=0))]
        raise InputError(f"{n_dropped} of {n_raw} rows unparseable; "
                         f"columns involved: {', '.join(worst)}")
    if n_dropped:
        log.warning("dropped %d of %d rows with unparseable cells", n_dropped, n_raw)

    keep = ~bad_rows
    truth = None
    if truth_column is not None:
        truth = grid[keep, header.index(truth_column)]
    return ScoreMatrix(grid[keep][:, judge_cols], tuple(header[c] for c in judge_cols),
                       truth, task_kind, n_dropped)


def write_csv(m: ScoreMatrix, path, truth_column: str = "truth") -> None:
    """Write ``m`` with 17 significant digits so a reload is exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = list(m.judge_names)
    if m.truth is not None:
        header.append(truth_column)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(m.n):
            row = [f"{x:.17g}" for x in m.values[i]]
            if m.truth is not None:
                row.append(f"{m.truth[i]:.17g}")
            w.writerow(row)


@dataclass(frozen=True)
class Standardizer:
    """Per-judge affine map ``z = (x - mean) / std``."""

    mean: np.ndarray
    std: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse(self, z) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.std + self.mean


def standardize(m: ScoreMatrix, center: bool = True) -> tuple[ScoreMatrix, Standardizer]:
    """Scale every judge to unit (1/n) standard deviation.

    With ``center=False`` only the scale is changed, which keeps the raw
    origin for moment tensors built from uncentered columns.
    """
    mean = m.values.mean(axis=0)
    std = m.values.std(axis=0)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    if flat.any():
        names = [m.judge_names[j] for j in np.flatnonzero(flat)]
        raise InputError(f"zero-variance judge(s): {', '.join(names)}")
    tr = Standardizer(mean if center else np.zeros_like(mean), std)
    return m.with_values(tr.transform(m.values)), tr


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    val_idx: np.ndarray


def split(m: ScoreMatrix | int, val_frac: float = 0.15, seed: int = 0) -> Split:
    """Seeded random train/validation split with ``round(val_frac * n)`` validation rows."""
    n = m if isinstance(m, (int, np.integer)) else m.n
    if not 0.0 < val_frac < 1.0:
        raise InputError(f"val_frac must lie in (0, 1), got {val_frac}")
    if n * val_frac < 1:
        raise InputError(f"validation set would be empty (n={n}, val_frac={val_frac})")
    n_val = int(round(val_frac * n))
    if n_val >= n:
        raise InputError(f"training set would be empty (n={n}, val_frac={val_frac})")
    perm = np.random.default_rng(seed).permutation(n)
    return Split(np.sort(perm[n_val:]), np.sort(perm[:n_val]))


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_report(path, *, method: str, params: dict, metrics: dict,
                 per_item_scores=None, seed: int | None = None, **extra) -> dict:
    """Write a JSON run report with the canonical top-level fields."""
    report = {"method": method, "params": params, "metrics": metrics,
              "per_item_scores": per_item_scores, "seed": seed}
    report.update(extra)
    report = _jsonable(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return report


REPORT_SCHEMA = {
    "type": "object",
    "required": ["method", "params", "metrics", "per_item_scores", "seed"],
    "properties": {
        "method": {"type": "string"},
        "params": {"type": "object"},
        "metrics": {"type": "object"},
        "per_item_scores": {"type": ["array", "null"]},
        "seed": {"type": ["integer", "null"]},
    },
}
