"""Standard error, one-sided Welch t-test and curve aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats as _sps


@dataclass
class SampleGroup:
    label: str
    values: list[float]

    def __post_init__(self) -> None:
        if len(self.values) < 1:
            raise ValueError(f"group {self.label!r} is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"group {self.label!r} has non-finite values")


def _values(group) -> np.ndarray:
    vals = group.values if isinstance(group, SampleGroup) else group
    return np.asarray(vals, dtype=np.float64)


def sem(group) -> float:
    """Sample standard deviation (n-1) over sqrt(n).  Raises for n < 2."""
    x = _values(group)
    if len(x) < 2:
        raise ValueError("standard error needs at least two samples")
    return float(np.std(x, ddof=1) / math.sqrt(len(x)))


def sem_or_nan(group) -> float:
    try:
        return sem(group)
    except ValueError:
        return float("nan")


def welch_t_one_sided(a, b) -> tuple[float, float, float]:
    """Welch's t statistic, Welch-Satterthwaite df, and the upper-tail p value
    for H1: mean(a) > mean(b)."""
    xa, xb = _values(a), _values(b)
    na, nb = len(xa), len(xb)
    if na < 2 or nb < 2:
        raise ValueError("Welch test needs at least two samples per group")
    va, vb = xa.var(ddof=1) / na, xb.var(ddof=1) / nb
    diff = xa.mean() - xb.mean()
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return 0.0, float(na + nb - 2), 0.5
        # both groups constant but different: the evidence is unbounded
        return math.copysign(math.inf, diff), float(na + nb - 2), 0.0 if diff > 0 else 1.0
    t = diff / math.sqrt(se2)
    df = se2 * se2 / (va * va / (na - 1) + vb * vb / (nb - 1))
    p = float(_sps.t.sf(t, df))
    return float(t), float(df), p


def aggregate_curves(runs: Sequence[Mapping[int, float]], steps: Sequence[int] | None = None) -> list[dict]:
    """Per-step mean and SEM across runs.  Every run must cover exactly the
    same evaluation steps."""
    if not runs:
        raise ValueError("no runs to aggregate")
    grid = list(steps) if steps is not None else sorted(runs[0])
    bad = [i for i, r in enumerate(runs) if sorted(r) != sorted(grid)]
    if bad:
        raise ValueError(f"runs {bad} do not share the evaluation step grid")
    rows = []
    for s in grid:
        vals = [r[s] for r in runs]
        rows.append({"env_steps": s, "mean": float(np.mean(vals)), "sem": sem_or_nan(vals), "n": len(vals)})
    return rows


def read_curve_csv(path, value_column: str | None = None) -> dict[int, float]:
    import csv

    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        step_col = cols[0]
        val_col = value_column or cols[1]
        return {int(row[step_col]): float(row[val_col]) for row in reader}
