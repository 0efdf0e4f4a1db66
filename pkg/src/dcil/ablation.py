"""Aggregating multi-seed runs into success-rate curves and comparing variants."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

ABLATION_SCHEMA = "# dcil-ablation 1"
VARIANT_ORDER = ("full", "no-overshoot", "no-bonus", "no-both")


def solved_by(first_solve: Sequence[int | None], step: int) -> np.ndarray:
    """Per-seed 0/1 flags: did the run complete the whole chain at an evaluation <= ``step``?"""
    return np.array([1.0 if f is not None and f <= step else 0.0 for f in first_solve])


def success_curve(first_solve: Sequence[int | None], steps: Sequence[int]) -> np.ndarray:
    """Mean over seeds of :func:`solved_by` at every step of ``steps``."""
    if len(first_solve) == 0:
        return np.full(len(steps), math.nan)
    return np.array([solved_by(first_solve, s).mean() for s in steps])


@dataclass(frozen=True)
class WelchResult:
    statistic: float
    pvalue: float

    def significant(self, level: float = 0.05) -> bool:
        return self.pvalue < level


def welch_test(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Two-sided Welch t-test; the zero-variance case is decided by the means alone."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ValueError("Welch's test needs at least two samples per group")
    if np.var(a) == 0.0 and np.var(b) == 0.0:
        # both samples constant: the difference is certain (or absent)
        if a[0] == b[0]:
            return WelchResult(0.0, 1.0)
        return WelchResult(math.copysign(math.inf, a[0] - b[0]), 0.0)
    with warnings.catch_warnings():
        # a constant group trips scipy's cancellation check; the result is still exact
        warnings.simplefilter("ignore", RuntimeWarning)
        res = stats.ttest_ind(a, b, equal_var=False)
    return WelchResult(float(res.statistic), float(res.pvalue))


def aggregate_csv(steps: Sequence[int], curves: dict[str, np.ndarray]) -> str:
    buf = io.StringIO()
    buf.write(ABLATION_SCHEMA + "\n")
    w = csv.writer(buf, lineterminator="\n")
    names = list(curves)
    w.writerow(["step", *names])
    for k, s in enumerate(steps):
        w.writerow([int(s), *(f"{curves[n][k]:.6f}" for n in names)])
    return buf.getvalue()


def read_aggregate_csv(text: str) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != ABLATION_SCHEMA:
        raise ValueError("not an ablation aggregate file")
    rows = list(csv.reader(lines[1:]))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body]).reshape(-1, len(header))
    return data[:, 0].astype(int), {name: data[:, k] for k, name in enumerate(header) if k}


def first_reach(steps: Sequence[int], curve: Sequence[float], level: float = 1.0) -> int | None:
    for s, v in zip(steps, curve):
        if v >= level:
            return int(s)
    return None
