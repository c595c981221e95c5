"""Convergence statistics over evaluation episodes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

BANDS = ("<10%", "10-25%", "25-50%", ">50%")
NOT_APPLICABLE = "n/a"


def cv_band(cv: float | None) -> str:
    """Band label for a CV in percent: [0,10), [10,25), [25,50], (50,inf)."""
    if cv is None:
        return NOT_APPLICABLE
    if cv < 10.0:
        return BANDS[0]
    if cv < 25.0:
        return BANDS[1]
    if cv <= 50.0:
        return BANDS[2]
    return BANDS[3]


def coefficient_of_variation(values) -> float | None:
    """|sigma / mu| * 100 with the population sigma; None when mu == 0."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values")
    mu = float(v.mean())
    if mu == 0.0:
        return None
    return abs(float(v.std()) / mu) * 100.0


def cumulative_max(values) -> np.ndarray:
    return np.maximum.accumulate(np.asarray(values, dtype=np.float64))


@dataclass(frozen=True)
class CvRow:
    parameter: str
    mean: float
    std: float
    cv: float | None
    band: str
    n: int


def analyze_convergence(records, names, threshold: float = 0.6) -> list[CvRow]:
    """CV per parameter over records with transmission strictly above
    ``threshold``.

    ``records`` are objects or mappings exposing ``transmission`` and
    ``vector`` (evaluation records or rows of a training log).
    """
    picked = []
    for r in records:
        t = r["transmission"] if isinstance(r, dict) else r.transmission
        v = r["vector"] if isinstance(r, dict) else r.vector
        if t > threshold:
            picked.append(np.asarray(v, dtype=np.float64))
    if len(picked) < 2:
        raise ValueError(
            f"need at least 2 evaluation episodes with transmission > {threshold}, found {len(picked)}"
        )
    data = np.vstack(picked)
    if data.shape[1] != len(names):
        raise ValueError(f"{len(names)} parameter names for vectors of length {data.shape[1]}")
    rows = []
    for j, name in enumerate(names):
        col = data[:, j]
        cv = coefficient_of_variation(col)
        rows.append(CvRow(name, float(col.mean()), float(col.std()), cv, cv_band(cv), len(col)))
    return rows


CV_COLUMNS = ["parameter", "mean", "std", "cv_percent", "band", "n"]


def write_cv_table(path, rows: list[CvRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CV_COLUMNS)
        for r in rows:
            cv = NOT_APPLICABLE if r.cv is None else repr(r.cv)
            w.writerow([r.parameter, repr(r.mean), repr(r.std), cv, r.band, r.n])


Z95 = 1.959963984540054


def binomial_interval(k: int, n: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a proportion k/n.

    With p = k/n::

        centre = (p + z^2/(2n)) / (1 + z^2/n)
        half   = z * sqrt(p(1-p)/n + z^2/(4n^2)) / (1 + z^2/n)

    This is the inversion of the normal-approximation test; unlike the
    plain p +- z*sqrt(p(1-p)/n) form it keeps a nonzero width at p = 0 or 1.
    """
    if n < 1 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n and n >= 1, got k={k}, n={n}")
    p = k / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # the bounds at k = 0 and k = n are exactly 0 and 1; don't let rounding
    # leave them a hair off
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi
