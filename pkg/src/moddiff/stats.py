"""Statistical battery for checkpoint comparisons.

Pure functions only: dispersion summaries over per-checkpoint variances,
reduction percentages, a Mann-Whitney U test (exact by enumeration for
small samples, tie- and continuity-corrected normal approximation
otherwise), the classic mean-centered Levene test, and learning-curve gain
metrics. Quartiles use linear interpolation on the full sorted sample.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from .errors import InvalidInputError

EXACT_MAX_GROUP = 8  # exact Mann-Whitney enumeration up to 8-vs-8


@dataclass
class VarianceStats:
    median_var: float
    iqr: float
    max_var: float
    cv: float


def variance_stats(variances) -> VarianceStats:
    """Median / IQR / max / coefficient of variation of a variance list."""
    v = np.asarray(variances, dtype=float)
    if v.size == 0:
        raise InvalidInputError("variance list is empty")
    q1, q3 = np.percentile(v, [25.0, 75.0])
    mean = float(np.mean(v))
    cv = 0.0 if mean == 0.0 else float(np.std(v) / mean)
    return VarianceStats(
        median_var=float(np.median(v)),
        iqr=float(q3 - q1),
        max_var=float(np.max(v)),
        cv=cv,
    )


def reduction_pct(test_metric: float, baseline_metric: float) -> float:
    """100 * (1 - test / baseline)."""
    if baseline_metric == 0.0:
        raise InvalidInputError("baseline metric must be non-zero")
    return 100.0 * (1.0 - test_metric / baseline_metric)


def _midranks(pooled: np.ndarray) -> np.ndarray:
    """Fractional (mid) ranks, 1-based; ties share the mean of their ranks."""
    order = np.argsort(pooled, kind="mergesort")
    ranks = np.empty(len(pooled))
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _tie_term(pooled: np.ndarray) -> float:
    """sum(t^3 - t) over tie groups."""
    _, counts = np.unique(pooled, return_counts=True)
    return float(np.sum(counts.astype(float) ** 3 - counts))


def mann_whitney_u(x, y) -> tuple[float, float]:
    """Two-sided Mann-Whitney U test; returns (U of x, p).

    U comes from mid-rank assignment. The p-value is exact (enumeration of
    all group assignments of the pooled sample) when both groups have at
    most 8 elements, otherwise a normal approximation with continuity and
    tie corrections.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n1, n2 = len(x), len(y)
    if n1 == 0 or n2 == 0:
        raise InvalidInputError("both samples must be nonempty")
    pooled = np.concatenate([x, y])
    ranks = _midranks(pooled)
    u = float(np.sum(ranks[:n1]) - n1 * (n1 + 1) / 2.0)
    mu = n1 * n2 / 2.0

    if n1 <= EXACT_MAX_GROUP and n2 <= EXACT_MAX_GROUP:
        obs = abs(u - mu)
        offset = n1 * (n1 + 1) / 2.0
        hits = total = 0
        for combo in itertools.combinations(ranks, n1):
            total += 1
            if abs(sum(combo) - offset - mu) >= obs - 1e-12:
                hits += 1
        return u, hits / total

    n = n1 + n2
    var = n1 * n2 / 12.0 * ((n + 1) - _tie_term(pooled) / (n * (n - 1)))
    if var <= 0.0:
        return u, 1.0
    diff = u - mu
    z = (diff - 0.5 * np.sign(diff)) / math.sqrt(var) if diff != 0.0 else 0.0
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return u, min(1.0, max(0.0, p))


def levene_test(groups) -> tuple[float, float]:
    """Classic (mean-centered) Levene test for variance heterogeneity.

    F is the one-way ANOVA statistic on absolute deviations from each
    group's mean; p comes from the F distribution via the regularized
    incomplete beta function.
    """
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise InvalidInputError("levene_test needs >= 2 groups with >= 2 samples each")
    z = [np.abs(g - np.mean(g)) for g in groups]
    sizes = np.array([len(g) for g in z], dtype=float)
    n = float(sizes.sum())
    k = len(z)
    group_means = np.array([np.mean(g) for g in z])
    grand_mean = float(np.sum(sizes * group_means) / n)
    ssb = float(np.sum(sizes * (group_means - grand_mean) ** 2))
    ssw = float(sum(np.sum((g - m) ** 2) for g, m in zip(z, group_means)))
    df1, df2 = k - 1, n - k
    if ssw == 0.0:
        return (0.0, 1.0) if ssb == 0.0 else (math.inf, 0.0)
    f = (ssb / df1) / (ssw / df2)
    p = float(betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)))
    return f, p


def _auc(curve: np.ndarray) -> float:
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return float(trapezoid(curve))


def curve_metrics(test_curve, baseline_curve, early_fraction: float = 0.25) -> tuple[float, float, float]:
    """(peak_gain_pct, auc_gain_pct, early_gain) of test over baseline.

    Peak and AUC gains are percentage improvements relative to the
    baseline's own peak / trapezoid area; early gain is the mean return
    difference over the first ``early_fraction`` of checkpoints (at least
    one), in normalized-return units.
    """
    t = np.asarray(test_curve, dtype=float)
    b = np.asarray(baseline_curve, dtype=float)
    if t.shape != b.shape or t.ndim != 1 or t.size == 0:
        raise InvalidInputError("curves must be nonempty and share one checkpoint grid")
    if not (0.0 < early_fraction <= 1.0):
        raise InvalidInputError("early_fraction must lie in (0, 1]")
    peak_b = float(np.max(b))
    if peak_b == 0.0:
        raise InvalidInputError("baseline peak is zero; peak gain undefined")
    peak_gain = 100.0 * (float(np.max(t)) - peak_b) / abs(peak_b)
    auc_b = _auc(b)
    if t.size > 1:
        if auc_b == 0.0:
            raise InvalidInputError("baseline AUC is zero; AUC gain undefined")
        auc_gain = 100.0 * (_auc(t) - auc_b) / abs(auc_b)
    else:
        auc_gain = 0.0  # a single checkpoint has no area
    n_early = max(1, int(t.size * early_fraction))
    early_gain = float(np.mean(t[:n_early] - b[:n_early]))
    return peak_gain, auc_gain, early_gain


def steps_to_reach(curve, steps, fraction: float = 0.9) -> int | None:
    """First step at which the curve reaches ``fraction`` of its final value.

    Values are compared on the normalized-return scale; returns None when
    the curve never reaches the threshold.
    """
    c = np.asarray(curve, dtype=float)
    steps = np.asarray(steps)
    if c.shape != steps.shape or c.size == 0:
        raise InvalidInputError("curve and steps must be nonempty and aligned")
    reached = np.nonzero(c >= fraction * c[-1])[0]
    return int(steps[reached[0]]) if reached.size else None
