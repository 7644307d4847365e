"""Low vs. high clustering group comparisons.

Securities are ranked by clustering score; the bottom and top thirds form
groups L and H. Each instability measure is compared across the groups by
a pair of tests (KS + MWW for continuous measures, chi-square + MWW for
outlier counts) and reported as signed verdicts: ``+`` when the H
distribution lies above L, ``-`` below, ``=`` when not significant. The
chi-square test is unsigned and reports ``=``/``≠``.

Directions are always stated for the *second* sample relative to the
first; callers pass ``(low, high)``.
"""
import csv
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .instability import MEASURES

logger = logging.getLogger(__name__)

VERDICT_COLUMNS = ("measure", "window", "test1_sign", "test1_p", "test2_sign",
                   "test2_p")
CDF_COLUMNS = ("x", "F_low", "F_high", "sign")
COUNT_MEASURES = ("outliers_neg", "outliers_pos")
NOT_EQUAL = "≠"


@dataclass(frozen=True)
class GroupAssignment:
    window: str
    low: tuple
    middle: tuple
    high: tuple
    boundaries: tuple

    def group_of(self, security_id):
        if security_id in self.low:
            return "L"
        if security_id in self.high:
            return "H"
        if security_id in self.middle:
            return "M"
        raise KeyError(security_id)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    pvalue: float
    direction: int


@dataclass(frozen=True)
class TestVerdict:
    measure: str
    window: str
    test1: str
    test1_sign: str
    test1_p: float
    test2: str
    test2_sign: str
    test2_p: float
    critical_values: tuple
    n_low: int = 0
    n_high: int = 0
    dropped: int = 0
    flags: tuple = field(default_factory=tuple)

    def to_row(self):
        def fmt(p):
            return "" if math.isnan(p) else repr(float(p))
        return [self.measure, self.window, self.test1_sign, fmt(self.test1_p),
                self.test2_sign, fmt(self.test2_p)]


def _rank_key(item):
    sid, score = item
    return (score, sid)


def assign_terciles(scores, window="", lower_pct=100 / 3, upper_pct=200 / 3):
    """Split securities into L / M / H by score.

    ``scores`` is a mapping ``security_id -> score`` or an iterable of
    ClusteringScore (only status ``ok`` rows are used). Ranking is by score
    with ties broken by security id; L holds the first ``floor(N/3)``
    securities and H the last ``floor(N/3)``. Other regions of the score
    distribution can be selected with ``lower_pct``/``upper_pct``; L is then
    ranks below ``lower_pct`` and H ranks from ``upper_pct`` up.
    """
    if hasattr(scores, "items"):
        items = [(sid, float(v)) for sid, v in scores.items() if np.isfinite(v)]
    else:
        items = [(s.security_id, float(s.score)) for s in scores if s.status == "ok"]
    if len({sid for sid, _ in items}) != len(items):
        raise ValueError("duplicate security ids in scores")
    n = len(items)
    if n < 9:
        raise ValueError(f"need at least 9 scored securities, got {n}")
    ranked = sorted(items, key=_rank_key)
    if math.isclose(lower_pct, 100 / 3) and math.isclose(upper_pct, 200 / 3):
        k = n // 3
        lo, hi = k, n - k
    else:
        lo = math.floor(n * lower_pct / 100 + 1e-9)
        hi = n - math.floor(n * (100 - upper_pct) / 100 + 1e-9)
    ids = [sid for sid, _ in ranked]
    return GroupAssignment(
        window=window, low=tuple(ids[:lo]), middle=tuple(ids[lo:hi]),
        high=tuple(ids[hi:]),
        boundaries=(ranked[lo - 1][1], ranked[hi][1]))


def _ecdf(sample, at):
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, at, side="right") / s.size


def ks_two_sample(a, b):
    """Two-sample Kolmogorov-Smirnov test.

    The p-value comes from the exact null distribution of ``D`` for the two
    sample sizes. Where that computation is not feasible the asymptotic
    Kolmogorov tail is used instead, evaluated at
    ``(sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D`` with ``ne = n m / (n + m)``.
    ``direction`` is the sign of ``F_a - F_b`` at the supremum: +1 when
    ``b`` tends to be larger.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 1 or b.size < 1:
        raise ValueError("empty sample")
    grid = np.union1d(a, b)
    diff = _ecdf(a, grid) - _ecdf(b, grid)
    i = int(np.argmax(np.abs(diff)))
    d = float(abs(diff[i]))
    if d == 0:
        return TestResult(0.0, 1.0, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("error", RuntimeWarning)
        try:
            p = float(stats.ks_2samp(a, b, method="exact").pvalue)
        except RuntimeWarning:
            # exact path overflowed; scipy would silently go asymptotic
            en = math.sqrt(a.size * b.size / (a.size + b.size))
            p = float(special.kolmogorov((en + 0.12 + 0.11 / en) * d))
    return TestResult(d, min(max(p, 0.0), 1.0), int(np.sign(diff[i])))


def mww_test(a, b):
    """Mann-Whitney-Wilcoxon test with tie and continuity correction.

    Returns U of ``b`` and ``direction`` = sign of (rank sum of ``b`` minus
    its null mean).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = a.size, b.size
    if n1 < 1 or n2 < 1:
        raise ValueError("empty sample")
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)
    r2 = ranks[n1:].sum()
    u2 = r2 - n2 * (n2 + 1) / 2
    mu = n1 * n2 / 2
    n = n1 + n2
    _, counts = np.unique(pooled, return_counts=True)
    tie = (counts ** 3 - counts).sum()
    var = n1 * n2 / 12 * ((n + 1) - tie / (n * (n - 1)))
    delta = u2 - mu
    if var <= 0:
        return TestResult(float(u2), 1.0, 0)
    z = max(abs(delta) - 0.5, 0.0) / math.sqrt(var)
    p = float(min(1.0, 2 * stats.norm.sf(z)))
    return TestResult(float(u2), p, int(np.sign(delta)))


def _merge_bins(counts_a, counts_b, min_expected):
    """Merge adjacent bins until every expected cell reaches ``min_expected``.

    The rightmost deficient bin is folded into its left neighbour (or right
    neighbour when it is the first bin), repeatedly.
    """
    ca = list(counts_a)
    cb = list(counts_b)
    na, nb = sum(ca), sum(cb)
    n = na + nb

    def deficient(j):
        col = ca[j] + cb[j]
        return min(na, nb) * col / n < min_expected

    while len(ca) > 1:
        bad = [j for j in range(len(ca)) if deficient(j)]
        if not bad:
            break
        j = bad[-1]
        k = j - 1 if j > 0 else 1
        ca[k] += ca[j]
        cb[k] += cb[j]
        del ca[j], cb[j]
    return np.array(ca, float), np.array(cb, float)


def chi2_binned(a, b, min_expected=5.0):
    """Chi-square homogeneity test for two samples of small counts.

    Returns ``(statistic, pvalue, n_bins)``; with fewer than two bins left
    after merging the statistic is 0, p is 1 and ``n_bins`` says so.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.size < 1 or b.size < 1:
        raise ValueError("empty sample")
    values = np.union1d(a, b)
    ca = np.array([(a == v).sum() for v in values])
    cb = np.array([(b == v).sum() for v in values])
    ca, cb = _merge_bins(ca, cb, min_expected)
    if ca.size < 2:
        return 0.0, 1.0, int(ca.size)
    table = np.vstack([ca, cb])
    expected = table.sum(axis=1, keepdims=True) * table.sum(axis=0) / table.sum()
    stat = float(((table - expected) ** 2 / expected).sum())
    p = float(stats.chi2.sf(stat, ca.size - 1))
    return stat, p, int(ca.size)


def sign_of(direction, pvalue, critical):
    if not pvalue < critical or direction == 0:
        return "="
    return "+" if direction > 0 else "-"


@dataclass(frozen=True)
class CriticalValues:
    """Significance thresholds per test.

    Defaults follow the annual-window tables; 2-month windows use 0.05 for
    KS and MWW. ``chi2`` is separate for both window lengths.
    """

    ks: float = 0.025
    mww: float = 0.025
    chi2: float = 0.05
    mww_counts: float = 0.025

    @classmethod
    def for_window(cls, window_length="annual", chi2=0.05):
        if window_length == "annual":
            return cls(0.025, 0.025, chi2, 0.025)
        if window_length == "2-month":
            return cls(0.05, 0.05, chi2, 0.05)
        raise ValueError(f"unknown window length {window_length!r}")


def compare_measure(low, high, measure, window="", critical=None):
    """Run the test pair for one measure and return a TestVerdict."""
    critical = critical or CriticalValues()
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    n_drop = int((~np.isfinite(low)).sum() + (~np.isfinite(high)).sum())
    low = low[np.isfinite(low)]
    high = high[np.isfinite(high)]
    if low.size < 5 or high.size < 5:
        return TestVerdict(measure, window, "", "=", math.nan, "", "=", math.nan,
                           (), low.size, high.size, n_drop, ("too_few",))
    mww = mww_test(low, high)
    if measure in COUNT_MEASURES:
        _, p1, bins = chi2_binned(low, high)
        flags = ("merged_to_one_bin",) if bins < 2 else ()
        s1 = NOT_EQUAL if p1 < critical.chi2 else "="
        return TestVerdict(measure, window, "chi2", s1, p1, "mww",
                           sign_of(mww.direction, mww.pvalue, critical.mww_counts),
                           mww.pvalue, (critical.chi2, critical.mww_counts),
                           low.size, high.size, n_drop, flags)
    ks = ks_two_sample(low, high)
    return TestVerdict(measure, window, "ks",
                       sign_of(ks.direction, ks.pvalue, critical.ks), ks.pvalue,
                       "mww", sign_of(mww.direction, mww.pvalue, critical.mww),
                       mww.pvalue, (critical.ks, critical.mww),
                       low.size, high.size, n_drop)


def verdict_table(metrics, assignment, critical=None, measures=MEASURES):
    """Verdicts for every measure of one window.

    ``metrics`` maps ``security_id -> {measure: value}`` (or InstabilityReport
    objects). Securities missing from ``metrics`` or with NaN values are
    dropped pairwise and counted in ``dropped``.
    """
    out = []
    for measure in measures:
        def values(ids):
            vals = []
            for sid in ids:
                m = metrics.get(sid)
                if m is None:
                    vals.append(math.nan)
                else:
                    vals.append(m[measure] if isinstance(m, dict) else getattr(m, measure))
            return vals
        v = compare_measure(values(assignment.low), values(assignment.high),
                            measure, assignment.window, critical)
        if v.dropped:
            logger.info("%s/%s: dropped %d missing values", measure,
                        assignment.window, v.dropped)
        out.append(v)
    return out


def cdf_curves(low, high):
    """Empirical CDFs of both groups on the pooled support.

    Returns an array of rows ``(x, F_low, F_high, sign)`` where ``sign`` is
    the sign of ``F_high - F_low`` on ``[x, next x)``.
    """
    low = np.asarray(low, dtype=float)
    high = np.asarray(high, dtype=float)
    low = low[np.isfinite(low)]
    high = high[np.isfinite(high)]
    if low.size == 0 or high.size == 0:
        raise ValueError("empty sample")
    x = np.union1d(low, high)
    fl = _ecdf(low, x)
    fh = _ecdf(high, x)
    return np.column_stack([x, fl, fh, np.sign(fh - fl)])


def write_verdicts(verdicts, dest):
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_verdicts(verdicts, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(VERDICT_COLUMNS)
    for v in verdicts:
        w.writerow(v.to_row())


def write_cdf(curves, dest):
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_cdf(curves, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(CDF_COLUMNS)
    for x, fl, fh, sg in curves:
        w.writerow([repr(float(x)), repr(float(fl)), repr(float(fh)), int(sg)])
