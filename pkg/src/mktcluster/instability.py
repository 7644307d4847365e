"""Price-instability statistics on daily log-return series.

Conventions that the statistics depend on:

* skewness and kurtosis use n-denominator central moments; kurtosis is
  reported non-excess (3 for a normal sample);
* variance and the normalising standard deviation use ddof=1;
* the Hill tail uses k = ceil(5% of the series) largest exceedances, at
  least 10;
* outliers are counted by repeated two-sided Grubbs tests at alpha=0.05,
  removing at most 20% of the sample;
* VaR/VLuck are the magnitudes of the lower/upper order statistics at the
  requested level (see :func:`value_at_risk`).
"""
import csv
import logging
import math
from dataclasses import dataclass, fields

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import InsufficientDataError, check_fraction, check_series

logger = logging.getLogger(__name__)

MIN_NORMALIZE_OBS = 30
MIN_VAR_OBS = 60
HILL_FRACTION = 0.05
HILL_K_MIN = 10


@dataclass(frozen=True)
class ReturnSeries:
    security_id: str
    dates: np.ndarray
    log_returns: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        r = check_series(self.log_returns, 2, "log_returns")
        if dates.shape != r.shape:
            raise ValueError("dates and log_returns differ in length")
        if dates.size > 1 and not (np.diff(dates) > np.timedelta64(0, "D")).all():
            raise ValueError("dates must be strictly increasing")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "log_returns", r)

    def __len__(self):
        return self.log_returns.size

    def between(self, start, end):
        """Sub-series with ``start <= date <= end`` (datetime64 or ISO str)."""
        start = np.datetime64(start, "D")
        end = np.datetime64(end, "D")
        mask = (self.dates >= start) & (self.dates <= end)
        return self.dates[mask], self.log_returns[mask]


@dataclass(frozen=True)
class OutlierTestConfig:
    alpha: float = 0.05
    max_removals: float = 0.20

    def __post_init__(self):
        check_fraction(self.alpha, "alpha")
        check_fraction(self.max_removals, "max_removals", inclusive=True)


@dataclass(frozen=True)
class RiskWindow:
    month: str
    var_level: float
    window_months: int
    var: float
    vluck: float
    n_obs: int


@dataclass(frozen=True)
class InstabilityReport:
    security_id: str
    window: str
    mad: float = math.nan
    variance: float = math.nan
    skewness: float = math.nan
    kurtosis: float = math.nan
    hill_pos: float = math.nan
    hill_neg: float = math.nan
    outliers_pos: float = math.nan
    outliers_neg: float = math.nan
    var_chg: float = math.nan
    var_dev: float = math.nan
    vluck_chg: float = math.nan


REPORT_COLUMNS = tuple(f.name for f in fields(InstabilityReport))
MEASURES = ("mad", "variance", "skewness", "kurtosis", "hill_neg", "hill_pos",
            "outliers_neg", "outliers_pos")


def normalize_returns(x):
    """Divide returns by their sample standard deviation (ddof=1)."""
    x = check_series(x, MIN_NORMALIZE_OBS)
    sd = x.std(ddof=1)
    if sd == 0:
        raise ValueError("zero standard deviation (constant price series)")
    return x / sd


def moments(x):
    """Return ``(mad, variance, skewness, kurtosis)``.

    MAD is the median absolute deviation from the median. Kurtosis is
    non-excess.
    """
    x = check_series(x, 4)
    med = np.median(x)
    mad = float(np.median(np.abs(x - med)))
    variance = float(x.var(ddof=1))
    c = x - x.mean()
    m2 = np.mean(c ** 2)
    if m2 == 0:
        return mad, variance, math.nan, math.nan
    skew = float(np.mean(c ** 3) / m2 ** 1.5)
    kurt = float(np.mean(c ** 4) / m2 ** 2)
    return mad, variance, skew, kurt


def hill_k(n, k_fraction=HILL_FRACTION, k_min=HILL_K_MIN):
    return max(math.ceil(k_fraction * n - 1e-9), k_min)


def hill_index(x, tail="positive", k_fraction=HILL_FRACTION, k=None,
               k_min=HILL_K_MIN):
    """Hill tail index ``1 / gamma`` of one tail of ``x``.

    ``gamma`` is the mean of ``log(x_(i) / x_(k+1))`` over the ``k`` largest
    magnitudes. The negative tail uses the magnitudes of negative values.
    By default ``k = max(ceil(k_fraction * len(x)), k_min)``; an explicit
    ``k`` overrides both. Returns NaN when the tail has fewer than ``k + 1``
    strictly positive exceedances.
    """
    x = check_series(x, 1)
    if tail == "positive":
        t = x[x > 0]
    elif tail == "negative":
        t = -x[x < 0]
    else:
        raise ValueError(f"tail must be 'positive' or 'negative', got {tail!r}")
    if k is None:
        k = hill_k(x.size, k_fraction, k_min)
    if k < 1 or t.size < k + 1:
        return math.nan
    top = np.sort(t)[::-1][:k + 1]
    gamma = np.mean(np.log(top[:k] / top[k]))
    if gamma <= 0:
        return math.nan
    return float(1.0 / gamma)


def grubbs_critical(n, alpha=0.05):
    """Two-sided Grubbs critical value for sample size ``n``."""
    t = stats.t.isf(alpha / (2 * n), n - 2)
    return (n - 1) / math.sqrt(n) * math.sqrt(t * t / (n - 2 + t * t))


def outlier_counts(x, config=None):
    """Sequential two-sided Grubbs test; returns ``(n_positive, n_negative)``.

    The most extreme point is removed while it exceeds the critical value;
    its sign relative to the current mean decides which count it feeds.
    Stops early on zero variance or when ``max_removals`` of the original
    sample has been removed.
    """
    config = config or OutlierTestConfig()
    x = check_series(x, 10)
    cap = int(math.floor(config.max_removals * x.size))
    pos = neg = 0
    work = x.copy()
    while pos + neg < cap and work.size > 2:
        mean = work.mean()
        sd = work.std(ddof=1)
        if sd == 0:
            break
        dev = work - mean
        i = int(np.argmax(np.abs(dev)))
        if abs(dev[i]) / sd <= grubbs_critical(work.size, config.alpha):
            break
        if dev[i] > 0:
            pos += 1
        else:
            neg += 1
        work = np.delete(work, i)
    return pos, neg


def value_at_risk(x, level=0.05, method="order", n_boot=1000, random_state=None):
    """Historical VaR and VLuck magnitudes of a return window.

    ``method="order"`` (default) uses the lower order statistic at position
    ``level * (n - 1)`` for VaR and the mirrored upper one for VLuck, so
    that mass sitting exactly at the quantile is returned unchanged and a
    symmetric sample gives ``VaR == VLuck``. ``"linear"`` interpolates
    between order statistics. ``"bootstrap"`` averages the ``"order"``
    quantiles over ``n_boot`` resamples.
    """
    x = check_series(x, 1)
    level = check_fraction(level, "level", 0.0, 0.5)
    if method == "order":
        return (float(-np.quantile(x, level, method="lower")),
                float(-np.quantile(-x, level, method="lower")))
    if method == "linear":
        return (float(-np.quantile(x, level)), float(np.quantile(x, 1 - level)))
    if method == "bootstrap":
        rng = np.random.default_rng(random_state)
        draws = rng.choice(x, size=(n_boot, x.size), replace=True)
        lo = np.quantile(draws, level, axis=1, method="lower")
        hi = np.quantile(-draws, level, axis=1, method="lower")
        return float(-lo.mean()), float(-hi.mean())
    raise ValueError(f"unknown VaR method {method!r}")


def month_bounds(month, back=0):
    """First and last day of the calendar month ``back`` months before."""
    y, m = map(int, month.split("-"))
    idx = y * 12 + (m - 1) - back
    first = np.datetime64(f"{idx // 12:04d}-{idx % 12 + 1:02d}", "M")
    return first.astype("datetime64[D]"), (first + 1).astype("datetime64[D]") - 1


def rolling_var(series, month, level=0.05, window_months=12, method="order",
                random_state=None):
    """VaR/VLuck over the ``window_months`` calendar months ending at ``month``.

    Returns None when the window holds fewer than 60 observations.
    """
    start, _ = month_bounds(month, window_months - 1)
    _, end = month_bounds(month)
    _, r = series.between(start, end)
    if r.size < MIN_VAR_OBS:
        return None
    var, vluck = value_at_risk(r, level, method, random_state=random_state)
    return RiskWindow(month, level, window_months, var, vluck, int(r.size))


def _pct_change(new, old):
    if old is None or new is None or old == 0:
        return math.nan
    return 100.0 * (new / old - 1.0)


def var_dynamics(current, previous, cross_section):
    """``(var_chg, var_dev, vluck_chg)`` for one security and month.

    Parameters
    ----------
    current, previous : RiskWindow or None
        Windows ending at months t and t-1.
    cross_section : sequence of float
        VaR at month t of every security in the cross-section (including
        this one). Fewer than 3 values leave ``var_dev`` missing.
    """
    var_chg = _pct_change(current and current.var, previous and previous.var)
    vluck_chg = _pct_change(current and current.vluck, previous and previous.vluck)
    var_dev = math.nan
    cs = [v for v in cross_section if v is not None and np.isfinite(v)]
    if current is not None and len(cs) >= 3:
        var_dev = _pct_change(current.var, float(np.median(cs)))
    return var_chg, var_dev, vluck_chg


def segment_slice(x, lower_pct, upper_pct, dates=None):
    """Keep returns whose rank lies in ``[lower_pct, upper_pct)`` percent.

    Ranks come from a stable ascending sort; cut points are
    ``floor(n * pct / 100)``, so adjacent segments partition the sample.
    Output keeps the original (date) order. With ``dates`` given, returns
    ``(dates, returns)``.
    """
    if not 0 <= lower_pct < upper_pct <= 100:
        raise ValueError("need 0 <= lower_pct < upper_pct <= 100")
    x = check_series(x, 1)
    n = x.size
    lo = math.floor(n * lower_pct / 100 + 1e-9)
    hi = math.floor(n * upper_pct / 100 + 1e-9)
    order = np.argsort(x, kind="stable")
    keep = np.zeros(n, dtype=bool)
    keep[order[lo:hi]] = True
    if not keep.any():
        raise ValueError("empty segment")
    if dates is not None:
        return np.asarray(dates)[keep], x[keep]
    return x[keep]


def series_measures(x, hill_fraction=HILL_FRACTION, outlier_config=None,
                    normalize=True):
    """All distribution measures of one window as a dict keyed by MEASURES.

    MAD and variance use raw returns; shape, tail and outlier measures use
    returns normalised by the window standard deviation. Anything that
    cannot be computed is NaN.
    """
    x = np.asarray(x, dtype=float)
    out = dict.fromkeys(MEASURES, math.nan)
    if x.size < 4:
        return out
    out["mad"], out["variance"], _, _ = moments(x)
    try:
        z = normalize_returns(x) if normalize else check_series(x, 4)
    except (InsufficientDataError, ValueError):
        return out
    _, _, out["skewness"], out["kurtosis"] = moments(z)
    out["hill_pos"] = hill_index(z, "positive", hill_fraction)
    out["hill_neg"] = hill_index(z, "negative", hill_fraction)
    if z.size >= 10:
        pos, neg = outlier_counts(z, outlier_config)
        out["outliers_pos"], out["outliers_neg"] = float(pos), float(neg)
    return out


def write_reports(reports, dest):
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_reports(reports, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        row = []
        for name in REPORT_COLUMNS:
            v = getattr(r, name)
            if isinstance(v, float):
                row.append("" if math.isnan(v) else repr(v))
            else:
                row.append(v)
        w.writerow(row)


def read_reports(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return read_reports(fh)
    out = []
    for row in csv.DictReader(source):
        kw = {k: (float(v) if v != "" else math.nan) for k, v in row.items()
              if k not in ("security_id", "window")}
        out.append(InstabilityReport(row["security_id"], row["window"], **kw))
    return out


class InstabilityMeasures(TransformerMixin, BaseEstimator):
    """Map return windows to the eight distribution measures.

    ``X`` is a 2-D array (one window per row) or a list of 1-D arrays of
    varying length. Output has one column per name in ``MEASURES``.

    Parameters
    ----------
    hill_fraction : float
    alpha : float
        Grubbs significance level.
    max_removals : float
        Cap on the fraction of points the Grubbs loop may remove.
    normalize : bool
        Divide each window by its standard deviation before the shape, tail
        and outlier measures.
    """

    def __init__(self, hill_fraction=HILL_FRACTION, alpha=0.05,
                 max_removals=0.20, normalize=True):
        self.hill_fraction = hill_fraction
        self.alpha = alpha
        self.max_removals = max_removals
        self.normalize = normalize

    def fit(self, X=None, y=None):
        check_fraction(self.hill_fraction, "hill_fraction")
        self.outlier_config_ = OutlierTestConfig(self.alpha, self.max_removals)
        return self

    def transform(self, X):
        check_is_fitted(self, "outlier_config_")
        rows = []
        for x in X:
            m = series_measures(x, self.hill_fraction, self.outlier_config_,
                                self.normalize)
            rows.append([m[k] for k in MEASURES])
        return np.array(rows, dtype=float).reshape(-1, len(MEASURES))

    def get_feature_names_out(self, input_features=None):
        return np.array(MEASURES, dtype=object)
