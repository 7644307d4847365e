"""Monthly (security, month) panel for external dynamic-panel estimation."""
import csv
import math
from collections import defaultdict

import numpy as np
import pandas as pd

from .instability import ReturnSeries

PANEL_COLUMNS = ("security_id", "month", "CLUST", "VaR_chg", "VaR_dev",
                 "VLuck_chg", "MKTF", "VIX", "MOM", "MOM6", "MCAP", "ILLIQ",
                 "PB3", "DY", "LEV3")
ILLIQ_OFFSET = 1e-6


class DuplicateKeyError(ValueError):
    def __init__(self, what, keys):
        keys = sorted(keys)
        super().__init__(f"duplicate keys in {what}: {keys[:10]}"
                         + (" ..." if len(keys) > 10 else ""))
        self.keys = keys


def _open(source):
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        return open(source, newline="", encoding="utf-8")
    return source


def _num(text):
    text = (text or "").strip()
    return float(text) if text else math.nan


def read_prices(source):
    """Daily closes CSV -> ``{security_id: ReturnSeries}`` of log returns."""
    closes = defaultdict(list)
    with _open(source) as fh:
        for row in csv.DictReader(fh):
            closes[row["security_id"]].append((row["date"], float(row["close"])))
    out = {}
    for sid, rows in sorted(closes.items()):
        rows.sort()
        dates = np.array([d for d, _ in rows], dtype="datetime64[D]")
        c = np.array([v for _, v in rows])
        if (c <= 0).any():
            raise ValueError(f"non-positive close for {sid}")
        same = dates[1:] == dates[:-1]
        if same.any():
            raise DuplicateKeyError("prices", {(sid, str(d)) for d in dates[1:][same]})
        if c.size < 3:
            continue
        out[sid] = ReturnSeries(sid, dates[1:], np.diff(np.log(c)))
    return out


def read_market(source):
    out, dup = {}, set()
    with _open(source) as fh:
        for row in csv.DictReader(fh):
            m = row["month"].strip()
            if m in out:
                dup.add(m)
            out[m] = (_num(row["MKTF"]), _num(row["VIX"]))
    if dup:
        raise DuplicateKeyError("market covariates", dup)
    return out


def read_fundamentals(source):
    out, dup = {}, set()
    with _open(source) as fh:
        for row in csv.DictReader(fh):
            key = (row["security_id"].strip(), row["month"].strip())
            if key in out:
                dup.add(key)
            out[key] = {k: _num(row[k]) for k in ("MCAP", "PB3", "DY", "LEV3")}
    if dup:
        raise DuplicateKeyError("fundamentals", dup)
    return out


def read_volumes(source):
    vols, dup = defaultdict(dict), set()
    with _open(source) as fh:
        for row in csv.DictReader(fh):
            sid, d = row["security_id"].strip(), row["date"].strip()
            if d in vols[sid]:
                dup.add((sid, d))
            vols[sid][d] = _num(row["euro_volume"])
    if dup:
        raise DuplicateKeyError("volumes", dup)
    return dict(vols)


def monthly_returns(series):
    """Monthly returns in % from daily log returns: ``100 (exp(sum r) - 1)``."""
    months = series.dates.astype("datetime64[M]")
    out = {}
    for m in np.unique(months):
        out[str(m)] = 100.0 * math.expm1(float(series.log_returns[months == m].sum()))
    return out


def momentum(monthly, month, length):
    """Trailing mean of ``length`` monthly returns ending at ``month``.

    NaN unless all months are present.
    """
    y, m = map(int, month.split("-"))
    i = y * 12 + m - 1
    vals = []
    for k in range(length):
        j = i - k
        key = f"{j // 12:04d}-{j % 12 + 1:02d}"
        if key not in monthly:
            return math.nan
        vals.append(monthly[key])
    return float(np.mean(vals))


def illiquidity(series, volumes, month):
    """``log(mean(|r_d| / volume_d) + 1e-6)`` over the days of ``month``.

    Days without a positive volume are skipped; NaN when none remain.
    """
    if volumes is None:
        return math.nan
    mask = series.dates.astype("datetime64[M]") == np.datetime64(month, "M")
    ratios = []
    for d, r in zip(series.dates[mask], series.log_returns[mask]):
        v = volumes.get(str(d))
        if v is not None and v > 0:
            ratios.append(abs(r) / v)
    if not ratios:
        return math.nan
    return math.log(float(np.mean(ratios)) + ILLIQ_OFFSET)


def export_panel(scores, var_table, returns=None, market=None,
                 fundamentals=None, volumes=None):
    """Assemble panel rows.

    Parameters
    ----------
    scores : iterable of ClusteringScore
        Only status ``ok`` rows with a score other than -1 enter the panel.
    var_table : dict
        ``(security_id, month) -> (var_chg, var_dev, vluck_chg)`` for every
        month whose rolling VaR window exists.
    returns : dict of ReturnSeries, optional
        Used for MOM/MOM6 and ILLIQ.
    market, fundamentals, volumes : dicts from the ``read_*`` helpers.

    Returns
    -------
    pandas.DataFrame with columns ``PANEL_COLUMNS``, sorted by security then
    month. Missing covariates are NaN except DY, which defaults to 0.
    """
    market = market or {}
    fundamentals = fundamentals or {}
    volumes = volumes or {}
    returns = returns or {}
    monthly_cache = {}
    rows = []
    seen = set()
    for s in scores:
        if s.status != "ok" or s.score == -1.0:
            continue
        key = (s.security_id, s.month)
        if key in seen:
            raise DuplicateKeyError("scores", {key})
        seen.add(key)
        if key not in var_table:
            continue
        var_chg, var_dev, vluck_chg = var_table[key]
        mktf, vix = market.get(s.month, (math.nan, math.nan))
        fund = fundamentals.get(key, {})
        series = returns.get(s.security_id)
        mom = mom6 = illiq = math.nan
        if series is not None:
            if s.security_id not in monthly_cache:
                monthly_cache[s.security_id] = monthly_returns(series)
            mr = monthly_cache[s.security_id]
            mom = momentum(mr, s.month, 12)
            mom6 = momentum(mr, s.month, 6)
            illiq = illiquidity(series, volumes.get(s.security_id), s.month)
        mcap = fund.get("MCAP", math.nan)
        mcap = math.log(mcap) if mcap > 0 else math.nan
        dy = fund.get("DY", math.nan)
        rows.append((s.security_id, s.month, s.score, var_chg, var_dev, vluck_chg,
                     mktf, vix, mom, mom6, mcap, illiq,
                     fund.get("PB3", math.nan), 0.0 if math.isnan(dy) else dy,
                     fund.get("LEV3", math.nan)))
    df = pd.DataFrame(rows, columns=list(PANEL_COLUMNS))
    return df.sort_values(["security_id", "month"], kind="stable").reset_index(drop=True)


def write_panel(df, dest):
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            return write_panel(df, fh)
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(PANEL_COLUMNS)
    for row in df.itertuples(index=False):
        w.writerow([v if isinstance(v, str) else
                    ("" if math.isnan(v) else repr(float(v))) for v in row])


def describe_panel(panel, variables=None, entity="security_id"):
    """Descriptive statistics with between/within variation shares.

    For each variable: n, mean, median, sd, min, max, and the shares
    ``var(entity means) / var`` (between) and
    ``var(x - entity mean + grand mean) / var`` (within), all with ddof=1.
    On unbalanced panels the two shares need not add up to one.
    """
    if not isinstance(panel, pd.DataFrame):
        panel = pd.read_csv(panel)
    if panel.empty:
        raise ValueError("empty panel")
    if variables is None:
        variables = [c for c in panel.columns
                     if c not in (entity, "month") and pd.api.types.is_numeric_dtype(panel[c])]
    out = []
    for var in variables:
        sub = panel[[entity, var]].dropna()
        x = sub[var].to_numpy(float)
        n = x.size
        if n == 0:
            out.append((var, 0) + (math.nan,) * 8)
            continue
        total = x.var(ddof=1) if n > 1 else math.nan
        groups = sub.groupby(entity, sort=True)[var]
        means = groups.transform("mean").to_numpy(float)
        ent_means = groups.mean().to_numpy(float)
        between = ent_means.var(ddof=1) if ent_means.size > 1 else math.nan
        within = (x - means + x.mean()).var(ddof=1) if n > 1 else math.nan
        share = (lambda v: v / total) if total and total > 0 else (lambda v: math.nan)
        out.append((var, n, float(x.mean()), float(np.median(x)),
                    float(np.sqrt(total)) if n > 1 else math.nan,
                    float(x.min()), float(x.max()), share(between), share(within)))
    return pd.DataFrame(out, columns=["variable", "n", "mean", "median", "sd",
                                      "min", "max", "between_share",
                                      "within_share"])
