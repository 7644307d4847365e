import io
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from mktcluster._validation import InsufficientDataError
from mktcluster.instability import (InstabilityMeasures, InstabilityReport,
                                    OutlierTestConfig, ReturnSeries,
                                    RiskWindow, grubbs_critical, hill_index,
                                    hill_k, moments, normalize_returns,
                                    outlier_counts, read_reports, rolling_var,
                                    segment_slice, series_measures,
                                    value_at_risk, var_dynamics, write_reports)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
samples = arrays(np.float64, st.integers(40, 200), elements=finite)


def spread(x):
    return np.ptp(x) > 1e-6 * max(1.0, np.abs(x).max())


def window(var, vluck=1.0, month="2010-01"):
    return RiskWindow(month, 0.05, 12, var, vluck, 250)


# normalisation and moments ------------------------------------------------

def test_alternating_series_normalises_to_unit_std():
    x = np.tile([1.0, -1.0], 20)
    z = normalize_returns(x)
    np.testing.assert_allclose(z, x / x.std(ddof=1))
    assert z.std(ddof=1) == pytest.approx(1.0, abs=1e-12)


def test_normalisation_is_scale_invariant():
    x = np.random.default_rng(0).normal(0, 0.02, 500)
    np.testing.assert_allclose(normalize_returns(7 * x), normalize_returns(x), atol=1e-12)
    assert normalize_returns(x).std(ddof=1) == pytest.approx(1.0, abs=1e-12)


def test_normalisation_errors():
    with pytest.raises(ValueError, match="zero standard deviation"):
        normalize_returns(np.ones(40))
    with pytest.raises(InsufficientDataError):
        normalize_returns(np.arange(10.0))


def test_moment_examples():
    assert moments([1, 1, 1, 5])[0] == 0.0
    with pytest.raises(InsufficientDataError):
        moments([1, 2, 3])
    z = np.random.default_rng(1).standard_normal(100_000)
    assert moments(z)[3] == pytest.approx(3.0, abs=0.2)
    t5 = np.random.default_rng(2).standard_t(5, 100_000)
    assert moments(t5)[3] == pytest.approx(3 + 6 / (5 - 4), abs=1.0)


def test_moments_against_scipy():
    x = np.random.default_rng(3).gamma(2.0, size=300)
    mad, var, skew, kurt = moments(x)
    assert mad == pytest.approx(stats.median_abs_deviation(x), rel=1e-12)
    assert var == pytest.approx(np.var(x, ddof=1), rel=1e-12)
    assert skew == pytest.approx(stats.skew(x), rel=1e-10)
    assert kurt == pytest.approx(stats.kurtosis(x, fisher=False), rel=1e-10)


# Hill ----------------------------------------------------------------------

def test_hill_closed_form():
    x = np.exp([3.0, 2.0, 1.0])
    assert hill_index(x, "positive", k=2) == pytest.approx(2 / 3, abs=1e-12)


def test_hill_pareto_two():
    x = np.random.default_rng(4).pareto(2.0, 10_000) + 1.0
    assert hill_index(x, "positive", 0.05) == pytest.approx(2.0, abs=0.3)


def test_hill_k_rule():
    assert hill_k(250) == 13
    assert hill_k(100) == 10
    assert hill_k(10_000) == 500


def test_hill_short_tail_is_missing():
    assert math.isnan(hill_index(np.r_[np.ones(5), -np.ones(40)], "positive"))
    with pytest.raises(ValueError):
        hill_index(np.ones(5), "both")


# Grubbs ----------------------------------------------------------------------

def test_grubbs_critical_value():
    # tabulated two-sided values at alpha = 0.05
    assert grubbs_critical(10) == pytest.approx(2.290, abs=1e-3)
    assert grubbs_critical(100) == pytest.approx(3.384, abs=1e-3)


def test_constant_series_has_no_outliers():
    assert outlier_counts(np.full(50, 0.3)) == (0, 0)


def test_injected_point_is_found():
    hits = 0
    for seed in range(200):
        x = np.random.default_rng(seed).standard_normal(250)
        x[17] = 8.0
        pos, neg = outlier_counts(x)
        hits += pos >= 1
    assert hits >= 198


def test_removal_cap():
    x = np.r_[np.zeros(16), 100.0 * np.arange(1, 5)]
    pos, neg = outlier_counts(x, OutlierTestConfig(max_removals=0.1))
    assert pos + neg <= 2
    with pytest.raises(ValueError):
        OutlierTestConfig(alpha=0)


# VaR -----------------------------------------------------------------------

def test_var_mass_at_quantile():
    x = np.r_[np.full(5, -0.10), np.full(95, 0.01)]
    var, _ = value_at_risk(x, 0.05)
    assert var == pytest.approx(0.10, abs=1e-15)


def test_var_symmetric_window():
    x = np.random.default_rng(5).standard_normal(301)
    var, vluck = value_at_risk(np.r_[x, -x], 0.05)
    assert var == vluck


def test_var_normal_quantile():
    x = np.random.default_rng(6).standard_normal(10_000)
    var, vluck = value_at_risk(x, 0.05)
    assert var == pytest.approx(1.645, abs=0.05)
    assert vluck == pytest.approx(1.645, abs=0.05)


def test_var_methods():
    x = np.random.default_rng(7).standard_normal(500)
    lin = value_at_risk(x, 0.05, "linear")
    boot = value_at_risk(x, 0.05, "bootstrap", random_state=1)
    assert lin[0] == pytest.approx(-np.quantile(x, 0.05))
    assert boot == value_at_risk(x, 0.05, "bootstrap", random_state=1)
    assert abs(boot[0] - lin[0]) < 0.2
    with pytest.raises(ValueError):
        value_at_risk(x, 0.05, "kernel")
    with pytest.raises(ValueError):
        value_at_risk(x, 0.6)


def test_rolling_var_window():
    dates = np.arange(np.datetime64("2009-01-01"), np.datetime64("2010-12-31"))
    r = np.random.default_rng(8).standard_normal(dates.size)
    series = ReturnSeries("s1", dates, r)
    w = rolling_var(series, "2010-06", window_months=12)
    mask = (dates >= np.datetime64("2009-07-01")) & (dates <= np.datetime64("2010-06-30"))
    assert w.n_obs == mask.sum()
    assert w.var == value_at_risk(r[mask])[0]
    assert rolling_var(series, "2009-02", window_months=1) is None


def test_var_dynamics_examples():
    same = window(2.0)
    assert var_dynamics(same, same, [1, 2, 3])[0] == 0.0
    assert var_dynamics(window(4.0), window(2.0), [1, 2, 3])[0] == pytest.approx(100.0)
    devs = [var_dynamics(window(v), None, [2.0, 4.0, 6.0])[1] for v in (2.0, 4.0, 6.0)]
    assert devs == pytest.approx([-50.0, 0.0, 50.0])
    chg, dev, _ = var_dynamics(window(4.0), window(0.0), [4.0, 5.0])
    assert math.isnan(chg) and math.isnan(dev)


# segments --------------------------------------------------------------------

def test_segment_examples():
    x = np.random.default_rng(9).permutation(np.arange(10.0))
    np.testing.assert_array_equal(segment_slice(x, 0, 100), x)
    assert sorted(segment_slice(x, 40, 60)) == [4.0, 5.0]
    with pytest.raises(ValueError):
        segment_slice(x, 60, 40)
    with pytest.raises(ValueError, match="empty"):
        segment_slice(x, 0, 5)


@given(arrays(np.float64, st.integers(1, 60), elements=finite), st.floats(1, 99))
def test_segments_partition(x, cut):
    lo = segment_slice(x, 0, cut) if math.floor(x.size * cut / 100 + 1e-9) else np.array([])
    hi = segment_slice(x, cut, 100) if math.floor(x.size * cut / 100 + 1e-9) < x.size \
        else np.array([])
    assert sorted(np.r_[lo, hi]) == sorted(x)


# properties ---------------------------------------------------------------

@given(samples)
def test_symmetric_sample_has_zero_skew(x):
    assume(spread(x))
    z = np.r_[x, -x]
    assert abs(moments(z)[2]) <= 1e-12


@settings(max_examples=50)
@given(samples, st.floats(0.01, 100), st.floats(-100, 100))
def test_kurtosis_affine_invariance(x, a, b):
    assume(spread(x) and np.std(x) > 1e-3)
    base = moments(x)[3]
    assert moments(a * x + b)[3] == pytest.approx(base, rel=1e-6)


@given(samples, st.floats(0.01, 100))
def test_hill_scale_invariance(x, c):
    for tail in ("positive", "negative"):
        h0, h1 = hill_index(x, tail), hill_index(c * x, tail)
        assert (math.isnan(h0) and math.isnan(h1)) or h1 == pytest.approx(h0, rel=1e-9)


@given(samples)
def test_hill_sign_flip_swaps_tails(x):
    pos, neg = hill_index(x, "positive"), hill_index(x, "negative")
    fpos, fneg = hill_index(-x, "positive"), hill_index(-x, "negative")
    assert (pos == fneg or (math.isnan(pos) and math.isnan(fneg)))
    assert (neg == fpos or (math.isnan(neg) and math.isnan(fpos)))


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10), st.floats(-10, 10))
def test_grubbs_affine_invariance(seed, a, b):
    x = np.random.default_rng(seed).standard_t(3, 120)
    base = outlier_counts(x)
    assert outlier_counts(a * x + b) == base
    assert outlier_counts(-x) == base[::-1]


@given(arrays(np.float64, st.integers(20, 100), elements=finite), st.floats(1, 1e4))
def test_var_monotone_in_new_loss(x, extra):
    var, _ = value_at_risk(x)
    var2, _ = value_at_risk(np.r_[x, x.min() - extra])
    assert var2 >= var


@given(st.lists(st.floats(0.1, 10), min_size=3, max_size=31).filter(lambda v: len(v) % 2))
def test_var_dev_median_is_zero(vars_):
    devs = [var_dynamics(window(v), None, vars_)[1] for v in vars_]
    assert np.median(devs) == pytest.approx(0.0, abs=1e-9)


# plumbing ------------------------------------------------------------------

def test_return_series_validation():
    with pytest.raises(ValueError, match="increasing"):
        ReturnSeries("s", ["2010-01-02", "2010-01-01"], [0.1, 0.2])
    with pytest.raises(ValueError, match="non-finite"):
        ReturnSeries("s", ["2010-01-01", "2010-01-02"], [0.1, np.nan])


def test_reports_round_trip_and_estimator():
    x = np.random.default_rng(10).standard_normal(250)
    m = series_measures(x)
    rep = InstabilityReport("s1", "2010", **m, var_chg=1.5)
    buf = io.StringIO()
    write_reports([rep], buf)
    back = read_reports(io.StringIO(buf.getvalue()))[0]
    assert back.security_id == "s1" and back.kurtosis == rep.kurtosis
    assert math.isnan(back.var_dev)
    est = InstabilityMeasures().fit()
    out = est.transform([x, x[:100]])
    assert out.shape == (2, 8)
    assert out[0].tolist() == [m[k] for k in est.get_feature_names_out()]
