import itertools
import math

import numpy as np
import pytest
import scipy.special
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from vqrim import survival
from vqrim.data import SyntheticSpec, generate_synthetic
from vqrim.errors import InputError

times_and_events = st.integers(1, 40).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0, 100, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


def chi2_tail_by_quadrature(x, df):
    k = df / 2.0

    def density(t):
        return math.exp((k - 1) * math.log(t) - t / 2 - k * math.log(2) - math.lgamma(k))

    # split at x + 50 so quad sees the bulk of the mass; the remainder is below 1e-11
    head, _ = integrate.quad(density, x, x + 50, epsabs=1e-13, epsrel=1e-12, limit=200)
    tail, _ = integrate.quad(density, x + 50, np.inf, epsabs=1e-13)
    return head + tail


def permutation_p(time, event, group, n_shuffles=None, seed=0):
    """Share of relabelings with a statistic at least as large as the observed one."""
    observed = survival.logrank_test(time, event, group).statistic
    group = np.asarray(group)
    if n_shuffles is None:  # exact: every split with the same group sizes
        n, n0 = len(group), int(np.sum(group == group[0]))
        stats = []
        for members in itertools.combinations(range(n), n0):
            g = np.ones(n, int)
            g[list(members)] = 0
            stats.append(survival.logrank_test(time, event, g).statistic)
        stats = np.array(stats)
    else:
        rng = np.random.default_rng(seed)
        stats = np.array([survival.logrank_test(time, event, rng.permutation(group)).statistic
                          for _ in range(n_shuffles)])
    return (np.sum(stats >= observed - 1e-9) + (0 if n_shuffles is None else 1)) / (
        len(stats) + (0 if n_shuffles is None else 1))


# --------------------------------------------------------------------- KM

def test_km_single_factor():
    c = survival.km_curve([1, 2], [1, 0])
    assert c.survival.tolist() == [0.5]


def test_km_four_subject_example():
    c = survival.km_curve([1, 2, 3, 4], [1, 0, 1, 0])
    assert c.times.tolist() == [1.0, 3.0]
    assert c.survival.tolist() == [0.75, 0.375]
    assert c.at_risk.tolist() == [4, 2] and c.deaths.tolist() == [1, 1]
    assert c(0.5) == 1.0 and c(1) == 0.75 and c(2.9) == 0.75 and c(3) == 0.375 and c(10) == 0.375
    assert survival.median_survival(c) == 3.0


def test_km_no_deaths_is_flat():
    c = survival.km_curve([1, 2, 3], [0, 0, 0])
    assert len(c.times) == 0
    assert c(5.0) == 1.0
    assert survival.median_survival(c) is None


def test_km_ties_deaths_see_tied_censorings():
    # at t=2 one death and one censoring: both are at risk for the death
    c = survival.km_curve([1, 2, 2, 3], [0, 1, 0, 1])
    assert c.at_risk.tolist() == [3, 1]
    assert c.survival.tolist() == [2 / 3, 0.0]


def test_median_examples():
    c = survival.km_curve([1, 2, 3, 4], [1, 1, 0, 0])
    assert c.survival.tolist() == [0.75, 0.5]
    assert survival.median_survival(c) == 2.0
    assert survival.median_survival(survival.km_curve([1, 5], [1, 0])) == 1.0
    assert survival.median_survival(survival.km_curve([1, 5, 6], [1, 0, 0])) is None


def test_km_validation():
    with pytest.raises(InputError):
        survival.km_curve([], [])
    with pytest.raises(InputError):
        survival.km_curve([-1.0], [1])
    with pytest.raises(InputError):
        survival.km_curve([1.0], [2])


@given(times_and_events)
def test_km_properties(data):
    time, event = data
    c = survival.km_curve(time, event)
    s = c.survival
    assert np.all(np.diff(s) <= 0) and np.all((s >= 0) & (s <= 1))
    assert np.all(c.deaths >= 1)  # falls only when somebody dies
    # strictly positive while somebody at risk survives the step
    assert np.all(s[c.at_risk > c.deaths] > 0)
    scaled = survival.km_curve(np.asarray(time) * 3.5, event)
    np.testing.assert_array_equal(scaled.survival, s)


# ------------------------------------------------------------ chi-square tail

def test_chi2_tail_at_critical_value():
    p = survival.chi2_sf(3.841, 1)
    assert abs(p - 0.05) <= 5e-4
    assert abs(p - chi2_tail_by_quadrature(3.841, 1)) < 1e-9


@pytest.mark.parametrize("df", [1, 2, 3, 5, 10, 20])
@pytest.mark.parametrize("x", [0.01, 0.5, 1.0, 3.841, 10.0, 40.0])
def test_chi2_tail_matches_quadrature(x, df):
    assert survival.chi2_sf(x, df) == pytest.approx(chi2_tail_by_quadrature(x, df), rel=1e-8, abs=1e-13)


@given(st.floats(0.05, 30), st.floats(0, 80))
def test_gammaincc_matches_scipy(a, x):
    assert survival.gammaincc(a, x) == pytest.approx(scipy.special.gammaincc(a, x), rel=1e-8,
                                                     abs=1e-300)


def test_gammaincc_edges():
    assert survival.gammaincc(2.0, 0.0) == 1.0
    with pytest.raises(InputError):
        survival.gammaincc(0.0, 1.0)


# ------------------------------------------------------------------- log-rank

def test_logrank_identical_groups():
    t = [1, 2, 3, 4, 5]
    e = [1, 0, 1, 1, 0]
    res = survival.logrank_test(t + t, e + e, [0] * 5 + [1] * 5)
    assert res.statistic == pytest.approx(0.0, abs=1e-12)
    assert res.p_value == 1.0


def test_logrank_hand_computed_three_versus_three():
    res = survival.logrank_test([1, 2, 3, 100, 200, 300], [1] * 6, [0, 0, 0, 1, 1, 1])
    # E_A = 3/6 + 2/5 + 1/4 = 1.15, V = 1/4 + 6/25 + 3/16
    assert res.statistic == pytest.approx(1.85 ** 2 / (0.25 + 0.24 + 0.1875), rel=1e-12)
    assert res.df == 1
    # the observed split is the most extreme of all 20 relabelings
    assert permutation_p([1, 2, 3, 100, 200, 300], [1] * 6, [0, 0, 0, 1, 1, 1]) == 0.1


def test_logrank_separated_groups_significant():
    t = [1, 2, 3, 4, 5, 100, 200, 300, 400, 500]
    g = [0] * 5 + [1] * 5
    res = survival.logrank_test(t, [1] * 10, g)
    assert res.p_value < 0.01
    assert permutation_p(t, [1] * 10, g) < 0.01


def test_synthetic_hazards_detected_by_permutation_oracle():
    ds = generate_synthetic(SyntheticSpec(n_clusters=2, samples_per_cluster=100, hazards=[1.0, 0.1],
                                          output_dim=5, seed=4))
    s = ds.survival
    res = survival.logrank_test(s.time, s.event, ds.truth)
    assert res.p_value < 0.01
    assert permutation_p(s.time, s.event, ds.truth, n_shuffles=10_000) < 0.01


def test_logrank_multi_group():
    rng = np.random.default_rng(1)
    t = np.concatenate([rng.exponential(1 / h, 40) for h in (1.0, 0.5, 0.2)])
    g = np.repeat([0, 1, 2], 40)
    res = survival.logrank_test(t, np.ones(120, int), g)
    assert res.df == 2
    assert res.observed.sum() == pytest.approx(res.expected.sum())
    assert res.p_value < 1e-3


def test_logrank_singular_covariance_warns():
    # group 0 leaves observation before any death, so its variance row is zero
    t = [0.5, 0.6, 1, 2, 3, 4, 5, 6]
    e = [0, 0, 1, 1, 1, 1, 1, 1]
    g = [0, 0, 1, 1, 1, 2, 2, 2]
    with pytest.warns(RuntimeWarning, match="pseudo-inverse"):
        res = survival.logrank_test(t, e, g)
    assert 0 < res.p_value <= 1


def test_logrank_validation():
    with pytest.raises(InputError):
        survival.logrank_test([1, 2], [1, 1], [0, 0])
    with pytest.raises(InputError):
        survival.logrank_test([1, 2], [1, 1], [0])


@given(times_and_events, st.randoms(use_true_random=False))
def test_logrank_properties(data, rnd):
    time, event = data
    n = len(time)
    if n < 2:
        return
    group = [rnd.randint(0, 2) for _ in range(n)]
    if len(set(group)) < 2:
        return
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = survival.logrank_test(time, event, group)
        relabeled = survival.logrank_test(time, event, [{0: 7, 1: 3, 2: 5}[v] for v in group])
        # extra censored subjects beyond the last time in every group
        levels = sorted(set(group))
        extra_t = list(time) + [max(time) + 1.0] * len(levels)
        extra = survival.logrank_test(extra_t, list(event) + [0] * len(levels), group + levels)
    assert 0 < res.p_value <= 1
    assert relabeled.statistic == pytest.approx(res.statistic, rel=1e-9, abs=1e-12)
    assert np.isfinite(extra.statistic)
