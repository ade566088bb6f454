import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from dualcast.stats import betainc, ols_slope_test, t_two_sided_p


@settings(max_examples=300, deadline=None)
@given(st.floats(0.05, 200), st.floats(0.05, 200), st.floats(0.0, 1.0))
def test_betainc_matches_scipy(a, b, x):
    assert abs(betainc(a, b, x) - special.betainc(a, b, x)) < 1e-10


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), st.integers(1, 500))
def test_t_pvalue_matches_scipy(t, dof):
    assert abs(t_two_sided_p(t, dof) - 2 * stats.t.sf(abs(t), dof)) < 1e-10


def test_t_pvalue_edges():
    assert t_two_sided_p(0.0, 5) == 1.0
    assert t_two_sided_p(math.inf, 5) == 0.0
    with pytest.raises(ValueError):
        t_two_sided_p(1.0, 0)


def test_betainc_domain():
    with pytest.raises(ValueError):
        betainc(0.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        betainc(1.0, 1.0, 1.5)


def test_ols_edge_cases():
    fit = ols_slope_test([1.0, 3.0])
    assert fit.slope == 2.0 and fit.p_value == 0.0
    fit = ols_slope_test([1.0, 1.0, 1.0])
    assert fit.slope == 0.0 and fit.p_value == 1.0
    with pytest.raises(ValueError):
        ols_slope_test([1.0])


def test_ols_matches_linregress():
    rng = np.random.default_rng(2)
    for _ in range(100):
        n = int(rng.integers(3, 60))
        y = rng.normal(size=n) + 0.05 * np.arange(n)
        ref = stats.linregress(np.arange(n), y)
        fit = ols_slope_test(y)
        assert abs(fit.slope - ref.slope) < 1e-12
        assert abs(fit.intercept - ref.intercept) < 1e-10
        assert abs(fit.p_value - ref.pvalue) < 1e-10
