import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stbcp.errors import InvalidBudget
from stbcp.threshold import lq_ball_volume, w_classification, w_classification_rows, w_regression


def test_order_statistic_example():
    assert w_classification([0.1, 0.5, 0.9, 1.2], 2) == 0.9
    assert w_classification([0.3, 0.3, 0.3], 1) == 0.3


def test_full_budget_is_infinite():
    assert math.isinf(w_classification([0.1, 0.2], 2))


@pytest.mark.parametrize("t", [0, 5])
def test_budget_range(t):
    with pytest.raises(InvalidBudget):
        w_classification([0.1, 0.2, 0.3, 0.4], t)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 50, allow_nan=False), min_size=1, max_size=12),
    st.data(),
)
def test_strict_sublevel_set_fits_budget(scores, data):
    s = np.array(scores)
    t = data.draw(st.integers(1, s.size))
    w = w_classification(s, t)
    assert np.count_nonzero(s < w) <= t
    if math.isfinite(w):
        # any larger cutoff admits w's own label as well
        assert np.count_nonzero(s < np.nextafter(w, math.inf)) > t


def test_rows_match_scalar(rng):
    s = rng.exponential(size=(50, 6))
    t = rng.integers(1, 7, size=50)
    rows = w_classification_rows(s, t)
    for i in range(50):
        assert rows[i] == w_classification(s[i], int(t[i]))


def test_rows_broadcast_budgets(rng):
    s = rng.exponential(size=(4, 5))
    t = rng.integers(1, 6, size=(4, 3))
    out = w_classification_rows(s[:, None, :], t)
    assert out.shape == (4, 3)
    assert out[2, 1] == w_classification(s[2], int(t[2, 1]))


def test_regression_analytic_cases():
    assert w_regression(3.0, 1, 2.0) == pytest.approx(1.5, abs=1e-12)
    assert w_regression(math.pi, 2, 2.0) == pytest.approx(1.0, abs=1e-12)
    assert w_regression(2.0, 2, 1.0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("d,q", [(1, 0.5), (2, 2.0), (3, 1.0), (4, 3.0)])
def test_regression_inverts_volume(d, q):
    for t in (0.01, 1.0, 42.0):
        assert lq_ball_volume(w_regression(t, d, q), d, q) == pytest.approx(t, rel=1e-12)


def test_regression_rejects_nonpositive_budget():
    with pytest.raises(InvalidBudget):
        w_regression(0.0, 2, 2.0)
