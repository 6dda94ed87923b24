import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stbcp.data import CalibrationSplit, FeatureMatrix, LabelDistribution, ScoreTable
from stbcp.errors import ConfigError, DegenerateRange, MissingFeatures, ValidationError
from stbcp.size_rules import (
    BinningParams,
    ConstantRule,
    DataFeatureEntropyRule,
    FeatureEntropyRule,
    RankDeficientWarning,
    bin_entropy,
    budgets_uncached,
    entropy,
    knn_label_distribution,
    parse_rule,
    pca_reduce,
    rule_to_config,
)

from conftest import random_instance


@pytest.mark.parametrize(
    "p,expected",
    [((0.5, 0.5), math.log(2)), ((1.0, 0.0), 0.0), ((0.25,) * 4, math.log(4))],
)
def test_entropy(p, expected):
    assert entropy(LabelDistribution(p)) == pytest.approx(expected, abs=1e-12)


def test_bin_entropy_examples():
    params = BinningParams(1, 3, 1.0)
    assert bin_entropy(0.6, params, 0.0, 1.0) == 2
    assert bin_entropy(0.0, params, 0.0, 1.0) == 1
    assert bin_entropy(1.0, params, 0.0, 1.0) == 3
    assert bin_entropy(0.3, BinningParams(2, 2), 0.0, 1.0) == 2
    with pytest.raises(DegenerateRange):
        bin_entropy(0.3, params, 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(0, 3), st.floats(0, 3), st.integers(1, 6), st.integers(0, 5), st.floats(0.2, 4.0)
)
def test_binning_monotone_and_in_range(a, b, t_min, extra, power):
    params = BinningParams(t_min, t_min + extra, power)
    lo, hi = sorted((a, b))
    ta, tb = bin_entropy(lo, params, 0.0, 3.0), bin_entropy(hi, params, 0.0, 3.0)
    assert t_min <= ta <= tb <= t_min + extra


def test_params_validation():
    with pytest.raises(ValidationError):
        BinningParams(0, 2)
    with pytest.raises(ValidationError):
        BinningParams(3, 2)
    with pytest.raises(ValidationError):
        BinningParams(1, 2, power=0.0)
    with pytest.raises(ValidationError):
        BinningParams(1, 2, entropy_bounds=(1.0, 1.0))


def test_pca_line_keeps_all_variance(rng):
    t = rng.normal(size=40)
    x = np.column_stack([t, 2 * t + 1])
    z = pca_reduce(x, 1)
    total = ((x - x.mean(0)) ** 2).sum()
    assert ((z - z.mean(0)) ** 2).sum() == pytest.approx(total, rel=1e-10)


def test_pca_isotropic_keeps_share(rng):
    x = rng.normal(size=(20000, 6))
    z = pca_reduce(x, 2)
    share = z.var(axis=0).sum() / x.var(axis=0).sum()
    # top-2 of 6 nearly equal eigenvalues: slightly above 2/6
    assert 2 / 6 <= share < 2 / 6 + 0.03


def test_pca_idempotent_and_sign_rule(rng):
    x = rng.normal(size=(30, 4)) * [3, 2, 1, 0.5]
    z = pca_reduce(x, 2)
    np.testing.assert_allclose(np.abs(pca_reduce(z, 2)), np.abs(z), atol=1e-9)
    np.testing.assert_allclose(pca_reduce(z, 2), z, atol=1e-9)


def test_pca_order_invariant(rng):
    x = rng.normal(size=(25, 3))
    perm = rng.permutation(25)
    assert pca_reduce(x[perm], 2).tobytes() == pca_reduce(x, 2)[perm].tobytes()


def test_pca_rank_deficient_pads():
    x = np.column_stack([np.arange(5.0), np.zeros(5)])
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        z = pca_reduce(x, 2)
    assert any(issubclass(w.category, RankDeficientWarning) for w in caught)
    np.testing.assert_array_equal(z[:, 1], 0.0)


def test_knn_examples():
    z = np.array([[0.0], [1.0], [5.0], [5.5]])
    d = knn_label_distribution(z, [0, 1, 1, 0], 0, 1, num_labels=2)
    np.testing.assert_array_equal(d.probabilities, [1.0, 0.0])
    same = np.zeros((3, 2))
    d = knn_label_distribution(same, [0, 0, 1], 2, 3)
    np.testing.assert_allclose(d.probabilities, [2 / 3, 1 / 3])


def test_knn_two_clusters(rng):
    a = rng.normal(size=(6, 2)) * 0.1
    b = rng.normal(size=(6, 2)) * 0.1 + 100
    z = np.vstack([a, b])
    labels = np.array([0, 1, 0, 1, 0, 0, 2, 2, 2, 2, 2, 2])
    d = knn_label_distribution(z, labels, 3, 6, num_labels=3)
    np.testing.assert_allclose(d.probabilities, [4 / 6, 2 / 6, 0])


def test_constant_and_feature_rules():
    table = ScoreTable(np.full((3, 10), math.log(10)), [0, 1, 2])
    split = CalibrationSplit([0, 1], 2)
    assert ConstantRule(2).budgets(table, None, split).test == 2
    rule = FeatureEntropyRule(BinningParams(1, 5, 1.0))
    b = rule.budgets(table, None, split)
    assert b.test == 5 and list(b.pseudo) == [5, 5] and b.symmetric is None
    with pytest.raises(ValidationError):
        ConstantRule(11).budgets(table, None, split)


# The 6-point pool below is worked by hand in the comments.  Calibration
# points A..E sit at x = 0, 1, 2, 10, 11 with labels 0, 0, 1, 1, 1; the test
# point T sits at x = 1.2; k = 3, |Y| = 2, budgets in [1, 2], p = 1.  With
# two bins the budget is 2 exactly when the query attains the pool maximum.
#
# Query A in D_A^y (A unlabelled, T labelled y), 3-NN incl. self:
#   A:{A,B,T}  B:{B,T,A}  C:{C,T,B}  D:{D,E,C}  E:{E,D,C}  T:{T,B,C}
#   y=0: entropies A 0, B 0, C H(1/3), D 0, E 0, T H(1/3) -> A below max -> 1
#   y=1: entropies A ln2, B ln2, C H(1/3), D 0, E 0, T H(1/3) -> A at max -> 2
# Pseudo budget of A (pool A..E, A unlabelled):
#   A:{A,B,C} ln2, B:{B,A,C} 0, C:{C,B,A} ln2, D 0, E 0 -> 2
# Test budget (T unlabelled): T:{T,B,C} ln2 is the pool max -> 2
def _six_point_pool():
    x = np.array([0.0, 1.0, 2.0, 10.0, 11.0, 1.2])
    feats = FeatureMatrix(np.column_stack([x, np.zeros(6)]))
    scores = np.array([[0.9, 0.3], [0.2, 1.0], [1.0, 0.2], [1.0, 0.2], [1.0, 0.2], [0.5, 0.6]])
    table = ScoreTable(scores, [0, 0, 1, 1, 1, 0])
    split = CalibrationSplit(np.arange(5), 5)
    rule = DataFeatureEntropyRule(BinningParams(1, 2, 1.0), k=3, reduced_dim=1)
    return table, feats, split, rule


def test_six_point_pool_hand_run():
    table, feats, split, rule = _six_point_pool()
    b = rule.budgets(table, feats, split)
    assert b.test == 2
    assert b.pseudo[0] == 2
    assert list(b.symmetric[0]) == [1, 2]


def test_six_point_pool_symmetric_scores_depend_on_y():
    from stbcp.engine import transformed_calibration_scores
    from stbcp.transforms import IW

    table, feats, split, rule = _six_point_pool()
    h0, _ = transformed_calibration_scores(table, split, rule, IW(), 0, features=feats)
    h1, _ = transformed_calibration_scores(table, split, rule, IW(), 1, features=feats)
    # A's score 0.9 reaches w = 0.9 only under budget 1
    assert h0[0] == 0.9 and h1[0] == 0.0


def test_pure_neighbourhood_gives_t_min():
    x = np.array([0.0, 0.1, 0.2, 50.0, 50.1, 0.05])
    feats = FeatureMatrix(np.column_stack([x, np.zeros(6)]))
    table = ScoreTable(np.ones((6, 4)), [0, 0, 0, 1, 2, 0])
    split = CalibrationSplit(np.arange(5), 5)
    rule = DataFeatureEntropyRule(BinningParams(1, 3, 1.0), k=3, reduced_dim=1)
    assert rule.budgets(table, feats, split).test == 1


def test_missing_features():
    table = ScoreTable(np.ones((4, 3)), [0, 1, 2, 0])
    rule = DataFeatureEntropyRule(BinningParams(1, 2))
    with pytest.raises(MissingFeatures):
        rule.budgets(table, None, CalibrationSplit([0, 1, 2], 3))


@pytest.mark.parametrize("seed", range(12))
def test_cached_budgets_bit_identical(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(3, 15)), int(rng.integers(2, 7))
    table, feats, split, _ = random_instance(rng, n, k)
    if seed % 3 == 0:
        # duplicated rows force distance ties
        f = feats.features.copy()
        f[1] = f[0]
        feats = FeatureMatrix(f)
    bounds = (0.0, 1.0) if seed % 4 == 1 else None
    rule = DataFeatureEntropyRule(
        BinningParams(1, k, float(rng.uniform(0.5, 2)), bounds), k=int(rng.integers(1, 6))
    )
    a = rule.budgets(table, feats, split)
    b = budgets_uncached(rule, table, feats, split)
    assert a.test == b.test
    assert a.pseudo.tobytes() == b.pseudo.tobytes()
    assert a.symmetric.tobytes() == b.symmetric.tobytes()


def test_pool_order_does_not_matter(rng):
    table, feats, split, _ = random_instance(rng, 12, 4)
    rule = DataFeatureEntropyRule(BinningParams(1, 4), k=4)
    a = rule.budgets(table, feats, split)
    perm = rng.permutation(12)
    b = rule.budgets(table, feats, CalibrationSplit(split.calibration_indices[perm], split.test_index))
    assert a.test == b.test
    np.testing.assert_array_equal(a.pseudo[perm], b.pseudo)
    np.testing.assert_array_equal(a.symmetric[perm], b.symmetric)


@pytest.mark.parametrize(
    "cfg",
    [
        {"rule": "constant", "t": 2},
        {"rule": "feature_entropy", "t_min": 1, "t_max": 3, "p": 2.0},
        {"rule": "data_feature_entropy", "t_min": 1, "t_max": 4, "p": 1.0, "k": 7, "reduced_dim": 2},
        {"rule": "feature_entropy", "t_min": 1, "t_max": 3, "p": 1.0, "en_min": 0.0, "en_max": 1.5},
    ],
)
def test_rule_config_roundtrip(cfg):
    assert rule_to_config(parse_rule(cfg)) == cfg


def test_parse_rule_errors():
    with pytest.raises(ConfigError):
        parse_rule({"rule": "gini"})
    with pytest.raises(ConfigError):
        parse_rule({"rule": "feature_entropy", "t_min": 1})
