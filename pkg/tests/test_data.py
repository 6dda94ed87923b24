import numpy as np
import pytest

from stbcp.data import (
    CalibrationSplit,
    FeatureMatrix,
    LabelDistribution,
    ScoreTable,
    load_feature_matrix,
    load_score_table,
    save_feature_matrix,
    save_score_table,
    split_sample,
    trial_rng,
)
from stbcp.errors import InsufficientData, ParseError, ValidationError


def test_score_table_basic():
    t = ScoreTable([[0.1, 2.0], [1.5, 0.2]], [0, 1])
    assert t.num_labels == 2 and t.num_samples == 2
    np.testing.assert_array_equal(t.true_scores(), [0.1, 0.2])
    with pytest.raises(ValueError):
        t.scores[0, 0] = 5.0


@pytest.mark.parametrize(
    "scores,labels",
    [
        ([[0.1, -0.2]], [0]),
        ([[0.1, np.nan]], [0]),
        ([[0.1, 0.2]], [2]),
        ([[0.1, 0.2]], [0, 1]),
        ([0.1, 0.2], [0]),
    ],
)
def test_score_table_rejects(scores, labels):
    with pytest.raises(ValidationError):
        ScoreTable(scores, labels)


def test_label_distribution_sum():
    LabelDistribution([0.25, 0.75])
    with pytest.raises(ValidationError):
        LabelDistribution([0.5, 0.6])


def test_split_validation():
    with pytest.raises(ValidationError):
        CalibrationSplit([0], 1)
    with pytest.raises(ValidationError):
        CalibrationSplit([0, 1, 1], 2)
    with pytest.raises(ValidationError):
        CalibrationSplit([0, 1], 1)
    assert CalibrationSplit([3, 1], 0).n == 2


def test_split_sample_draws_distinct_rows():
    s = split_sample(10, 9, np.random.default_rng(0))
    assert sorted(list(s.calibration_indices) + [s.test_index]) == list(range(10))
    with pytest.raises(InsufficientData):
        split_sample(5, 5, np.random.default_rng(0))


def test_trial_rng_replayable():
    a = trial_rng(7, 3).random(4)
    b = trial_rng(7, 3).random(4)
    c = trial_rng(7, 4).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_csv_roundtrip_is_exact(tmp_path, rng):
    scores = rng.exponential(size=(20, 4))
    t = ScoreTable(scores, rng.integers(0, 4, 20))
    save_score_table(t, tmp_path / "s.csv")
    back = load_score_table(tmp_path / "s.csv")
    assert back.scores.tobytes() == t.scores.tobytes()
    np.testing.assert_array_equal(back.true_labels, t.true_labels)

    f = FeatureMatrix(rng.normal(size=(20, 3)))
    save_feature_matrix(f, tmp_path / "f.csv")
    assert load_feature_matrix(tmp_path / "f.csv", 20).features.tobytes() == f.features.tobytes()


def test_load_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("label,s_0,s_1\n0,0.1\n")
    with pytest.raises(ParseError):
        load_score_table(p)
    p.write_text("label,s_0,s_1\n0,0.1,nan\n")
    with pytest.raises(ValidationError):
        load_score_table(p)
    p.write_text("label,s_0,s_1\n0,0.1,abc\n")
    with pytest.raises(ParseError):
        load_score_table(p)
    p.write_text("label,s_0,s_1\n3,0.1,0.2\n")
    with pytest.raises(ValidationError):
        load_score_table(p)
    p.write_text("lbl,s_0\n0,0.1\n")
    with pytest.raises(ParseError):
        load_score_table(p)
    p.write_text("f_0,f_1\n0.1,0.2\n")
    with pytest.raises(ValidationError):
        load_feature_matrix(p, num_samples=3)
