import warnings

import numpy as np
import pytest

from stbcp.data import CalibrationSplit, FeatureMatrix, ScoreTable
from stbcp.size_rules import RankDeficientWarning


@pytest.fixture(autouse=True)
def _quiet_rank_warnings():
    # tiny random pools are often rank deficient; that path has its own test
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficientWarning)
        yield


def random_instance(rng, n, k, d=3, temperature=1.0):
    """n+1 rows of softmax cross-entropy scores; the last row is the test point."""
    logits = rng.normal(size=(n + 1, k)) / temperature
    pi = np.exp(logits - logits.max(axis=1, keepdims=True))
    pi /= pi.sum(axis=1, keepdims=True)
    labels = np.array([rng.choice(k, p=p) for p in pi])
    table = ScoreTable(-np.log(pi), labels)
    feats = FeatureMatrix(rng.normal(size=(n + 1, d)))
    split = CalibrationSplit(np.arange(n), n)
    return table, feats, split, pi


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for num in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[num])
