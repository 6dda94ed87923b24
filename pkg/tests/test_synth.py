import math

import numpy as np
import pytest

from stbcp.errors import ValidationError
from stbcp.size_rules import entropy
from stbcp.data import LabelDistribution
from stbcp.synth import (
    ClusteredFeatures,
    DirichletSoftmax,
    ExchangeableIID,
    GeneratorSpec,
    LabelOracle,
    bounded_threshold_table,
    generate,
    kind_from_config,
)


@pytest.mark.parametrize(
    "kind", [ExchangeableIID(), DirichletSoftmax(num_labels=4), ClusteredFeatures(num_clusters=3)]
)
def test_generate_is_deterministic(kind):
    a = generate(GeneratorSpec(kind, 200, 5))
    b = generate(GeneratorSpec(kind, 200, 5))
    assert a.table.scores.tobytes() == b.table.scores.tobytes()
    assert a.features.features.tobytes() == b.features.features.tobytes()
    np.testing.assert_allclose(a.oracle.probabilities.sum(axis=1), 1.0)


def test_cross_entropy_scores():
    d = generate(GeneratorSpec(DirichletSoftmax(num_labels=5), 100, 1))
    np.testing.assert_allclose(d.table.scores, -np.log(np.maximum(d.oracle.probabilities, 1e-12)))


def test_large_concentration_is_near_uniform():
    d = generate(GeneratorSpec(DirichletSoftmax(concentration=1e5, num_labels=6), 50, 2))
    ent = [entropy(LabelDistribution(p)) for p in d.oracle.probabilities]
    assert min(ent) == pytest.approx(math.log(6), abs=1e-3)


def test_labels_follow_probabilities():
    # chi-square goodness of fit: expected counts from the emitted laws
    d = generate(GeneratorSpec(DirichletSoftmax(num_labels=4, concentration=2.0), 200_000, 3))
    obs = np.bincount(d.table.true_labels, minlength=4)
    exp = d.oracle.probabilities.sum(axis=0)
    chi2 = float(((obs - exp) ** 2 / exp).sum())
    assert chi2 < 16.27  # 0.999 quantile, 3 degrees of freedom


def test_oracle_tail_mass_example():
    probs = np.array([[0.7, 0.2, 0.1]])
    scores = -np.log(probs)
    w = -np.log(0.1)  # only the 0.1 label reaches w
    assert LabelOracle(probs).tail_mass(scores, [0], w)[0] == pytest.approx(0.1)


def test_iid_marginals_match():
    d = generate(GeneratorSpec(ExchangeableIID(num_labels=3), 60_000, 4))
    means = d.table.true_scores().reshape(3, -1).mean(axis=1)
    assert np.ptp(means) < 0.01


def test_bounded_table_range(rng):
    t = bounded_threshold_table(50, 4, 0.5, 2.0, rng)
    assert t.scores.min() >= 0.5 and t.scores.max() <= 2.0


def test_bad_specs():
    with pytest.raises(ValidationError):
        DirichletSoftmax(num_labels=1)
    with pytest.raises(ValidationError):
        ExchangeableIID(law="cauchy")
    with pytest.raises(ValidationError):
        kind_from_config({"kind": "gan"})
    with pytest.raises(ValidationError):
        kind_from_config({"kind": "dirichlet", "colour": 1})
