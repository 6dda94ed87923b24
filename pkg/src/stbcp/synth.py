"""Synthetic score tables with a known conditional label law.

Every generator returns the score table, a feature matrix and a
:class:`LabelOracle` that knows P(Y = y | X) exactly, which is what the
oracle transform and the objective checks need.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .data import FeatureMatrix, ScoreTable
from .errors import ValidationError
from .threshold import w_classification_rows
from .transforms import ObjectiveDraws

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class ExchangeableIID:
    """iid candidate scores from ``law``; labels uniform and independent of scores."""

    law: str = "uniform"  # uniform | exponential
    num_labels: int = 5
    feature_dim: int = 3

    def __post_init__(self) -> None:
        if self.law not in ("uniform", "exponential"):
            raise ValidationError(f"unknown score law {self.law!r}")
        _check_labels(self.num_labels)


@dataclass(frozen=True)
class DirichletSoftmax:
    """pi ~ Dirichlet(concentration), sharpened to pi**(1/temperature); Y ~ pi.

    Features are a fixed random embedding of log pi plus Gaussian noise, so
    nearby points have similar label laws.
    """

    concentration: float = 1.0
    num_labels: int = 10
    temperature: float = 1.0
    feature_dim: int = 8
    noise: float = 0.1

    def __post_init__(self) -> None:
        _check_labels(self.num_labels)
        if not (self.concentration > 0 and self.temperature > 0 and self.noise >= 0):
            raise ValidationError("concentration and temperature must be positive")


@dataclass(frozen=True)
class ClusteredFeatures:
    """Equal-weight Gaussian mixture; the label is the component.

    P(Y | X) is the exact mixture posterior, so scores are Bayes-optimal.
    """

    num_clusters: int = 4
    spread: float = 1.0
    feature_dim: int = 5
    separation: float = 3.0

    def __post_init__(self) -> None:
        _check_labels(self.num_clusters)
        if not (self.spread > 0 and self.separation > 0):
            raise ValidationError("spread and separation must be positive")


GeneratorKind = Union[ExchangeableIID, DirichletSoftmax, ClusteredFeatures]


@dataclass(frozen=True)
class GeneratorSpec:
    kind: GeneratorKind
    size: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValidationError("size must be positive")


def _check_labels(k: int) -> None:
    if k < 2:
        raise ValidationError(f"need at least 2 labels, got {k}")


@dataclass(frozen=True, eq=False)
class LabelOracle:
    """Exact P(Y = y | X_j) for every generated row j."""

    probabilities: np.ndarray  # (N, K)

    def tail_mass(self, scores: np.ndarray, rows, w) -> np.ndarray:
        """p = sum of P(Y=y|X) over labels whose score is >= w.

        >>> LabelOracle(np.array([[0.7, 0.2, 0.1]])).tail_mass(
        ...     -np.log(np.array([[0.7, 0.2, 0.1]])), [0], 2.0)
        array([0.1])
        """
        s = np.asarray(scores, dtype=float)[rows]
        w = np.asarray(w, dtype=float)
        return ((s >= w[..., None]) * self.probabilities[rows]).sum(axis=-1)


class SyntheticData(NamedTuple):
    table: ScoreTable
    features: FeatureMatrix
    oracle: LabelOracle


def cross_entropy_scores(probs: np.ndarray) -> np.ndarray:
    return -np.log(np.maximum(probs, PROB_FLOOR))


def _sample_labels(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def dirichlet_probs(kind: DirichletSoftmax, size: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.dirichlet(np.full(kind.num_labels, kind.concentration), size=size)
    logp = np.log(np.maximum(base, PROB_FLOOR)) / kind.temperature
    logp -= logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    return p / p.sum(axis=1, keepdims=True)


def generate(spec: GeneratorSpec) -> SyntheticData:
    """Deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    kind, n = spec.kind, spec.size
    if isinstance(kind, ExchangeableIID):
        k = kind.num_labels
        if kind.law == "uniform":
            scores = rng.random((n, k))
        else:
            scores = rng.exponential(size=(n, k))
        labels = rng.integers(0, k, size=n)
        probs = np.full((n, k), 1.0 / k)
        feats = rng.normal(size=(n, kind.feature_dim))
    elif isinstance(kind, DirichletSoftmax):
        probs = dirichlet_probs(kind, n, rng)
        labels = _sample_labels(probs, rng)
        scores = cross_entropy_scores(probs)
        embed = rng.normal(size=(kind.num_labels, kind.feature_dim)) / np.sqrt(kind.num_labels)
        logp = np.log(np.maximum(probs, PROB_FLOOR))
        logp -= logp.mean(axis=1, keepdims=True)
        feats = logp @ embed + kind.noise * rng.normal(size=(n, kind.feature_dim))
    elif isinstance(kind, ClusteredFeatures):
        c, d = kind.num_clusters, kind.feature_dim
        centers = kind.separation * kind.spread * rng.normal(size=(c, d))
        labels = rng.integers(0, c, size=n)
        feats = centers[labels] + kind.spread * rng.normal(size=(n, d))
        d2 = ((feats[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        logits = -d2 / (2 * kind.spread**2)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        scores = cross_entropy_scores(probs)
    else:
        raise ValidationError(f"unknown generator {kind!r}")
    return SyntheticData(ScoreTable(scores, labels), FeatureMatrix(feats), LabelOracle(probs))


def objective_sampler(kind: DirichletSoftmax, t: int):
    """Draw independent (calibration, test) quantities for the objective J.

    Under a constant budget ``t`` the threshold is the (t+1)-th smallest
    cross-entropy score and p its exact tail mass.
    """
    if not 1 <= t < kind.num_labels:
        raise ValidationError(f"budget must lie in [1, {kind.num_labels - 1}]")

    def draw(rng: np.random.Generator, size: int):
        probs = dirichlet_probs(kind, size, rng)
        scores = cross_entropy_scores(probs)
        w = w_classification_rows(scores, np.full(size, t))
        p = ((scores >= w[:, None]) * probs).sum(axis=1)
        s = scores[np.arange(size), _sample_labels(probs, rng)]
        probs_t = dirichlet_probs(kind, size, rng)
        scores_t = cross_entropy_scores(probs_t)
        w_t = w_classification_rows(scores_t, np.full(size, t))
        p_t = ((scores_t >= w_t[:, None]) * probs_t).sum(axis=1)
        return ObjectiveDraws(s, w, p, w_t, p_t)

    return draw


def bounded_threshold_table(
    size: int, num_labels: int, w_min: float, w_max: float, rng: np.random.Generator
) -> ScoreTable:
    """Scores uniform on [w_min, w_max], so every threshold lands in that range."""
    if not 0 < w_min < w_max:
        raise ValidationError("need 0 < w_min < w_max")
    scores = rng.uniform(w_min, w_max, size=(size, num_labels))
    labels = rng.integers(0, num_labels, size=size)
    return ScoreTable(scores, labels)


def kind_from_config(cfg: dict) -> GeneratorKind:
    """``{"kind": "dirichlet", "num_labels": 10, ...}`` -> generator kind."""
    cfg = dict(cfg)
    name = cfg.pop("kind", "dirichlet")
    table = {
        "iid": ExchangeableIID,
        "dirichlet": DirichletSoftmax,
        "clustered": ClusteredFeatures,
    }
    if name not in table:
        raise ValidationError(f"unknown generator kind {name!r}; expected one of {sorted(table)}")
    try:
        return table[name](**cfg)
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {name!r}: {exc}") from exc
