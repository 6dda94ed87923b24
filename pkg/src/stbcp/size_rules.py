"""Size-constraint rules T(D, X): constant, softmax-entropy, kNN-entropy.

The data-dependent rule works in two stages: project the pooled features
to a low-dimensional PCA space and take the label entropy of each point's
k nearest neighbours, then map the query's entropy to a budget through
power-law bins spanning the pooled entropy range.

Conventions:

* entropy uses the natural logarithm;
* every pool member, the query included, takes part in each neighbour search;
  the query carries no label, so its slot contributes nothing to the label
  counts (a neighbourhood with no labelled member has entropy 0);
* distance ties are broken by the smaller global sample index;
* PCA is computed on the rows sorted lexicographically, which makes the
  result independent of pool order, and each component's largest-magnitude
  loading is made positive.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import CalibrationSplit, FeatureMatrix, LabelDistribution, ScoreTable
from .errors import ConfigError, DegenerateRange, MissingFeatures, RankDeficient, ValidationError

UNLABELED = -1


# -- primitives --------------------------------------------------------------

def _entropy_from_counts(counts: np.ndarray) -> np.ndarray:
    """Shannon entropy (nats) of each row of a count array; empty rows give 0."""
    counts = np.ascontiguousarray(counts, dtype=float)
    tot = counts.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = counts / tot
        terms = np.where(counts > 0, p * np.log(p), 0.0)
    return np.ascontiguousarray(-terms).sum(axis=-1) + 0.0


def entropy(dist: LabelDistribution) -> float:
    """-sum p ln p with 0 ln 0 = 0."""
    p = np.asarray(dist.probabilities, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return float(-terms.sum()) + 0.0


def softmax_from_scores(scores: np.ndarray) -> np.ndarray:
    """Recover class probabilities from cross-entropy scores S = -ln pi."""
    z = -np.asarray(scores, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class BinningParams:
    """Budget range [t_min, t_max], bin power p and the entropy range.

    ``entropy_bounds=None`` means the range is data-driven (min/max over the
    pooled entropies); otherwise it is a fixed ``(en_min, en_max)`` pair.
    """

    t_min: int
    t_max: int
    power: float = 1.0
    entropy_bounds: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.t_min <= self.t_max:
            raise ValidationError(f"need 1 <= t_min <= t_max, got {self.t_min}, {self.t_max}")
        if not self.power > 0:
            raise ValidationError(f"bin power must be positive, got {self.power}")
        if self.entropy_bounds is not None and not self.entropy_bounds[0] < self.entropy_bounds[1]:
            raise ValidationError("fixed entropy bounds need en_min < en_max")


def bin_thresholds(params: BinningParams, en_min: float, en_max: float) -> np.ndarray:
    n_bins = params.t_max - params.t_min + 1
    if n_bins == 1:
        return np.array([en_min])
    frac = (np.arange(n_bins) / (n_bins - 1)) ** params.power
    bins = en_min + (en_max - en_min) * frac
    # pin the top edge so en == en_max always reaches t_max
    bins[-1] = en_max
    return bins


def bin_entropy(en, params: BinningParams, en_min: float, en_max: float):
    """Budget for entropy ``en``: t_min - 1 + #{l : en >= bins(l)}, clamped."""
    if not en_max > en_min:
        raise DegenerateRange(f"entropy range [{en_min}, {en_max}] is empty")
    bins = bin_thresholds(params, en_min, en_max)
    en = np.asarray(en, dtype=float)
    t = params.t_min - 1 + (en[..., None] >= bins).sum(axis=-1)
    t = np.clip(t, params.t_min, params.t_max)
    return int(t) if t.ndim == 0 else t.astype(np.int64)


def _bin_data_driven(en_query, en_all: np.ndarray, params: BinningParams) -> np.ndarray:
    """Binning with the entropy range taken from ``en_all`` along its last axis.

    A flat range puts every bin edge at en_min, so the query lands in t_max.
    """
    lo = en_all.min(axis=-1)
    hi = en_all.max(axis=-1)
    n_bins = params.t_max - params.t_min + 1
    if n_bins == 1:
        bins = lo[..., None]
    else:
        frac = (np.arange(n_bins) / (n_bins - 1)) ** params.power
        bins = lo[..., None] + (hi - lo)[..., None] * frac
        bins[..., -1] = hi
    en_query = np.asarray(en_query, dtype=float)
    t = params.t_min - 1 + (en_query[..., None] >= bins).sum(axis=-1)
    return np.clip(t, params.t_min, params.t_max).astype(np.int64)


class RankDeficientWarning(RankDeficient, UserWarning):
    """Emitted when PCA has to pad missing components with zeros."""


def pca_reduce(features: FeatureMatrix | np.ndarray, reduced_dim: int) -> np.ndarray:
    """Project mean-centred rows onto the top principal components.

    Returns an array of shape (num_samples, reduced_dim).  Missing components
    (rank-deficient data) are zero-padded with a RankDeficient warning.
    """
    x = features.features if isinstance(features, FeatureMatrix) else np.asarray(features, float)
    n, d = x.shape
    if reduced_dim < 1 or reduced_dim > min(n, d):
        raise ValueError(f"reduced_dim={reduced_dim} not in [1, min({n}, {d})]")
    order = np.lexsort(x.T[::-1])
    xs = x[order]
    mean = xs.mean(axis=0)
    centred = xs - mean
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    tol = max(n, d) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    rank = int((sv > tol).sum())
    comps = vt[:reduced_dim].copy()
    if rank < reduced_dim:
        warnings.warn(
            f"only {rank} positive-variance components, padding to {reduced_dim}",
            RankDeficientWarning,
            stacklevel=2,
        )
        comps[rank:] = 0.0
    lead = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(comps.shape[0]), lead])
    signs[signs == 0] = 1.0
    comps *= signs[:, None]
    zs = centred @ comps.T
    out = np.empty_like(zs)
    out[order] = zs
    return out


def _neighbor_table(z: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Positions of the k nearest pool members of every pool member (self included)."""
    diff = z[:, None, :] - z[None, :, :]
    dist = np.ascontiguousarray(diff * diff).sum(axis=-1)
    k = min(k, z.shape[0])
    out = np.empty((z.shape[0], k), dtype=np.int64)
    for j in range(z.shape[0]):
        out[j] = np.lexsort((ids, dist[j]))[:k]
    return out


def _counts(neighbors: np.ndarray, labels: np.ndarray, num_labels: int) -> np.ndarray:
    lab = labels[neighbors]
    counts = np.zeros((neighbors.shape[0], num_labels))
    for col in range(lab.shape[1]):
        ok = lab[:, col] >= 0
        np.add.at(counts, (np.flatnonzero(ok), lab[ok, col]), 1.0)
    return counts


def knn_label_distribution(
    reduced: np.ndarray,
    labels,
    query_index: int,
    k: int,
    num_labels: int | None = None,
    ids=None,
) -> LabelDistribution:
    """Empirical label law among the k nearest points of ``query_index``.

    Points with label ``UNLABELED`` occupy neighbour slots but add no mass.
    """
    reduced = np.asarray(reduced, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    if num_labels is None:
        num_labels = int(labels.max()) + 1
    ids = np.arange(reduced.shape[0]) if ids is None else np.asarray(ids)
    diff = reduced - reduced[query_index]
    dist = np.ascontiguousarray(diff * diff).sum(axis=-1)
    nb = np.lexsort((ids, dist))[: min(k, reduced.shape[0])]
    lab = labels[nb]
    lab = lab[lab >= 0]
    if lab.size == 0:
        raise ValidationError("no labelled point among the nearest neighbours")
    counts = np.bincount(lab, minlength=num_labels).astype(float)
    return LabelDistribution(counts / counts.sum())


# -- rules -------------------------------------------------------------------

class TrialBudgets(NamedTuple):
    """All budgets one trial needs.

    ``test``: T(D_{n+1}, X_{n+1}); ``pseudo[i]``: T(D_i, X_i);
    ``symmetric[i, y]``: T(D_i^y, X_i), or None when the rule ignores D
    (then it equals ``pseudo[i]`` for every y).
    """

    test: int
    pseudo: np.ndarray
    symmetric: np.ndarray | None


class SizeRule:
    kind: str = "rule"
    depends_on_data: bool = False
    needs_features: bool = False

    def validate(self, num_labels: int) -> None:
        pass

    def evaluate(
        self,
        table: ScoreTable,
        features: FeatureMatrix | None,
        pool_indices,
        pool_labels,
        query_index: int,
    ) -> int:
        """T(D, X) for D = pool (with the given labels) and X = row ``query_index``."""
        raise NotImplementedError

    def budgets(
        self, table: ScoreTable, features: FeatureMatrix | None, split: CalibrationSplit
    ) -> TrialBudgets:
        raise NotImplementedError

    def _check_features(self, features) -> None:
        if self.needs_features and features is None:
            raise MissingFeatures(f"rule {self.kind!r} needs a feature matrix")


@dataclass(frozen=True)
class ConstantRule(SizeRule):
    t: int
    kind = "constant"

    def validate(self, num_labels: int) -> None:
        if not 1 <= self.t <= num_labels:
            raise ValidationError(f"constant budget {self.t} outside [1, {num_labels}]")

    def evaluate(self, table, features, pool_indices, pool_labels, query_index) -> int:
        self.validate(table.num_labels)
        return int(self.t)

    def budgets(self, table, features, split) -> TrialBudgets:
        self.validate(table.num_labels)
        return TrialBudgets(int(self.t), np.full(split.n, int(self.t), dtype=np.int64), None)


@dataclass(frozen=True)
class FeatureEntropyRule(SizeRule):
    """Budget from the entropy of the model's own softmax at X."""

    params: BinningParams
    kind = "feature_entropy"

    def validate(self, num_labels: int) -> None:
        if self.params.t_max > num_labels:
            raise ValidationError(f"t_max={self.params.t_max} exceeds |Y|={num_labels}")

    def _budget_rows(self, scores: np.ndarray) -> np.ndarray:
        k = scores.shape[-1]
        en = _entropy_from_counts(softmax_from_scores(scores))
        lo, hi = self.params.entropy_bounds or (0.0, float(np.log(k)))
        # a uniform softmax should reach the top bin despite rounding
        en = np.where(np.isclose(en, hi, rtol=1e-12, atol=0.0), hi, en)
        return np.asarray(bin_entropy(en, self.params, lo, hi), dtype=np.int64)

    def evaluate(self, table, features, pool_indices, pool_labels, query_index) -> int:
        self.validate(table.num_labels)
        return int(self._budget_rows(table.scores[[query_index]])[0])

    def budgets(self, table, features, split) -> TrialBudgets:
        self.validate(table.num_labels)
        rows = np.append(split.calibration_indices, split.test_index)
        t = self._budget_rows(table.scores[rows])
        return TrialBudgets(int(t[-1]), t[:-1].copy(), None)


@dataclass(frozen=True)
class DataFeatureEntropyRule(SizeRule):
    """Budget from kNN label entropy in a PCA space of the pooled features."""

    params: BinningParams
    k: int = 10
    reduced_dim: int = 2
    kind = "data_feature_entropy"
    depends_on_data = True
    needs_features = True

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValidationError(f"k must be >= 1, got {self.k}")
        if self.reduced_dim < 1:
            raise ValidationError("reduced_dim must be >= 1")

    def validate(self, num_labels: int) -> None:
        if self.params.t_max > num_labels:
            raise ValidationError(f"t_max={self.params.t_max} exceeds |Y|={num_labels}")

    def _bin(self, en_query, en_all):
        if self.params.entropy_bounds is not None:
            lo, hi = self.params.entropy_bounds
            return np.asarray(bin_entropy(en_query, self.params, lo, hi), dtype=np.int64)
        return _bin_data_driven(en_query, en_all, self.params)

    def evaluate(self, table, features, pool_indices, pool_labels, query_index) -> int:
        """Single evaluation: PCA over pool + query, kNN entropies, binning."""
        self._check_features(features)
        self.validate(table.num_labels)
        ids = np.append(np.asarray(pool_indices, dtype=np.int64), query_index)
        labels = np.append(np.asarray(pool_labels, dtype=np.int64), UNLABELED)
        z = pca_reduce(features.features[ids], self.reduced_dim)
        nb = _neighbor_table(z, ids, self.k)
        en = _entropy_from_counts(_counts(nb, labels, table.num_labels))
        return int(self._bin(en[-1], en))

    def budgets(self, table, features, split) -> TrialBudgets:
        """Cached evaluation of every budget a trial needs.

        Bit-identical to calling :meth:`evaluate` on each (pool, query) pair:
        the neighbour tables are shared and only label counts change.
        """
        self._check_features(features)
        self.validate(table.num_labels)
        cal = np.asarray(split.calibration_indices)
        n, kk = cal.size, table.num_labels
        y_cal = table.true_labels[cal]

        # pooled pass: calibration points then the test point
        ids1 = np.append(cal, split.test_index)
        nb1 = _neighbor_table(pca_reduce(features.features[ids1], self.reduced_dim), ids1, self.k)
        base = np.append(y_cal, UNLABELED)
        c0 = _counts(nb1, base, kk)
        en_test = _entropy_from_counts(c0)
        t_test = int(self._bin(en_test[n], en_test))

        has = np.zeros((n + 1, n + 1))  # has[i, j]: i is a neighbour of j
        for j in range(n + 1):
            has[nb1[j], j] = 1.0
        sym = np.empty((n, kk), dtype=np.int64)
        drop = np.zeros((n, n + 1, kk))
        drop[np.arange(n), :, y_cal] = 1.0
        drop *= has[:n, :, None]
        add_test = has[n]
        rows = np.arange(n)
        for y in range(kk):
            counts = c0[None, :, :] - drop
            counts[:, :, y] += add_test[None, :]
            en = _entropy_from_counts(counts)
            sym[:, y] = self._bin(en[rows, rows], en)

        # calibration-only pass for the pseudo-test budgets
        nb2 = _neighbor_table(pca_reduce(features.features[cal], self.reduced_dim), cal, self.k)
        c2 = _counts(nb2, y_cal, kk)
        has2 = np.zeros((n, n))
        for j in range(n):
            has2[nb2[j], j] = 1.0
        drop2 = np.zeros((n, n, kk))
        drop2[rows, :, y_cal] = 1.0
        drop2 *= has2[:, :, None]
        en2 = _entropy_from_counts(c2[None, :, :] - drop2)
        pseudo = np.asarray(self._bin(en2[rows, rows], en2), dtype=np.int64)
        return TrialBudgets(t_test, pseudo, sym)


def budgets_uncached(
    rule: SizeRule, table: ScoreTable, features: FeatureMatrix | None, split: CalibrationSplit
) -> TrialBudgets:
    """Reference path: one :meth:`SizeRule.evaluate` call per budget."""
    cal = np.asarray(split.calibration_indices)
    y_cal = table.true_labels[cal]
    n, kk = cal.size, table.num_labels
    t_test = rule.evaluate(table, features, cal, y_cal, split.test_index)
    pseudo = np.empty(n, dtype=np.int64)
    sym = np.empty((n, kk), dtype=np.int64)
    for i in range(n):
        rest = np.delete(np.arange(n), i)
        pseudo[i] = rule.evaluate(table, features, cal[rest], y_cal[rest], int(cal[i]))
        pool = np.append(cal[rest], split.test_index)
        for y in range(kk):
            labels = np.append(y_cal[rest], y)
            sym[i, y] = rule.evaluate(table, features, pool, labels, int(cal[i]))
    return TrialBudgets(int(t_test), pseudo, sym)


def parse_rule(cfg: dict) -> SizeRule:
    """Build a rule from ``{"rule": "constant", "t": 2}``-style config."""
    cfg = dict(cfg)
    kind = cfg.pop("rule", None)
    try:
        if kind == "constant":
            return ConstantRule(int(cfg["t"]))
        bounds = None
        if "en_min" in cfg or "en_max" in cfg:
            bounds = (float(cfg["en_min"]), float(cfg["en_max"]))
        params = BinningParams(
            t_min=int(cfg["t_min"]),
            t_max=int(cfg["t_max"]),
            power=float(cfg.get("p", 1.0)),
            entropy_bounds=bounds,
        )
        if kind == "feature_entropy":
            return FeatureEntropyRule(params)
        if kind == "data_feature_entropy":
            return DataFeatureEntropyRule(
                params, k=int(cfg.get("k", 10)), reduced_dim=int(cfg.get("reduced_dim", 2))
            )
    except KeyError as exc:
        raise ConfigError(f"rule {kind!r} is missing key {exc}") from exc
    raise ConfigError(f"unknown rule {kind!r}")


def rule_to_config(rule: SizeRule) -> dict:
    if isinstance(rule, ConstantRule):
        return {"rule": "constant", "t": rule.t}
    p = rule.params  # type: ignore[attr-defined]
    cfg = {"rule": rule.kind, "t_min": p.t_min, "t_max": p.t_max, "p": p.power}
    if p.entropy_bounds is not None:
        cfg["en_min"], cfg["en_max"] = p.entropy_bounds
    if isinstance(rule, DataFeatureEntropyRule):
        cfg["k"] = rule.k
        cfg["reduced_dim"] = rule.reduced_dim
    return cfg
