"""Score tables, feature matrices, calibration splits and seeded randomness.

Score files are CSV with header ``label,s_0,...,s_{K-1}``: one row per
sample, ``label`` the true label index and ``s_y`` the non-conformity score
of candidate label ``y``.  Feature files are CSV with header
``f_0,...,f_{d-1}``, row-aligned with the score file.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InsufficientData, ParseError, ValidationError


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Per-sample, per-label non-conformity scores plus true labels."""

    scores: np.ndarray
    true_labels: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        labels = np.asarray(self.true_labels)
        if scores.ndim != 2 or scores.shape[1] < 1:
            raise ValidationError(f"scores must be a non-empty 2-D matrix, got shape {scores.shape}")
        if labels.ndim != 1 or labels.shape[0] != scores.shape[0]:
            raise ValidationError("true_labels must be a vector with one entry per score row")
        if not np.all(np.isfinite(scores)):
            raise ValidationError("scores must be finite")
        if np.any(scores < 0):
            bad = np.argwhere(scores < 0)[0]
            raise ValidationError(f"negative score at row {bad[0]}, label {bad[1]}")
        if labels.size and not np.issubdtype(labels.dtype, np.integer):
            if not np.all(labels == np.round(labels)):
                raise ValidationError("true_labels must be integers")
        labels = labels.astype(np.int64)
        k = scores.shape[1]
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValidationError(f"true label out of range [0, {k})")
        object.__setattr__(self, "scores", _frozen(scores))
        object.__setattr__(self, "true_labels", _frozen(labels))

    @property
    def num_labels(self) -> int:
        return int(self.scores.shape[1])

    @property
    def num_samples(self) -> int:
        return int(self.scores.shape[0])

    def true_scores(self, idx: np.ndarray | None = None) -> np.ndarray:
        """S(X_i, Y_i) for the selected rows (all rows by default)."""
        if idx is None:
            idx = np.arange(self.num_samples)
        idx = np.asarray(idx)
        return self.scores[idx, self.true_labels[idx]]


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    features: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 2 or f.shape[1] < 1:
            raise ValidationError(f"features must be a 2-D matrix, got shape {f.shape}")
        if not np.all(np.isfinite(f)):
            raise ValidationError("features must be finite")
        object.__setattr__(self, "features", _frozen(f))

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_samples(self) -> int:
        return int(self.features.shape[0])


@dataclass(frozen=True, eq=False)
class LabelDistribution:
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("label distribution must be a non-empty vector")
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValidationError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probabilities", _frozen(p))


@dataclass(frozen=True, eq=False)
class CalibrationSplit:
    calibration_indices: np.ndarray
    test_index: int

    def __post_init__(self) -> None:
        cal = np.asarray(self.calibration_indices, dtype=np.int64)
        if cal.ndim != 1 or cal.size < 2:
            raise ValidationError("a split needs at least 2 calibration points")
        if np.unique(cal).size != cal.size:
            raise ValidationError("calibration indices must be distinct")
        test = int(self.test_index)
        if test in set(cal.tolist()):
            raise ValidationError("test index is also a calibration index")
        object.__setattr__(self, "calibration_indices", _frozen(cal))
        object.__setattr__(self, "test_index", test)

    @property
    def n(self) -> int:
        return int(self.calibration_indices.size)


def split_sample(num_samples: int, n: int, rng: np.random.Generator) -> CalibrationSplit:
    """Draw n+1 distinct rows; the first n calibrate, the last is the test point."""
    if n + 1 > num_samples:
        raise InsufficientData(f"need n+1={n + 1} samples, only {num_samples} available")
    idx = rng.choice(num_samples, size=n + 1, replace=False)
    return CalibrationSplit(calibration_indices=idx[:n], test_index=int(idx[n]))


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    """Independent stream for one trial.

    The stream is derived with ``SeedSequence(master_seed, spawn_key=(trial_index,))``
    so any trial can be replayed alone, in any order.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(trial_index),))
    return np.random.default_rng(ss)


# -- CSV I/O -----------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def _read_rows(path: str | Path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    return [h.strip() for h in rows[0]], rows[1:]


def load_score_table(path: str | Path) -> ScoreTable:
    header, rows = _read_rows(path)
    if not header or header[0] != "label":
        raise ParseError(f"{path}: header must start with 'label'")
    k = len(header) - 1
    if k < 1 or header[1:] != [f"s_{y}" for y in range(k)]:
        raise ParseError(f"{path}: expected score columns s_0..s_{k - 1}")
    labels = np.empty(len(rows), dtype=np.int64)
    scores = np.empty((len(rows), k))
    for r, row in enumerate(rows, start=2):
        if len(row) != k + 1:
            raise ParseError(f"{path}:{r}: expected {k + 1} fields, got {len(row)}")
        try:
            lab = float(row[0])
            vals = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{r}: {exc}") from exc
        if lab != int(lab):
            raise ValidationError(f"{path}:{r}: label {row[0]!r} is not an integer")
        if any(np.isnan(v) for v in vals):
            raise ValidationError(f"{path}:{r}: NaN score")
        labels[r - 2] = int(lab)
        scores[r - 2] = vals
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = int(np.argmax((labels < 0) | (labels >= k)))
        raise ValidationError(f"{path}:{bad + 2}: label {labels[bad]} outside [0, {k})")
    return ScoreTable(scores=scores, true_labels=labels)


def save_score_table(table: ScoreTable, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label"] + [f"s_{y}" for y in range(table.num_labels)])
        for lab, row in zip(table.true_labels, table.scores):
            w.writerow([str(int(lab))] + [_fmt(v) for v in row])


def load_feature_matrix(path: str | Path, num_samples: int | None = None) -> FeatureMatrix:
    header, rows = _read_rows(path)
    d = len(header)
    if d < 1 or header != [f"f_{j}" for j in range(d)]:
        raise ParseError(f"{path}: expected feature columns f_0..f_{d - 1}")
    feats = np.empty((len(rows), d))
    for r, row in enumerate(rows, start=2):
        if len(row) != d:
            raise ParseError(f"{path}:{r}: expected {d} fields, got {len(row)}")
        try:
            feats[r - 2] = [float(v) for v in row]
        except ValueError as exc:
            raise ParseError(f"{path}:{r}: {exc}") from exc
    fm = FeatureMatrix(feats)
    if num_samples is not None and fm.num_samples != num_samples:
        raise ValidationError(
            f"{path}: {fm.num_samples} feature rows but {num_samples} score rows"
        )
    return fm


def save_feature_matrix(features: FeatureMatrix, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f_{j}" for j in range(features.feature_dim)])
        for row in features.features:
            w.writerow([_fmt(v) for v in row])
