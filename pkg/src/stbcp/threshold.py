"""Score-space thresholds w(D, X) that encode a set-size budget.

For classification the threshold is an order statistic of the candidate
scores; for L_q-ball regression it is the radius whose ball volume equals
the budget.  Infinity stands for "no finite cutoff" (budget = |Y|).
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InvalidBudget


def w_classification(label_scores, t: int) -> float:
    """(t+1)-th smallest score, or +inf when the budget admits every label.

    >>> w_classification([0.1, 0.5, 0.9, 1.2], 2)
    0.9
    """
    s = np.asarray(label_scores, dtype=float)
    k = s.size
    if not 1 <= t <= k:
        raise InvalidBudget(f"budget {t} outside [1, {k}]")
    if t == k:
        return math.inf
    return float(np.partition(s, t)[t])


def w_classification_rows(scores: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """Row-wise ``w_classification``; ``budgets`` broadcasts against the rows.

    ``scores`` has shape (..., K) and ``budgets`` shape (...).  Values are
    copied out of a stable sort so they are bit-identical to the scalar path.
    """
    scores = np.asarray(scores, dtype=float)
    budgets = np.asarray(budgets, dtype=np.int64)
    k = scores.shape[-1]
    if budgets.size and (budgets.min() < 1 or budgets.max() > k):
        raise InvalidBudget(f"budgets outside [1, {k}]")
    ordered = np.sort(scores, axis=-1)
    padded = np.concatenate([ordered, np.full(ordered.shape[:-1] + (1,), math.inf)], axis=-1)
    lead = np.broadcast_shapes(scores.shape[:-1], budgets.shape)
    padded = np.broadcast_to(padded, lead + padded.shape[-1:])
    budgets = np.broadcast_to(budgets, lead)
    return np.take_along_axis(padded, budgets[..., None], axis=-1)[..., 0]


def lq_ball_volume(radius: float, d: int, q: float) -> float:
    """Lebesgue volume of the open L_q ball of the given radius in R^d."""
    return (2.0 * math.gamma(1.0 + 1.0 / q)) ** d / math.gamma(d / q + 1.0) * radius**d


def w_regression(t: float, d: int, q: float) -> float:
    """Radius of the L_q ball in R^d whose volume equals the budget ``t``."""
    if not t > 0:
        raise InvalidBudget(f"volume budget must be positive, got {t}")
    if d < 1 or not q > 0:
        raise ValueError(f"need d >= 1 and q > 0, got d={d}, q={q}")
    return (t * math.gamma(d / q + 1.0)) ** (1.0 / d) / (2.0 * math.gamma(1.0 + 1.0 / q))
