"""Backward conformal prediction with transformed scores.

One call of :func:`run_stbcp` handles one calibration/test split:

1. budgets T_i, T_{n+1} and symmetric budgets T(D_i^y, X_i) from the rule;
2. thresholds w as order statistics of each point's candidate scores;
3. transformed scores h_j (pseudo-calibration), h_i^y (symmetric
   calibration), h_{n+1}(y) (test) and h_i(y) (pseudo-test);
4. e-variables, the data-dependent miscoverage level, the prediction set,
   the pseudo levels, the leave-one-out estimate and its corrected variant.

Each label y has an exclusion level a_y = (sum_i h_i^y / h_{n+1}(y) + 1)/(n+1):
y belongs to C^a exactly when a < a_y, i.e. E(y) < 1/a.  The miscoverage
level is the smallest a that excludes |Y| - T labels.  For rules that ignore
D this equals the closed form (sum_i h_i / h(w) + 1)/(n+1), which is what is
computed; h(w) is read off the label sitting at w so the boundary label gets
a_y == a bit for bit.  For data-dependent rules sum_i h_i^y varies with y,
the closed form no longer describes the infimum at finite n, and the exact
order statistic of the a_y is used instead (the closed form is still
reported as ``alpha_tilde_closed``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .data import CalibrationSplit, FeatureMatrix, ScoreTable
from .errors import MissingOracle, NonpositiveDenominator, ZeroMass
from .size_rules import SizeRule, TrialBudgets, budgets_uncached
from .threshold import w_classification_rows
from .transforms import Transform

# flags attached to outcomes
VACUOUS = "vacuous_budget"
CLAMPED = "alpha_clamped"
PSEUDO_CLAMPED = "pseudo_alpha_clamped"
ZERO_MASS = "zero_mass"
NONPOSITIVE_HW = "nonpositive_h_at_w"
INFEASIBLE = "infeasible_budget"


class EVariableGrid(NamedTuple):
    test_e: np.ndarray  # (K,)   E^{n+1}(y, h)
    pseudo_e: np.ndarray  # (n, K) E^i(y, h)


@dataclass(frozen=True)
class PredictionOutcome:
    set: tuple[int, ...]
    alpha_tilde: float
    loo_estimate: float
    corrected_estimate: float
    pseudo_alphas: np.ndarray
    w_test: float
    w_pseudo: np.ndarray
    t_test: int
    test_e: np.ndarray
    alpha_tilde_closed: float | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "set": [int(y) for y in self.set],
            "alpha_tilde": float(self.alpha_tilde),
            "loo": float(self.loo_estimate),
            "corrected": float(self.corrected_estimate),
            "flags": list(self.flags),
            "t_test": int(self.t_test),
            "w_test": None if math.isinf(self.w_test) else float(self.w_test),
            "n": int(self.pseudo_alphas.size),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


# -- small public operations -------------------------------------------------

def e_variable(h_cal, h_test: float) -> float:
    """(n+1) h_test / (sum h_cal + h_test)."""
    h_cal = np.asarray(h_cal, dtype=float)
    denom = h_cal.sum() + h_test
    if denom <= 0:
        raise ZeroMass("all transformed scores are zero")
    return float((h_cal.size + 1) * h_test / denom)


def prediction_set(e_row, alpha: float) -> tuple[int, ...]:
    """Labels whose e-variable is strictly below 1/alpha."""
    e_row = np.asarray(e_row, dtype=float)
    if alpha <= 0:
        return tuple(range(e_row.size))
    return tuple(int(y) for y in np.flatnonzero(e_row < 1.0 / alpha))


def alpha_tilde_closed(h_cal_true, h_at_w: float, n: int | None = None, clamp: bool = True) -> float:
    """(sum h_i / h(w) + 1) / (n + 1); clamped to 1 unless ``clamp=False``."""
    h_cal_true = np.asarray(h_cal_true, dtype=float)
    n = h_cal_true.size if n is None else n
    if not h_at_w > 0:
        raise NonpositiveDenominator(f"h(w) = {h_at_w} must be positive")
    a = (h_cal_true.sum() / h_at_w + 1.0) / (n + 1)
    return min(a, 1.0) if clamp else a


def loo_estimate(pseudo_alphas) -> float:
    pa = np.asarray(pseudo_alphas, dtype=float)
    if pa.size == 0:
        raise ValueError("need at least one pseudo level")
    return float(pa.mean())


# -- per-trial machinery -----------------------------------------------------

def _tail_mass(scores: np.ndarray, probs: np.ndarray, w: np.ndarray) -> np.ndarray:
    """p = sum of P(Y=y|X) over labels with S(X, y) >= w."""
    return np.ascontiguousarray((scores >= w[..., None]) * probs).sum(axis=-1)


def _levels(rest: np.ndarray, h_rows: np.ndarray, n_plus: int) -> np.ndarray:
    """Exclusion levels (rest / h + 1) / n_plus; +inf where h == 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        lv = (rest / h_rows + 1.0) / n_plus
    return np.where(h_rows > 0, lv, math.inf)


@dataclass
class _Trial:
    n: int
    k: int
    cal: np.ndarray
    test: int
    y_cal: np.ndarray
    budgets: TrialBudgets
    w_test: float
    w_pseudo: np.ndarray
    h_pseudo: np.ndarray  # h_j = h(S_j; D_j, X_j)
    h_pseudo_rows: np.ndarray  # h_i(y) = h(S(X_i, y); D_i, X_i)
    h_pseudo_at_w: np.ndarray  # h(w_i; D_i, X_i), nan when T_i = K
    h_sym: np.ndarray | None  # h_i^y, None when equal to h_pseudo for all y
    sym_sums: np.ndarray  # sum_i h_i^y for each y
    h_test_row: np.ndarray  # h_{n+1}(y)
    h_test_at_w: float  # nan when T_{n+1} = K
    depends_on_data: bool
    flags: list[str] = field(default_factory=list)


def _at_w(h_rows: np.ndarray, scores: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """h evaluated at the label that sits at the threshold (nan when T = K)."""
    k = scores.shape[-1]
    order = np.argsort(scores, axis=-1, kind="stable")
    budgets = np.asarray(budgets)
    safe = np.minimum(budgets, k - 1)
    pos = np.take_along_axis(order, safe[..., None], axis=-1)
    val = np.take_along_axis(h_rows, pos, axis=-1)[..., 0]
    return np.where(budgets < k, val, math.nan)


def _prepare(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
    shortcut: bool = True,
) -> _Trial:
    if transform.needs_oracle and label_probs is None:
        raise MissingOracle(f"{transform.name} needs exact label probabilities")
    cal = np.asarray(split.calibration_indices)
    test = split.test_index
    n, k = cal.size, table.num_labels
    y_cal = table.true_labels[cal]
    if shortcut:
        budgets = rule.budgets(table, features, split)
    else:
        budgets = budgets_uncached(rule, table, features, split)

    s_cal_rows = table.scores[cal]
    s_test_row = table.scores[test]
    w_test = float(w_classification_rows(s_test_row, budgets.test))
    w_pseudo = w_classification_rows(s_cal_rows, budgets.pseudo)

    probs_cal = probs_test = None
    p_rows = p_test = None
    if transform.needs_oracle:
        probs_cal = np.asarray(label_probs)[cal]
        probs_test = np.asarray(label_probs)[test]
        p_rows = _tail_mass(s_cal_rows, probs_cal, w_pseudo)[:, None]
        p_test = _tail_mass(s_test_row, probs_test, np.asarray(w_test))

    h_pseudo_rows = transform(s_cal_rows, w_pseudo[:, None], p_rows)
    h_pseudo = h_pseudo_rows[np.arange(n), y_cal]
    h_pseudo_at_w = _at_w(h_pseudo_rows, s_cal_rows, budgets.pseudo)

    h_test_row = transform(s_test_row, np.asarray(w_test), p_test)
    h_test_at_w = float(_at_w(h_test_row, s_test_row, np.asarray(budgets.test)))

    if budgets.symmetric is None and shortcut:
        h_sym = None
        sym_sums = np.full(k, h_pseudo.sum())
    else:
        sym_budgets = budgets.symmetric
        w_sym = w_classification_rows(s_cal_rows[:, None, :], sym_budgets)  # (n, K)
        p_sym = None
        if transform.needs_oracle:
            p_sym = _tail_mass(s_cal_rows[:, None, :], probs_cal[:, None, :], w_sym)
        s_true = s_cal_rows[np.arange(n), y_cal]
        h_sym = transform(s_true[:, None], w_sym, p_sym)
        sym_sums = np.ascontiguousarray(h_sym.T).sum(axis=1)

    return _Trial(
        n=n,
        k=k,
        cal=cal,
        test=test,
        y_cal=y_cal,
        budgets=budgets,
        w_test=w_test,
        w_pseudo=w_pseudo,
        h_pseudo=h_pseudo,
        h_pseudo_rows=h_pseudo_rows,
        h_pseudo_at_w=h_pseudo_at_w,
        h_sym=h_sym,
        sym_sums=sym_sums,
        h_test_row=h_test_row,
        h_test_at_w=h_test_at_w,
        depends_on_data=rule.depends_on_data,
    )


def _pseudo_rest(tr: _Trial) -> np.ndarray:
    """sum_{j != i} h_j for every i."""
    return np.maximum(tr.h_pseudo.sum() - tr.h_pseudo, 0.0)


def _e_grid(tr: _Trial) -> tuple[EVariableGrid, bool]:
    n = tr.n
    with np.errstate(divide="ignore", invalid="ignore"):
        denom = tr.sym_sums + tr.h_test_row
        test_e = np.where(denom > 0, (n + 1) * tr.h_test_row / denom, 0.0)
        rest = _pseudo_rest(tr)[:, None]
        pdenom = rest + tr.h_pseudo_rows
        pseudo_e = np.where(pdenom > 0, n * tr.h_pseudo_rows / pdenom, 0.0)
    zero = bool(np.any(denom <= 0) or np.any(pdenom <= 0))
    return EVariableGrid(test_e, pseudo_e), zero


def _test_levels(tr: _Trial) -> np.ndarray:
    return _levels(tr.sym_sums, tr.h_test_row, tr.n + 1)


def _test_alpha(tr: _Trial, flags: list[str]) -> tuple[float, float, float | None]:
    """(reported alpha, raw alpha used for the set, closed-form value)."""
    n, k, t = tr.n, tr.k, tr.budgets.test
    if t >= k:
        flags.append(VACUOUS)
        a = 1.0 / (n + 1)
        return a, a, a
    closed = None
    if tr.h_test_at_w > 0:
        closed = (tr.h_pseudo.sum() / tr.h_test_at_w + 1.0) / (n + 1)
    else:
        flags.append(NONPOSITIVE_HW)
    if closed is not None and not tr.depends_on_data:
        raw = closed
    else:
        raw = float(np.sort(_test_levels(tr))[k - t - 1])
    if math.isinf(raw):
        flags.append(INFEASIBLE)
        return 1.0, raw, closed
    if raw > 1.0:
        flags.append(CLAMPED)
        return 1.0, raw, closed
    return raw, raw, closed


def _pseudo_alphas(tr: _Trial, flags: list[str]) -> np.ndarray:
    """Closed-form pseudo levels; exact for every rule since h_j ignores y."""
    n, k = tr.n, tr.k
    t = tr.budgets.pseudo
    rest = _pseudo_rest(tr)
    out = np.empty(n)
    vac = t >= k
    out[vac] = 1.0 / n
    hw = tr.h_pseudo_at_w
    ok = ~vac & (hw > 0)
    out[ok] = (rest[ok] / hw[ok] + 1.0) / n
    bad = np.flatnonzero(~vac & ~ok)
    if bad.size:
        flags.append(NONPOSITIVE_HW)
        lv = _levels(rest[bad, None], tr.h_pseudo_rows[bad], n)
        for r, i in enumerate(bad):
            out[i] = np.sort(lv[r])[k - t[i] - 1]
    if np.any(out > 1.0):
        flags.append(PSEUDO_CLAMPED)
        out = np.minimum(out, 1.0)
    return out


# -- public pipeline operations -----------------------------------------------

def transformed_calibration_scores(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    y: int,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
    shortcut: bool = True,
) -> tuple[np.ndarray, float]:
    """(h_i^y for i = 1..n, h_{n+1}(y)) under the symmetric parameterisation."""
    tr = _prepare(table, split, rule, transform, features, label_probs, shortcut)
    h_sym = tr.h_pseudo.copy() if tr.h_sym is None else tr.h_sym[:, y].copy()
    return h_sym, float(tr.h_test_row[y])


def e_variable_grid(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
) -> EVariableGrid:
    tr = _prepare(table, split, rule, transform, features, label_probs)
    return _e_grid(tr)[0]


def _grid_infimum(e_row: np.ndarray, budget: int, grid_step: float) -> float:
    """Smallest grid alpha in (0, 1) whose strict-inequality set fits the budget.

    Set size is non-increasing in alpha, so bisection over the grid index is
    valid.  Returns 1.0 when no grid point is feasible.
    """
    if not 0 < grid_step <= 0.01:
        raise ValueError(f"grid_step must lie in (0, 0.01], got {grid_step}")
    top = int(math.ceil(1.0 / grid_step)) - 1

    def fits(j: int) -> bool:
        return int(np.count_nonzero(e_row < 1.0 / (j * grid_step))) <= budget

    if not fits(top):
        return 1.0
    lo, hi = 1, top
    while lo < hi:
        mid = (lo + hi) // 2
        if fits(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo * grid_step


def alpha_tilde_infimum(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    grid_step: float = 1e-5,
    *,
    index: int | None = None,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
) -> float:
    """Grid-search oracle for the miscoverage level straight from its definition.

    ``index=None`` targets the test point; ``index=i`` the i-th pseudo-test
    point (position in the calibration set).
    """
    tr = _prepare(table, split, rule, transform, features, label_probs)
    grid, _ = _e_grid(tr)
    if index is None:
        return _grid_infimum(grid.test_e, tr.budgets.test, grid_step)
    return _grid_infimum(grid.pseudo_e[index], int(tr.budgets.pseudo[index]), grid_step)


def oracle_alphas(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    grid_step: float = 1e-5,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Grid-infimum levels for the test point and every pseudo-test point at once."""
    tr = _prepare(table, split, rule, transform, features, label_probs)
    grid, _ = _e_grid(tr)
    test = _grid_infimum(grid.test_e, tr.budgets.test, grid_step)
    pseudo = np.array([
        _grid_infimum(grid.pseudo_e[i], int(tr.budgets.pseudo[i]), grid_step) for i in range(tr.n)
    ])
    return test, pseudo


def pseudo_alpha(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    i: int,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
) -> float:
    """Closed-form pseudo miscoverage level of calibration position ``i``."""
    tr = _prepare(table, split, rule, transform, features, label_probs)
    return float(_pseudo_alphas(tr, [])[i])


def corrected_loo_estimate(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
) -> float:
    """Mean over i of pseudo level times the pseudo e-variable at the true label."""
    return run_stbcp(
        table, split, rule, transform, features=features, label_probs=label_probs
    ).corrected_estimate


def run_stbcp(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
    shortcut: bool = True,
) -> PredictionOutcome:
    """Prediction set, miscoverage level and leave-one-out estimates for one split."""
    tr = _prepare(table, split, rule, transform, features, label_probs, shortcut)
    flags: list[str] = []
    grid, zero = _e_grid(tr)
    if zero:
        flags.append(ZERO_MASS)

    alpha, raw, closed = _test_alpha(tr, flags)
    if tr.budgets.test >= tr.k:
        members = tuple(range(tr.k))
    else:
        members = tuple(int(y) for y in np.flatnonzero(raw < _test_levels(tr)))

    pseudo = _pseudo_alphas(tr, flags)
    e_true = grid.pseudo_e[np.arange(tr.n), tr.y_cal]
    corrected = float(np.mean(pseudo * e_true))

    return PredictionOutcome(
        set=members,
        alpha_tilde=float(alpha),
        loo_estimate=loo_estimate(pseudo),
        corrected_estimate=corrected,
        pseudo_alphas=pseudo,
        w_test=tr.w_test,
        w_pseudo=tr.w_pseudo,
        t_test=int(tr.budgets.test),
        test_e=grid.test_e,
        alpha_tilde_closed=None if closed is None else float(min(closed, 1.0)),
        flags=tuple(dict.fromkeys(flags)),
    )


def true_label_e_variable(
    table: ScoreTable,
    split: CalibrationSplit,
    rule: SizeRule,
    transform: Transform,
    *,
    features: FeatureMatrix | None = None,
    label_probs: np.ndarray | None = None,
) -> float:
    """E^{n+1}(Y_{n+1}, h), with 0 when every transformed score is zero."""
    tr = _prepare(table, split, rule, transform, features, label_probs)
    y = int(table.true_labels[split.test_index])
    h_cal = tr.h_pseudo if tr.h_sym is None else tr.h_sym[:, y]
    denom = h_cal.sum() + tr.h_test_row[y]
    if denom <= 0:
        return 0.0
    return float((tr.n + 1) * tr.h_test_row[y] / denom)
