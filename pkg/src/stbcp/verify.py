"""Property suites on synthetic data.

Each suite returns a :class:`SuiteResult` with one :class:`Check` per
assertion and the measured statistics behind it.  Default sizes are the
full acceptance sizes; ``QUICK`` holds reduced settings for smoke runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import CalibrationSplit, FeatureMatrix, ScoreTable, split_sample, trial_rng
from .engine import oracle_alphas, run_stbcp
from .evaluation import consistency_sweep, run_experiment
from .size_rules import BinningParams, ConstantRule, DataFeatureEntropyRule, FeatureEntropyRule
from .synth import (
    DirichletSoftmax,
    ExchangeableIID,
    GeneratorSpec,
    bounded_threshold_table,
    generate,
    objective_sampler,
)
from .threshold import w_classification, w_classification_rows, w_regression
from .transforms import (
    IW,
    Identity,
    IRo,
    IWEps,
    Monotone,
    OptimalOracle,
    Transform,
    improve,
    objective_j,
)

# sharp softmax: top-1 miscoverage around a quarter, top-2 under a tenth
SHARP = DirichletSoftmax(concentration=1.0, num_labels=10, temperature=0.2)


@dataclass
class Check:
    label: str
    passed: bool
    stats: dict = field(default_factory=dict)

    def line(self) -> str:
        body = ", ".join(f"{k}={_fmt(v)}" for k, v in self.stats.items())
        return f"{'PASS' if self.passed else 'FAIL'} {self.label}" + (f" ({body})" if body else "")


@dataclass
class SuiteResult:
    name: str
    checks: list[Check]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "suite": self.name,
            "passed": self.passed,
            "seconds": round(self.seconds, 3),
            "checks": [{"label": c.label, "passed": c.passed, **_jsonable(c.stats)} for c in self.checks],
        }


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, (np.floating, np.integer)):
            v = v.item()
        if isinstance(v, float) and not math.isfinite(v):
            v = str(v)
        out[k] = v
    return out


def _timed(name: str, fn: Callable[[], list[Check]]) -> SuiteResult:
    t0 = time.perf_counter()
    checks = fn()
    return SuiteResult(name, checks, time.perf_counter() - t0)


def _dirichlet_instance(rng: np.random.Generator, n: int, k: int) -> tuple[ScoreTable, FeatureMatrix]:
    """n+1 rows of cross-entropy scores from a random-temperature Dirichlet law."""
    kind = DirichletSoftmax(
        concentration=float(rng.uniform(0.3, 3.0)),
        num_labels=k,
        temperature=float(rng.uniform(0.2, 1.5)),
        feature_dim=3,
    )
    data = generate(GeneratorSpec(kind, n + 1, int(rng.integers(2**31))))
    return data.table, data.features


def _whole_split(n: int) -> CalibrationSplit:
    return CalibrationSplit(np.arange(n), n)


# -- suites ------------------------------------------------------------------

def suite_oracle(instances: int = 1000, grid_step: float = 1e-5, seed: int = 0, time_limit: float = 120.0) -> SuiteResult:
    """Closed-form levels against the grid infimum on small random instances.

    Budgets stay below |Y|: at |Y| the closed form is 1/(n+1) by convention
    while the grid returns its minimum, so the comparison is vacuous there.
    """

    def run() -> list[Check]:
        t0 = time.perf_counter()
        worst, bad, compared = 0.0, 0, 0
        for it in range(instances):
            rng = trial_rng(seed, it)
            k = int(rng.integers(2, 11))
            n = int(rng.integers(2, 21))
            table, feats = _dirichlet_instance(rng, n, k)
            split = _whole_split(n)
            kind = it % 3
            params = BinningParams(1, k - 1, float(rng.uniform(0.5, 2.0)))
            if kind == 0:
                rule = ConstantRule(int(rng.integers(1, k)))
            elif kind == 1:
                rule = FeatureEntropyRule(params)
            else:
                rule = DataFeatureEntropyRule(params, k=int(rng.integers(1, 6)), reduced_dim=2)
            for tr in (Identity(), IWEps(1e-3)):
                out = run_stbcp(table, split, rule, tr, features=feats)
                test, pseudo = oracle_alphas(table, split, rule, tr, grid_step, features=feats)
                diffs = np.abs(np.append(pseudo, test) - np.append(out.pseudo_alphas, out.alpha_tilde))
                compared += diffs.size
                worst = max(worst, float(diffs.max()))
                bad += int(np.count_nonzero(diffs > 2 * grid_step))
        elapsed = time.perf_counter() - t0
        return [
            Check("closed form matches grid infimum", bad == 0,
                  {"instances": instances, "levels": compared, "mismatches": bad,
                   "max_abs_diff": worst, "tol": 2 * grid_step}),
            Check("oracle runtime", elapsed < time_limit, {"seconds": elapsed, "limit": time_limit}),
        ]

    return _timed("oracle", run)


def true_label_e_batch(transform: Transform, scores: np.ndarray, labels: np.ndarray, t: int) -> np.ndarray:
    """E^{n+1}(Y_{n+1}) for a batch of constant-budget trials.

    ``scores`` is (trials, n+1, K) with the test point last; 0/0 gives 0.
    """
    m, n1, _ = scores.shape
    w = w_classification_rows(scores, np.full((m, n1), t))
    s_true = np.take_along_axis(scores, labels[..., None], axis=-1)[..., 0]
    h = transform(s_true, w)
    total = h.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        e = np.where(total > 0, n1 * h[:, -1] / total, 0.0)
    return e


def suite_evariable(trials: int = 100_000, n: int = 10, num_labels: int = 5, t: int = 2, seed: int = 1) -> SuiteResult:
    """Mean of the test e-variable at the true label is 1 under exchangeability.

    For step transforms the mean is P(some transformed score > 0); with
    n=10, |Y|=5, T=2 the shortfall is 0.4**11 < 1e-4, well inside the noise.
    """

    def run() -> list[Check]:
        kind = ExchangeableIID(law="uniform", num_labels=num_labels)
        data = generate(GeneratorSpec(kind, trials * (n + 1), seed))
        scores = np.asarray(data.table.scores).reshape(trials, n + 1, num_labels)
        labels = np.asarray(data.table.true_labels).reshape(trials, n + 1)
        checks = []
        for tr in (Identity(), IW(), IRo(), IWEps(1e-4)):
            e = true_label_e_batch(tr, scores, labels, t)
            mean, se = float(e.mean()), float(e.std(ddof=1) / math.sqrt(trials))
            z = abs(mean - 1.0) / se
            checks.append(Check(f"E[E]=1 for {tr.name}", z <= 3.0,
                                {"mean": mean, "se": se, "z": z, "trials": trials}))
        return checks

    return _timed("evariable", run)


def _square() -> Transform:
    return Monotone(np.square, "square")


def _expm1() -> Transform:
    return Monotone(np.expm1, "expm1")


def suite_invariance(trials: int = 500, seed: int = 2, n: int = 200, m: int = 500) -> SuiteResult:
    """Sets do not depend on the transform under D-independent rules."""

    def run() -> list[Check]:
        transforms = (Identity(), _square(), _expm1(), IWEps(1e-3), IW())
        agree = {"constant": 0, "feature_entropy": 0}
        for it in range(trials):
            rng = trial_rng(seed, it)
            k = int(rng.integers(3, 11))
            nn = int(rng.integers(5, 51))
            table, _ = _dirichlet_instance(rng, nn, k)
            split = _whole_split(nn)
            rules = {
                "constant": ConstantRule(int(rng.integers(1, k))),
                "feature_entropy": FeatureEntropyRule(BinningParams(1, k - 1, 1.0)),
            }
            for name, rule in rules.items():
                sets = {run_stbcp(table, split, rule, tr).set for tr in transforms}
                agree[name] += len(sets) == 1
        checks = [
            Check(f"identical sets under {name} rule", count == trials,
                  {"agree": count, "trials": trials})
            for name, count in agree.items()
        ]
        data = generate(GeneratorSpec(SHARP, 20000, seed))
        for rule in (ConstantRule(2), FeatureEntropyRule(BinningParams(1, 4, 1.0))):
            _, a = run_experiment(data.table, data.features, rule, Identity(), n, m, seed)
            _, b = run_experiment(data.table, data.features, rule, IW(), n, m, seed)
            checks.append(Check(f"MisCov identity == iw ({rule.kind})", a.miscov == b.miscov,
                                {"identity": a.miscov, "iw": b.miscov}))
        return checks

    return _timed("invariance", run)


def suite_consistency(
    n_list=(50, 100, 200, 400, 800), m: int = 500, seed: int = 3, pool: int = 40000,
    slope_band=(-1.4, -0.6), time_limit: float = 600.0,
) -> SuiteResult:
    def run() -> list[Check]:
        t0 = time.perf_counter()
        spec = GeneratorSpec(SHARP, pool, seed)
        checks = []
        for tr in (Identity(), IW()):
            res = consistency_sweep(spec, ConstantRule(2), tr, n_list, m, seed)
            lo, hi = slope_band
            stats = {"slope": res.slope}
            stats.update({f"mse@{r.n}": r.mse for r in res.rows})
            checks.append(Check(f"log-log MSE slope in band ({tr.name})", lo <= res.slope <= hi, stats))
            checks.append(Check(f"MSE strictly decreasing ({tr.name})", res.mse_strictly_decreasing(),
                                {"n_list": list(n_list)}))
        elapsed = time.perf_counter() - t0
        checks.append(Check("consistency runtime", elapsed < time_limit, {"seconds": elapsed, "limit": time_limit}))
        return checks

    return _timed("consistency", run)


def suite_gap(budgets=(1, 2, 3), n: int = 200, m: int = 500, seed: int = 4, pool: int = 20000, need: int = 2) -> SuiteResult:
    """GAP and STD of the LOO estimate: IW against identity."""

    def run() -> list[Check]:
        data = generate(GeneratorSpec(SHARP, pool, seed))
        wins, stats = 0, {}
        for t in budgets:
            _, a = run_experiment(data.table, data.features, ConstantRule(t), Identity(), n, m, seed)
            _, b = run_experiment(data.table, data.features, ConstantRule(t), IW(), n, m, seed)
            ok = b.gap < a.gap and b.std <= a.std
            wins += ok
            stats.update({
                f"T{t}_gap_identity": a.gap, f"T{t}_gap_iw": b.gap,
                f"T{t}_std_identity": a.std, f"T{t}_std_iw": b.std,
            })
        stats["budgets_won"] = wins
        return [Check(f"GAP(iw) < GAP(identity) and STD(iw) <= STD(identity) in >= {need} budgets",
                      wins >= need, stats)]

    return _timed("gap", run)


def suite_idempotence(evals: int = 1000, seed: int = 5) -> SuiteResult:
    def run() -> list[Check]:
        rng = np.random.default_rng(seed)
        s = rng.exponential(size=evals)
        w = rng.exponential(size=evals) + 1e-3
        # exact hits on the threshold exercise the s >= w branch
        s[::10] = w[::10]
        checks = []
        for h in (Identity(), IW(), IRo()):
            once = improve(h)(s, w)
            twice = improve(improve(h))(s, w)
            same = once.tobytes() == twice.tobytes()
            checks.append(Check(f"G(G({h.name})) == G({h.name}) bitwise", same, {"evals": evals}))
        same_iw = improve(Identity())(s, w).tobytes() == IW()(s, w).tobytes()
        checks.append(Check("G(identity) == iw bitwise", same_iw, {"evals": evals}))
        return checks

    return _timed("idempotence", run)


def suite_optimality(draws: int = 100_000, t: int = 1, seed: int = 6, scales=(0.5, 1.0, 7.0)) -> SuiteResult:
    """J(optimal) <= J(iw) <= J(identity), each gap resolved at >= 3 SE.

    Every transform gets its own draws, so the standard errors combine in
    quadrature.
    """

    def run() -> list[Check]:
        sampler = objective_sampler(SHARP, t)
        j = {}
        for off, tr in enumerate((Identity(), IW(), OptimalOracle())):
            j[tr.name] = objective_j(tr, sampler, draws, trial_rng(seed, off))
        (ji, si), (jw, sw), (jo, so) = j["identity"], j["iw"], j["optimal_oracle"]
        z_opt = (jw - jo) / math.hypot(sw, so)
        z_id = (ji - jw) / math.hypot(si, sw)
        checks = [
            Check("J(optimal) < J(iw) by >= 3 SE", z_opt >= 3.0, {"J_optimal": jo, "J_iw": jw, "z": z_opt}),
            Check("J(iw) < J(identity) by >= 3 SE", z_id >= 3.0, {"J_iw": jw, "J_identity": ji, "z": z_id}),
        ]
        scaled = {a: objective_j(OptimalOracle(a), sampler, draws, trial_rng(seed, 2)) for a in scales}
        base, base_se = scaled[1.0] if 1.0 in scaled else (jo, so)
        worst = max(abs(v[0] - base) / max(base_se, 1e-300) for v in scaled.values())
        checks.append(Check("J(optimal) invariant in scale a", worst <= 1.0,
                            {**{f"J_a={a}": v[0] for a, v in scaled.items()}, "max_diff_in_se": worst}))
        return checks

    return _timed("optimality", run)


def epsilon_bound(eps: float, n: int, w_min: float, w_max: float) -> float:
    return 2 * (w_min + (n - 1) * w_max) * eps / (n * w_min**2)


def suite_epsilon(instances: int = 100, eps_list=(1e-3, 1e-4), w_min: float = 0.5, w_max: float = 2.0, seed: int = 7) -> SuiteResult:
    """LOO under the smoothed step transform stays within the stated bound of IW's."""

    def run() -> list[Check]:
        checks = []
        for eps in eps_list:
            worst_ratio, fails = 0.0, 0
            for it in range(instances):
                rng = trial_rng(seed, it)
                n = int(rng.integers(10, 101))
                k = int(rng.integers(3, 11))
                table = bounded_threshold_table(n + 1, k, w_min, w_max, rng)
                split = _whole_split(n)
                rule = ConstantRule(int(rng.integers(1, k)))
                a = run_stbcp(table, split, rule, IWEps(eps)).loo_estimate
                b = run_stbcp(table, split, rule, IW()).loo_estimate
                bound = epsilon_bound(eps, n, w_min, w_max)
                gap = abs(a - b)
                worst_ratio = max(worst_ratio, gap / bound)
                fails += gap > bound
            checks.append(Check(f"|LOO(iw_eps) - LOO(iw)| <= bound, eps={eps:g}", fails == 0,
                                {"instances": instances, "violations": fails,
                                 "max_gap_over_bound": worst_ratio}))
        return checks

    return _timed("epsilon", run)


def suite_coverage(m: int = 2000, n: int = 200, t_high: int = 5, t_low: int = 1, seed: int = 8, pool: int = 20000, slack: float = 0.02) -> SuiteResult:
    def run() -> list[Check]:
        data = generate(GeneratorSpec(SHARP, pool, seed))
        _, hi = run_experiment(data.table, data.features, ConstantRule(t_high), IW(), n, m, seed)
        _, lo = run_experiment(data.table, data.features, ConstantRule(t_low), IW(), n, m, seed)
        return [
            Check(f"coverage >= 1 - LOO - {slack} at T={t_high}",
                  1 - hi.miscov >= 1 - hi.mean_loo - slack,
                  {"coverage": 1 - hi.miscov, "mean_loo": hi.mean_loo}),
            Check(f"corrected >= LOO at T={t_low}", lo.mean_corrected >= lo.mean_loo,
                  {"mean_corrected": lo.mean_corrected, "mean_loo": lo.mean_loo}),
            Check(f"MisCov <= corrected + {slack} at T={t_low}", lo.miscov <= lo.mean_corrected + slack,
                  {"miscov": lo.miscov, "mean_corrected": lo.mean_corrected}),
        ]

    return _timed("coverage", run)


def _scan_supremum(scores: np.ndarray, t: int) -> float:
    """Largest cutoff c with |{y: s_y < c}| <= t, by trying every candidate."""
    best = -math.inf
    for c in list(np.unique(scores)) + [math.inf]:
        if np.count_nonzero(scores < c) <= t:
            best = max(best, float(c))
    return best


def suite_threshold(vectors: int = 10_000, seed: int = 9, tol: float = 1e-9) -> SuiteResult:
    def run() -> list[Check]:
        rng = np.random.default_rng(seed)
        bad = 0
        for it in range(vectors):
            k = int(rng.integers(1, 13))
            s = rng.exponential(size=k)
            if it % 3 == 0:
                s = np.round(s, 1)  # force ties
            t = int(rng.integers(1, k + 1))
            w = w_classification(s, t)
            ok = w == _scan_supremum(s, t)
            if math.isfinite(w):
                ok &= np.count_nonzero(s < np.nextafter(w, math.inf)) > t
            bad += not ok
        cases = []
        for t in (0.1, 1.0, 3.7, 50.0):
            cases.append((w_regression(t, 1, 2.0), t / 2))
            cases.append((w_regression(t, 1, 1.0), t / 2))
            cases.append((w_regression(t, 2, 2.0), math.sqrt(t / math.pi)))
            cases.append((w_regression(t, 2, 1.0), math.sqrt(t / 2)))
            cases.append((w_regression(t, 3, 2.0), (3 * t / (4 * math.pi)) ** (1 / 3)))
        err = max(abs(a - b) for a, b in cases)
        return [
            Check("classification threshold is the scanned supremum", bad == 0,
                  {"vectors": vectors, "mismatches": bad}),
            Check("regression radius matches analytic balls", err <= tol, {"max_abs_err": err, "tol": tol}),
        ]

    return _timed("threshold", run)


SUITES: dict[str, Callable[..., SuiteResult]] = {
    "oracle": suite_oracle,
    "evariable": suite_evariable,
    "invariance": suite_invariance,
    "consistency": suite_consistency,
    "gap": suite_gap,
    "idempotence": suite_idempotence,
    "optimality": suite_optimality,
    "epsilon": suite_epsilon,
    "coverage": suite_coverage,
    "threshold": suite_threshold,
}

QUICK: dict[str, dict] = {
    "oracle": {"instances": 60},
    "evariable": {"trials": 20_000},
    "invariance": {"trials": 50, "m": 100},
    "consistency": {"n_list": (50, 100, 200), "m": 200, "pool": 10000},
    "gap": {"m": 150},
    "idempotence": {},
    "optimality": {"draws": 50_000},
    "epsilon": {"instances": 20},
    "coverage": {"m": 400},
    "threshold": {"vectors": 1000},
}


def run_suite(name: str, quick: bool = False, seed: int | None = None) -> SuiteResult:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    kwargs = dict(QUICK[name]) if quick else {}
    if seed is not None:
        kwargs["seed"] = seed
    return SUITES[name](**kwargs)
