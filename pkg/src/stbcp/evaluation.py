"""Monte-Carlo experiment harness: repeated random splits and summary metrics.

Metrics over M trials:

    MisCov  = mean(1 - hit)
    E[a]    = mean(alpha_tilde)
    MSE     = mean((loo - E[a])^2)
    GAP     = mean(|loo - MisCov|)
    STD     = sample std of loo (M - 1 denominator; 0 with a flag when M = 1)
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .data import FeatureMatrix, ScoreTable, split_sample, trial_rng
from .engine import alpha_tilde_infimum, run_stbcp
from .errors import InsufficientData, ValidationError
from .size_rules import SizeRule
from .synth import GeneratorSpec, generate
from .transforms import Transform

WORKERS_ENV = "STBCP_WORKERS"
ORACLE_MISMATCH = "oracle_mismatch"
SINGLE_TRIAL = "single_trial_std"


@dataclass(frozen=True)
class TrialReport:
    trial_index: int
    alpha_tilde: float
    loo: float
    corrected: float
    hit: bool
    set_size: int
    t_test: int
    flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class MetricsSummary:
    miscov: float
    mean_alpha_tilde: float
    mse: float
    gap: float
    std: float
    m: int
    mean_loo: float
    mean_corrected: float
    flag_counts: dict
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = list(self.flags)
        return d


def summarize(reports: Sequence[TrialReport]) -> MetricsSummary:
    if not reports:
        raise ValidationError("no trials to summarize")
    loo = np.array([r.loo for r in reports])
    alpha = np.array([r.alpha_tilde for r in reports])
    miss = np.array([not r.hit for r in reports], dtype=float)
    miscov = float(miss.mean())
    mean_alpha = float(alpha.mean())
    counts: dict[str, int] = {}
    for r in reports:
        for f in r.flags:
            counts[f] = counts.get(f, 0) + 1
    flags = ()
    if len(reports) == 1:
        std = 0.0
        flags = (SINGLE_TRIAL,)
    else:
        std = float(loo.std(ddof=1))
    return MetricsSummary(
        miscov=miscov,
        mean_alpha_tilde=mean_alpha,
        mse=float(np.mean((loo - mean_alpha) ** 2)),
        gap=float(np.mean(np.abs(loo - miscov))),
        std=std,
        m=len(reports),
        mean_loo=float(loo.mean()),
        mean_corrected=float(np.mean([r.corrected for r in reports])),
        flag_counts=dict(sorted(counts.items())),
        flags=flags,
    )


@dataclass(frozen=True)
class _Job:
    table: ScoreTable
    features: FeatureMatrix | None
    rule: SizeRule
    transform: Transform
    n: int
    seed: int
    label_probs: np.ndarray | None
    verify_oracle: bool
    grid_step: float


def _run_trial(job: _Job, t: int) -> TrialReport:
    rng = trial_rng(job.seed, t)
    split = split_sample(job.table.num_samples, job.n, rng)
    out = run_stbcp(
        job.table, split, job.rule, job.transform,
        features=job.features, label_probs=job.label_probs,
    )
    flags = list(out.flags)
    if job.verify_oracle:
        inf = alpha_tilde_infimum(
            job.table, split, job.rule, job.transform, job.grid_step,
            features=job.features, label_probs=job.label_probs,
        )
        if abs(inf - out.alpha_tilde) > 2 * job.grid_step:
            flags.append(ORACLE_MISMATCH)
    y = int(job.table.true_labels[split.test_index])
    return TrialReport(
        trial_index=t,
        alpha_tilde=out.alpha_tilde,
        loo=out.loo_estimate,
        corrected=out.corrected_estimate,
        hit=y in out.set,
        set_size=len(out.set),
        t_test=out.t_test,
        flags=tuple(flags),
    )


def _run_chunk(job: _Job, trials: list[int]) -> list[TrialReport]:
    return [_run_trial(job, t) for t in trials]


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError as exc:
            raise ValidationError(f"{WORKERS_ENV}={raw!r} is not an integer") from exc
    return max(1, workers)


def run_experiment(
    table: ScoreTable,
    features: FeatureMatrix | None,
    rule: SizeRule,
    transform: Transform,
    n: int,
    m: int,
    seed: int,
    *,
    label_probs: np.ndarray | None = None,
    workers: int | None = None,
    verify_oracle: bool = False,
    grid_step: float = 1e-5,
) -> tuple[list[TrialReport], MetricsSummary]:
    """M independent splits, trial t seeded from (seed, t).

    Results do not depend on the worker count: each trial owns its stream
    and reports are folded back in trial order.
    """
    if n < 2:
        raise ValidationError("n must be at least 2")
    if m < 1:
        raise ValidationError("m must be at least 1")
    if n + 1 > table.num_samples:
        raise InsufficientData(f"need n+1={n + 1} rows, have {table.num_samples}")
    rule.validate(table.num_labels)
    job = _Job(table, features, rule, transform, n, seed, label_probs, verify_oracle, grid_step)
    workers = worker_count(workers)
    if workers == 1 or m < 2 * workers:
        reports = _run_chunk(job, list(range(m)))
    else:
        chunks = [list(range(w, m, workers)) for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, [job] * workers, chunks))
        reports = sorted((r for part in parts for r in part), key=lambda r: r.trial_index)
    return reports, summarize(reports)


def taylor_diagnostic(reports: Sequence[TrialReport]) -> float:
    """Sample covariance of the miss indicator and 1/alpha_tilde."""
    if len(reports) < 2:
        raise ValidationError("need at least two trials")
    alpha = np.array([r.alpha_tilde for r in reports])
    if np.any(alpha <= 0):
        raise ValidationError("alpha_tilde must be positive")
    inv = 1.0 / alpha
    if np.ptp(inv) == 0:
        return 0.0
    miss = np.array([not r.hit for r in reports], dtype=float)
    return float(np.cov(miss, inv, ddof=1)[0, 1])


class SweepRow(NamedTuple):
    n: int
    mse: float
    std: float


class SweepResult(NamedTuple):
    rows: list[SweepRow]
    slope: float

    def mse_strictly_decreasing(self) -> bool:
        mse = [r.mse for r in self.rows]
        return all(b < a for a, b in zip(mse, mse[1:]))


def loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    x, y = np.log(np.asarray(ns, dtype=float)), np.log(np.asarray(values, dtype=float))
    return float(np.polyfit(x, y, 1)[0])


def consistency_sweep(
    spec: GeneratorSpec,
    rule: SizeRule,
    transform: Transform,
    n_list: Sequence[int],
    m: int,
    seed: int,
    *,
    workers: int | None = None,
) -> SweepResult:
    """MSE and STD of the LOO estimate across calibration sizes.

    One pool of ``spec.size`` rows is generated and every n samples from it;
    the pool should be much larger than ``max(n_list)``.
    """
    n_list = list(n_list)
    if n_list != sorted(n_list):
        raise ValidationError("n_list must be ascending")
    data = generate(spec)
    rows = []
    for n in n_list:
        _, s = run_experiment(
            data.table, data.features, rule, transform, n, m, seed,
            label_probs=data.oracle.probabilities if transform.needs_oracle else None,
            workers=workers,
        )
        rows.append(SweepRow(n, s.mse, s.std))
    slope = loglog_slope([r.n for r in rows], [r.mse for r in rows]) if len(rows) > 1 else math.nan
    return SweepResult(rows, slope)


# -- artifacts ---------------------------------------------------------------

TRIAL_COLUMNS = ("trial", "alpha_tilde", "loo", "corrected", "hit", "set_size", "flags")


def write_trials_csv(reports: Sequence[TrialReport], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_COLUMNS)
        for r in reports:
            w.writerow([
                r.trial_index, repr(r.alpha_tilde), repr(r.loo), repr(r.corrected),
                int(r.hit), r.set_size, ";".join(r.flags),
            ])


def write_metrics_json(summary: MetricsSummary, path: str | Path, extra: dict | None = None) -> None:
    payload = summary.to_dict()
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
