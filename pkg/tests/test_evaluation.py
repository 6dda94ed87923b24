import math

import numpy as np
import pytest

from stbcp.data import ScoreTable
from stbcp.errors import InsufficientData, ValidationError
from stbcp.evaluation import (
    ORACLE_MISMATCH,
    SINGLE_TRIAL,
    TrialReport,
    consistency_sweep,
    loglog_slope,
    run_experiment,
    summarize,
    taylor_diagnostic,
    write_trials_csv,
)
from stbcp.size_rules import BinningParams, ConstantRule, DataFeatureEntropyRule
from stbcp.synth import DirichletSoftmax, GeneratorSpec, generate
from stbcp.transforms import IW, Identity


def _report(i, alpha, loo, hit):
    return TrialReport(i, alpha, loo, loo, hit, 1, 1)


def test_metric_formulas():
    reps = [_report(0, 0.2, 0.1, True), _report(1, 0.4, 0.3, False), _report(2, 0.3, 0.2, True)]
    s = summarize(reps)
    assert s.miscov == pytest.approx(1 / 3)
    assert s.mean_alpha_tilde == pytest.approx(0.3)
    assert s.mse == pytest.approx(((0.1 - 0.3) ** 2 + 0 + (0.2 - 0.3) ** 2) / 3)
    assert s.gap == pytest.approx((abs(0.1 - 1 / 3) + abs(0.3 - 1 / 3) + abs(0.2 - 1 / 3)) / 3)
    assert s.std == pytest.approx(np.std([0.1, 0.3, 0.2], ddof=1))


def test_single_trial():
    s = summarize([_report(0, 0.2, 0.2, True)])
    assert s.mse == 0 and s.std == 0 and SINGLE_TRIAL in s.flags


def test_constant_reports():
    s = summarize([_report(i, 0.25, 0.25, False) for i in range(5)])
    assert s.std == 0 and s.gap == pytest.approx(0.75)


def test_metrics_permutation_invariant(rng):
    reps = [_report(i, *rng.uniform(0.05, 0.9, 2), bool(rng.random() < 0.5)) for i in range(50)]
    a = summarize(reps)
    b = summarize([reps[i] for i in rng.permutation(50)])
    assert a.miscov == b.miscov
    for f in ("mse", "gap", "std", "mean_alpha_tilde"):
        assert getattr(a, f) == pytest.approx(getattr(b, f), rel=1e-12)


def test_taylor_diagnostic():
    assert taylor_diagnostic([_report(i, 0.2, 0.2, i % 2 == 0) for i in range(6)]) == 0.0
    rng = np.random.default_rng(0)
    m = 20000
    reps = [_report(i, rng.uniform(0.1, 0.9), 0.3, bool(rng.random() < 0.5)) for i in range(m)]
    inv = np.array([1 / r.alpha_tilde for r in reps])
    se = inv.std() * 0.5 / math.sqrt(m)
    assert abs(taylor_diagnostic(reps)) < 3 * se
    with pytest.raises(ValidationError):
        taylor_diagnostic(reps[:1])


@pytest.fixture(scope="module")
def sharp():
    return generate(GeneratorSpec(DirichletSoftmax(num_labels=8, temperature=0.3), 3000, 0))


def test_experiment_deterministic_and_worker_independent(sharp):
    a, sa = run_experiment(sharp.table, sharp.features, ConstantRule(2), IW(), 50, 12, 9, workers=1)
    b, sb = run_experiment(sharp.table, sharp.features, ConstantRule(2), IW(), 50, 12, 9, workers=3)
    assert a == b and sa == sb


def test_identity_and_iw_same_miscov(sharp):
    _, a = run_experiment(sharp.table, sharp.features, ConstantRule(2), Identity(), 100, 150, 3)
    _, b = run_experiment(sharp.table, sharp.features, ConstantRule(2), IW(), 100, 150, 3)
    assert a.miscov == b.miscov


def test_low_coverage_taylor_sign(sharp):
    reps, _ = run_experiment(sharp.table, sharp.features, ConstantRule(1), IW(), 100, 400, 5)
    assert taylor_diagnostic(reps) < 0


def test_verify_oracle_flag(sharp):
    rule = DataFeatureEntropyRule(BinningParams(1, 4), k=5)
    reps, s = run_experiment(sharp.table, sharp.features, rule, IW(), 15, 8, 1, verify_oracle=True)
    assert ORACLE_MISMATCH not in s.flag_counts
    assert all(r.set_size <= r.t_test for r in reps)


def test_experiment_errors(sharp):
    with pytest.raises(InsufficientData):
        run_experiment(sharp.table, None, ConstantRule(1), IW(), 5000, 2, 0)
    with pytest.raises(ValidationError):
        run_experiment(sharp.table, None, ConstantRule(1), IW(), 10, 0, 0)


def test_trials_csv_bytes_stable(tmp_path, sharp):
    for name in ("a.csv", "b.csv"):
        reps, _ = run_experiment(sharp.table, None, ConstantRule(2), IW(), 30, 5, 4)
        write_trials_csv(reps, tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    head = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert head == "trial,alpha_tilde,loo,corrected,hit,set_size,flags"


def test_loglog_slope():
    ns = [50, 100, 200, 400]
    assert loglog_slope(ns, [3.0 / n for n in ns]) == pytest.approx(-1.0)


def test_small_sweep():
    spec = GeneratorSpec(DirichletSoftmax(num_labels=6, temperature=0.3), 8000, 1)
    res = consistency_sweep(spec, ConstantRule(2), IW(), [40, 160], 150, 2)
    assert res.rows[1].mse < res.rows[0].mse
    with pytest.raises(ValidationError):
        consistency_sweep(spec, ConstantRule(2), IW(), [160, 40], 5, 2)
