"""Command line: ``stbcp predict | experiment | synth | verify``.

Configuration is a flat JSON object; command-line flags override it.
Example::

    {"score_path": "scores.csv", "rule": "constant", "t": 2,
     "transform": "iw", "n": 200, "m": 500, "seed": 0, "output_dir": "out"}
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .data import (
    CalibrationSplit,
    load_feature_matrix,
    load_score_table,
    save_feature_matrix,
    save_score_table,
    trial_rng,
)
from .engine import run_stbcp
from .errors import ConfigError, MissingFeatures, ParseError, StbcpError, ValidationError
from .evaluation import (
    ORACLE_MISMATCH,
    run_experiment,
    taylor_diagnostic,
    write_metrics_json,
    write_trials_csv,
)
from .size_rules import parse_rule
from .synth import GeneratorSpec, generate, kind_from_config
from .transforms import parse_transform
from .verify import SUITES, run_suite

log = logging.getLogger("stbcp")

RULE_KEYS = ("t", "t_min", "t_max", "p", "k", "reduced_dim", "en_min", "en_max")


@dataclass
class ExperimentConfig:
    score_path: str | None = None
    feature_path: str | None = None
    probs_path: str | None = None
    rule: str = "constant"
    t: int | None = None
    t_min: int | None = None
    t_max: int | None = None
    p: float | None = None
    k: int | None = None
    reduced_dim: int | None = None
    en_min: float | None = None
    en_max: float | None = None
    transform: str = "iw"
    n: int | None = None
    m: int = 500
    seed: int = 0
    grid_step: float = 1e-5
    output_dir: str | None = None

    def rule_config(self) -> dict:
        cfg = {"rule": self.rule}
        cfg.update({k: getattr(self, k) for k in RULE_KEYS if getattr(self, k) is not None})
        return cfg

    def validate(self) -> None:
        if not self.score_path:
            raise ConfigError("score_path is required")
        if self.n is not None and self.n < 2:
            raise ConfigError("n must be at least 2")
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if not 0 < self.grid_step <= 0.01:
            raise ConfigError("grid_step must lie in (0, 0.01]")
        try:
            tr = parse_transform(self.transform)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if tr.needs_oracle and not self.probs_path:
            raise ConfigError(
                f"transform {self.transform!r} needs exact label probabilities (probs_path); "
                "it is only available for synthetic data"
            )
        parse_rule(self.rule_config())


def load_config(path: str | None, overrides: dict) -> ExperimentConfig:
    raw: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    raw.update({k: v for k, v in overrides.items() if v is not None})
    cfg = ExperimentConfig(**raw)
    cfg.validate()
    return cfg


def load_probs(path: str, num_samples: int) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or not all(h.startswith("p_") for h in rows[0]):
        raise ParseError(f"{path}: expected header p_0..p_(K-1)")
    try:
        probs = np.array([[float(v) for v in r] for r in rows[1:]])
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if probs.shape[0] != num_samples:
        raise ValidationError(f"{path}: {probs.shape[0]} rows but {num_samples} score rows")
    return probs


def _inputs(cfg: ExperimentConfig):
    table = load_score_table(cfg.score_path)
    features = load_feature_matrix(cfg.feature_path, table.num_samples) if cfg.feature_path else None
    probs = load_probs(cfg.probs_path, table.num_samples) if cfg.probs_path else None
    rule = parse_rule(cfg.rule_config())
    rule.validate(table.num_labels)
    if rule.needs_features and features is None:
        raise MissingFeatures(f"rule {rule.kind!r} needs feature_path")
    return table, features, probs, rule, parse_transform(cfg.transform)


def _echo_config(cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(asdict(cfg), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_predict(cfg: ExperimentConfig, test_row: int) -> dict:
    table, features, probs, rule, tr = _inputs(cfg)
    if not 0 <= test_row < table.num_samples:
        raise ConfigError(f"test row {test_row} outside [0, {table.num_samples})")
    rest = np.delete(np.arange(table.num_samples), test_row)
    if cfg.n is not None:
        if cfg.n > rest.size:
            raise ConfigError(f"n={cfg.n} exceeds the {rest.size} available calibration rows")
        rest = np.sort(trial_rng(cfg.seed, 0).choice(rest, size=cfg.n, replace=False))
    split = CalibrationSplit(rest, test_row)
    out = run_stbcp(table, split, rule, tr, features=features, label_probs=probs)
    result = out.to_dict()
    if cfg.output_dir:
        d = Path(cfg.output_dir)
        _echo_config(cfg, d)
        (d / "prediction.json").write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
    return result


def cmd_experiment(cfg: ExperimentConfig, verify_oracle: bool = False) -> dict:
    if cfg.n is None:
        raise ConfigError("n is required for experiments")
    table, features, probs, rule, tr = _inputs(cfg)
    reports, summary = run_experiment(
        table, features, rule, tr, cfg.n, cfg.m, cfg.seed,
        label_probs=probs, verify_oracle=verify_oracle, grid_step=cfg.grid_step,
    )
    extra = {"taylor_cov": taylor_diagnostic(reports) if len(reports) > 1 else None}
    if verify_oracle:
        extra["oracle_mismatches"] = summary.flag_counts.get(ORACLE_MISMATCH, 0)
    if cfg.output_dir:
        d = Path(cfg.output_dir)
        _echo_config(cfg, d)
        write_trials_csv(reports, d / "trials.csv")
        write_metrics_json(summary, d / "metrics.json", extra)
    return {**summary.to_dict(), **extra}


def cmd_synth(kind_cfg: dict, size: int, seed: int, out_dir: str) -> dict:
    data = generate(GeneratorSpec(kind_from_config(kind_cfg), size, seed))
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    save_score_table(data.table, d / "scores.csv")
    save_feature_matrix(data.features, d / "features.csv")
    with (d / "probs.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"p_{y}" for y in range(data.table.num_labels)])
        for row in data.oracle.probabilities:
            w.writerow([repr(float(v)) for v in row])
    return {"scores": str(d / "scores.csv"), "features": str(d / "features.csv"),
            "probs": str(d / "probs.csv"), "size": size, "num_labels": data.table.num_labels}


def cmd_verify(suite: str, quick: bool = False, seed: int | None = None):
    return run_suite(suite, quick=quick, seed=seed)


# -- argument parsing --------------------------------------------------------

def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--score-path")
    p.add_argument("--feature-path")
    p.add_argument("--probs-path", help="exact label probabilities (synthetic data only)")
    p.add_argument("--rule", choices=["constant", "feature_entropy", "data_feature_entropy"])
    p.add_argument("--t", type=int, help="constant budget")
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--p", type=float, help="binning exponent")
    p.add_argument("--k", type=int, help="neighbours for the kNN rule")
    p.add_argument("--reduced-dim", type=int)
    p.add_argument("--en-min", type=float)
    p.add_argument("--en-max", type=float)
    p.add_argument("--transform", help="identity | iw | iro | iw_eps:<eps> | optimal_oracle")
    p.add_argument("--n", type=int, help="calibration size")
    p.add_argument("--m", type=int, help="number of trials")
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-step", type=float)
    p.add_argument("--output-dir")


def _overrides(args: argparse.Namespace) -> dict:
    keys = [f.name for f in fields(ExperimentConfig)]
    return {k: getattr(args, k) for k in keys if hasattr(args, k)}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stbcp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="prediction set for one test row")
    _add_config_flags(p)
    p.add_argument("--test-row", type=int, required=True)

    p = sub.add_parser("experiment", help="repeated random splits and metrics")
    _add_config_flags(p)
    p.add_argument("--verify-oracle", action="store_true",
                   help="cross-check every trial against the grid infimum")

    p = sub.add_parser("synth", help="write a synthetic score/feature/probability set")
    p.add_argument("--kind", default="dirichlet", choices=["iid", "dirichlet", "clustered"])
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="generator parameter, e.g. num_labels=10 or temperature=0.2")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("verify", help="run a property suite on synthetic data")
    p.add_argument("suite", choices=sorted(SUITES))
    p.add_argument("--quick", action="store_true", help="reduced sizes")
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true", help="print the JSON report only")
    return parser


def _parse_params(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"expected KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "predict":
            cfg = load_config(args.config, _overrides(args))
            print(json.dumps(cmd_predict(cfg, args.test_row)))
            return 0
        if args.command == "experiment":
            cfg = load_config(args.config, _overrides(args))
            result = cmd_experiment(cfg, args.verify_oracle)
            print(json.dumps(result, sort_keys=True))
            return 1 if result.get("oracle_mismatches") else 0
        if args.command == "synth":
            kind_cfg = {"kind": args.kind, **_parse_params(args.param)}
            print(json.dumps(cmd_synth(kind_cfg, args.size, args.seed, args.out_dir)))
            return 0
        if args.command == "verify":
            res = cmd_verify(args.suite, args.quick, args.seed)
            if args.json:
                print(json.dumps(res.to_dict()))
            else:
                for c in res.checks:
                    print(c.line())
                print(f"{args.suite}: {'PASS' if res.passed else 'FAIL'} ({res.seconds:.1f}s)")
            return 0 if res.passed else 1
    except (StbcpError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
