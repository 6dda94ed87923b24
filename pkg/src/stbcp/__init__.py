"""Backward conformal prediction with symmetric, data-dependent score transforms."""

from .data import (
    CalibrationSplit,
    FeatureMatrix,
    LabelDistribution,
    ScoreTable,
    load_feature_matrix,
    load_score_table,
    save_feature_matrix,
    save_score_table,
    split_sample,
    trial_rng,
)
from .engine import (
    EVariableGrid,
    PredictionOutcome,
    alpha_tilde_closed,
    alpha_tilde_infimum,
    corrected_loo_estimate,
    e_variable,
    e_variable_grid,
    loo_estimate,
    prediction_set,
    pseudo_alpha,
    run_stbcp,
    transformed_calibration_scores,
)
from .size_rules import (
    BinningParams,
    ConstantRule,
    DataFeatureEntropyRule,
    FeatureEntropyRule,
    SizeRule,
    parse_rule,
)
from .threshold import w_classification, w_regression
from .transforms import IW, Identity, IRo, IWEps, OptimalOracle, improve, parse_transform

__version__ = "0.1.0"
