"""Distributed sparse regression with variance-weighted one-shot aggregation.

Workers fit a local adaptive lasso and ship two vectors (estimate and
precision diagonal); the master combines them coordinate by coordinate with
precision weights and sparsifies the result with an adaptive-L1 step.
"""

__version__ = "0.1.0"

from .aggregate import (
    AggregateResult,
    LocalSummary,
    VarianceEstimate,
    aggregate,
    confidence_intervals,
    delta_weights,
    full_ls_reference,
    select_nu_bic,
    simple_average,
    wave_point,
    wave_sparse,
)
from .datagen import GenConfig, generate, sample_ar1_row, true_beta
from .local import (
    AdaptiveWeights,
    KFoldCV,
    LocalBIC,
    adaptive_weights,
    estimate_lambda_diag,
    fit_local,
    fit_pre_estimate,
    select_lambda,
)
from .model import DataShard, Family, LossModel, TrueModel, linear_predict, loss_eval
from .runtime import (
    RunConfig,
    decode_summary,
    encode_summary,
    run_pipeline,
    shard_dataset,
)
from .solver import AdmmConfig, SolverState, solve_weighted_l1, soft_threshold

__all__ = [name for name in dir() if not name.startswith("_")]
