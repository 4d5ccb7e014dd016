"""Toolkit for training fair classifiers over fixed feature representations.

Implements balanced training (instance reweighting and corpus
down-sampling), a demographic-gated architecture with inference-time soft
gating, iterative nullspace projection, and the fairness metrics needed to
evaluate all of them.
"""

__version__ = "0.1.0"

from .balance import BalanceKind, BalanceObjective, compute_weights, downsample, skew_target
from .data import (
    Dataset,
    JointDistribution,
    SyntheticConfig,
    empirical_joint,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split,
)
from .inlp import (
    LinearProbe,
    ProjectionStack,
    apply_projection,
    fit_linear_probe,
    inlp_pipeline,
    nullspace_projection,
    run_inlp,
)
from .metrics import (
    EvalRecord,
    FairnessReport,
    accuracy,
    aggregate,
    make_report,
    rms_gap,
    tpr_gap_per_class,
    tradeoff,
)
from .model import (
    MLP,
    GatedModel,
    GatePolicy,
    bayes_average,
    build_gated_model,
    build_mlp,
    forward_gated,
    forward_standard,
    gate_onehot,
    gate_soft,
    gate_uniform,
    load_model,
    predict,
    save_model,
)
from .train import TrainConfig, train, weighted_cross_entropy
from .tuning import SearchSpace, SelectionRule, alpha_beta_sweep, grid_search, select_coefficients
