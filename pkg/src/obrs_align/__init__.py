"""Budgeted rejection-sampling alignment toolkit.

Core pieces:

- :mod:`obrs_align.categorical`: log-space categorical distributions, KL/TV,
  top-k views, Dirichlet pair generation;
- :mod:`obrs_align.obrs`: the budgeted acceptance rule min(1, p/(lam q)), its
  kept distribution and normalizer, the budget -> lam solver, contraction
  curves, and a rejection sampler;
- :mod:`obrs_align.zestimate`: top-k normalizer estimates and batch kappa
  calibration;
- :mod:`obrs_align.weights`: per-token masks and correction weights, clipped
  surrogate losses, GRPO advantages, distillation losses;
- :mod:`obrs_align.oracles`: brute-force optimality verification;
- :mod:`obrs_align.simlab`: Dirichlet sweep experiments;
- :mod:`obrs_align.toy_rl`: desk-scale decoupled actor/policy RL testbed;
- :mod:`obrs_align.trace` / :mod:`obrs_align.runconfig` /
  :mod:`obrs_align.cli`: file formats and the command-line surface.
"""

from .categorical import (
    Categorical,
    SimPairConfig,
    SparseTopK,
    dirichlet_pair,
    from_logits,
    kl_divergence,
    make_categorical,
    top_k,
    total_variation,
)
from .obrs import (
    KlCurvePoint,
    ObrsParams,
    PostRejection,
    accept_prob,
    batch_z_complement,
    kl_curve,
    obrs_sample,
    post_rejection,
    solve_lambda_for_budget,
)
from .oracles import (
    AcceptanceRule,
    OptimalityReport,
    finite_difference_gradient,
    near_optimal_rules,
    obrs_rule,
    oracle_optimal_rule,
    verify_obrs_optimality,
)
from .simlab import SweepConfig, SweepRow, sweep_acceptance_vs_kl, sweep_kl_reduction
from .toy_rl import (
    RunMetrics,
    Scheme,
    SchemeName,
    ToyModel,
    ToyTask,
    TrainParams,
    train,
    train_single,
)
from .weights import (
    JackpotConfig,
    LossConfig,
    TargetPolicy,
    TokenRecord,
    TokenWeights,
    batch_weights_pipeline,
    bernoulli_mask,
    default_c2,
    distill_loss,
    grpo_advantages,
    jackpot_weight,
    joint_objective,
    ppo_clip_term,
    ppo_obrs_loss,
    tis_adjusted_weight,
    tis_weight,
)
from .zestimate import BatchCalibration, ZEstimate, calibrate, z_topk_approx

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Categorical",
    "SparseTopK",
    "SimPairConfig",
    "make_categorical",
    "from_logits",
    "kl_divergence",
    "total_variation",
    "top_k",
    "dirichlet_pair",
    "ObrsParams",
    "PostRejection",
    "KlCurvePoint",
    "accept_prob",
    "post_rejection",
    "solve_lambda_for_budget",
    "kl_curve",
    "obrs_sample",
    "batch_z_complement",
    "ZEstimate",
    "BatchCalibration",
    "z_topk_approx",
    "calibrate",
    "TargetPolicy",
    "TokenRecord",
    "JackpotConfig",
    "LossConfig",
    "TokenWeights",
    "default_c2",
    "bernoulli_mask",
    "jackpot_weight",
    "tis_weight",
    "tis_adjusted_weight",
    "ppo_clip_term",
    "ppo_obrs_loss",
    "batch_weights_pipeline",
    "distill_loss",
    "grpo_advantages",
    "joint_objective",
    "AcceptanceRule",
    "OptimalityReport",
    "near_optimal_rules",
    "oracle_optimal_rule",
    "obrs_rule",
    "verify_obrs_optimality",
    "finite_difference_gradient",
    "SweepConfig",
    "SweepRow",
    "sweep_acceptance_vs_kl",
    "sweep_kl_reduction",
    "ToyTask",
    "ToyModel",
    "Scheme",
    "SchemeName",
    "TrainParams",
    "RunMetrics",
    "train",
    "train_single",
]
