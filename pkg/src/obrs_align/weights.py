"""Per-token correction weights and surrogate losses.

Pipeline (two passes, associative aggregations so callers may shard):

1. per-token ``z_topk_approx`` and keyed Bernoulli masks -> batch ``kappa``;
2. per-token weights with the frozen ``kappa``:
   ``w_obrs = z_corrected * max(lam, p_tgt/p_inf)`` and
   ``rho = min(w_obrs, c1) * min(p_ref/p_new, c2)``,
   applied as stop-gradient coefficients on the PPO-clip surrogate.

``p_inf`` is the rollout (actor) distribution, ``p_ref`` the PPO reference
snapshot, ``p_new`` the latest policy; the masking/reweighting target is
``p_new`` or ``p_ref`` per ``JackpotConfig.target_policy``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .categorical import Categorical, SparseTopK, kl_divergence
from .obrs import ObrsParams
from .rng import keyed_uniform
from .zestimate import BatchCalibration, calibrate, z_topk_approx

__all__ = [
    "TargetPolicy",
    "TokenRecord",
    "JackpotConfig",
    "TokenWeights",
    "LossConfig",
    "default_c2",
    "bernoulli_mask",
    "jackpot_weight",
    "jackpot_rho_composed",
    "tis_weight",
    "tis_adjusted_weight",
    "bidirectional_truncation",
    "ppo_clip_term",
    "batch_weights_pipeline",
    "ppo_obrs_loss",
    "ppo_plain_loss",
    "ppo_obrs_objective_frozen",
    "ppo_obrs_grad_logp_new",
    "distill_loss",
    "distill_grad_logits",
    "grpo_advantages",
    "joint_objective",
]

#: Tolerance for a top-k entry disagreeing with its record's scalar log-prob
#: (matches the trace format's serving-engine rounding tolerance).
_TOPK_CONSISTENCY_TOL = 1e-6


class TargetPolicy(str, enum.Enum):
    """Which policy the mask/weights should steer accepted tokens toward."""

    REFERENCE = "reference"
    LATEST = "latest"


def _check_logp(name: str, value: float) -> None:
    if not (math.isfinite(value) and value <= 0):
        raise ValueError(f"{name} must be finite and <= 0, got {value}")


@dataclass(frozen=True)
class TokenRecord:
    """One sampled token with the log-probs and side info the pipeline needs."""

    token_id: int
    logp_inf: float
    logp_ref: float
    logp_new: float
    topk_inf: SparseTopK
    topk_new: SparseTopK
    advantage: float
    group_id: int
    position: int
    trajectory_id: int

    def __post_init__(self) -> None:
        _check_logp("logp_inf", self.logp_inf)
        _check_logp("logp_ref", self.logp_ref)
        _check_logp("logp_new", self.logp_new)
        if not math.isfinite(self.advantage):
            raise ValueError(f"advantage must be finite, got {self.advantage}")
        if self.token_id < 0 or self.position < 0 or self.trajectory_id < 0:
            raise ValueError("token_id, position, trajectory_id must be non-negative")
        # The sampled token's own entry, when present in a top-k list, must
        # agree with the scalar log-prob (validated, not assumed).
        for label, topk, scalar in (
            ("topk_inf", self.topk_inf, self.logp_inf),
            ("topk_new", self.topk_new, self.logp_new),
        ):
            hit = np.nonzero(topk.token_ids == self.token_id)[0]
            if hit.size and abs(float(topk.log_probs[hit[0]]) - scalar) > _TOPK_CONSISTENCY_TOL:
                raise ValueError(
                    f"{label} lists token {self.token_id} at "
                    f"{float(topk.log_probs[hit[0]])!r} but the record says {scalar!r}"
                )


def default_c2(eps_high: float) -> float:
    """The c2 default: slightly above the upper clip edge 1 + eps_high."""
    return 1.28 if eps_high == 0.28 else 1.0 + eps_high + 0.05


@dataclass(frozen=True)
class JackpotConfig:
    """Knobs for masking and reweighting."""

    lam: float = 1.0
    c1: float = 3.0
    c2: float = 1.28
    top_k: int = 20
    target_policy: TargetPolicy = TargetPolicy.LATEST
    mask_seed: int = 0

    def __post_init__(self) -> None:
        ObrsParams(self.lam)  # reuse its validation of lam
        if self.c1 < 1 or self.c2 < 1:
            raise ValueError(f"c1 and c2 must be >= 1, got {self.c1}, {self.c2}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        object.__setattr__(self, "target_policy", TargetPolicy(self.target_policy))


@dataclass(frozen=True)
class LossConfig:
    """PPO clip radii, TIS truncation constant, and distillation weight."""

    eps_low: float = 0.2
    eps_high: float = 0.28
    tis_c: float = 3.0
    lambda_distill: float = 1.0

    def __post_init__(self) -> None:
        if not (0 < self.eps_low < 1 and 0 < self.eps_high < 1):
            raise ValueError(f"clip radii must lie in (0, 1), got {self.eps_low}, {self.eps_high}")
        if self.tis_c < 1:
            raise ValueError(f"tis_c must be >= 1, got {self.tis_c}")
        if self.lambda_distill < 0:
            raise ValueError(f"lambda_distill must be >= 0, got {self.lambda_distill}")


@dataclass(frozen=True)
class TokenWeights:
    """Everything the surrogate needs about one token, all stop-gradient.

    ``tis_weight``/``tis_adjusted_weight`` are the baseline weights computed
    with the same truncation constant ``c1``.
    """

    mask: int
    accept_prob: float
    z_corrected: float
    w_obrs: float
    rho: float
    tis_weight: float
    tis_adjusted_weight: float

    def __post_init__(self) -> None:
        if self.mask not in (0, 1):
            raise ValueError(f"mask must be 0 or 1, got {self.mask}")
        for name in ("accept_prob", "z_corrected", "w_obrs", "rho", "tis_weight",
                     "tis_adjusted_weight"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"{name} must be finite, got {value}")


def _clamped_exp_scalar(exponent: float) -> float:
    return math.exp(min(max(exponent, -700.0), 700.0))


def _target_logp(rec: TokenRecord, cfg: JackpotConfig) -> float:
    return rec.logp_new if cfg.target_policy is TargetPolicy.LATEST else rec.logp_ref


def bernoulli_mask(rec: TokenRecord, cfg: JackpotConfig) -> tuple[int, float]:
    """Keyed Bernoulli(min(1, p_tgt/(lam * p_inf))) draw for one token.

    The uniform is keyed by (mask_seed, trajectory_id, position), so the draw
    is identical no matter how the batch is sharded or ordered.
    """
    exponent = _target_logp(rec, cfg) - rec.logp_inf - math.log(cfg.lam)
    accept = min(1.0, _clamped_exp_scalar(exponent))
    u = keyed_uniform(cfg.mask_seed, rec.trajectory_id, rec.position)
    return (1 if u < accept else 0), accept


def jackpot_weight(rec: TokenRecord, cfg: JackpotConfig, z_corrected: float) -> TokenWeights:
    """All per-token weights given the (kappa-corrected) normalizer."""
    if not (z_corrected > 0 and math.isfinite(z_corrected)):
        raise ValueError(f"z_corrected must be positive and finite, got {z_corrected}")
    mask, accept = bernoulli_mask(rec, cfg)
    ratio_tgt_inf = _clamped_exp_scalar(_target_logp(rec, cfg) - rec.logp_inf)
    w_obrs = z_corrected * max(cfg.lam, ratio_tgt_inf)
    rho = min(w_obrs, cfg.c1) * min(_clamped_exp_scalar(rec.logp_ref - rec.logp_new), cfg.c2)
    return TokenWeights(
        mask=mask,
        accept_prob=accept,
        z_corrected=z_corrected,
        w_obrs=w_obrs,
        rho=rho,
        tis_weight=tis_weight(rec.logp_ref, rec.logp_inf, cfg.c1),
        tis_adjusted_weight=tis_adjusted_weight(rec.logp_new, rec.logp_inf, cfg.c1),
    )


def jackpot_rho_composed(rec: TokenRecord, cfg: JackpotConfig, z_corrected: float) -> float:
    """Variant rho: truncate w_obrs, then multiply by the *uncapped* p_ref/p_tgt.

    This is the composed form (apply F to p_tgt/p'_inf, then change measure to
    p_ref); the primary :func:`jackpot_weight` caps the two factors separately.
    The two differ only when a cap binds.
    """
    if not (z_corrected > 0 and math.isfinite(z_corrected)):
        raise ValueError(f"z_corrected must be positive and finite, got {z_corrected}")
    logp_tgt = _target_logp(rec, cfg)
    w_obrs = z_corrected * max(cfg.lam, _clamped_exp_scalar(logp_tgt - rec.logp_inf))
    return min(w_obrs, cfg.c1) * _clamped_exp_scalar(rec.logp_ref - logp_tgt)


def tis_weight(logp_ref: float, logp_inf: float, c: float) -> float:
    """Truncated importance weight min(p_ref/p_inf, c)."""
    if c < 1:
        raise ValueError(f"truncation constant must be >= 1, got {c}")
    if not (math.isfinite(logp_ref) and math.isfinite(logp_inf)):
        raise ValueError("log-probs must be finite")
    return min(_clamped_exp_scalar(logp_ref - logp_inf), c)


def tis_adjusted_weight(logp_new_detached: float, logp_inf: float, c: float) -> float:
    """TIS with the detached latest policy in place of the reference.

    Intended for use with the ratio clip re-centered at the detached latest
    policy (the surrogate's internal ratio becomes p_new/p_new_detached).
    """
    return tis_weight(logp_new_detached, logp_inf, c)


def bidirectional_truncation(ratio: float, alpha: float, beta: float) -> float:
    """Third F variant: keep the ratio inside [alpha, beta], else drop to 0."""
    if not 0 <= alpha <= beta:
        raise ValueError(f"need 0 <= alpha <= beta, got {alpha}, {beta}")
    return ratio if alpha <= ratio <= beta else 0.0


def ppo_clip_term(ratio: float, advantage: float, eps_low: float, eps_high: float) -> float:
    """min(ratio * A, clip(ratio, 1 - eps_low, 1 + eps_high) * A)."""
    if not ratio > 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    clipped = min(max(ratio, 1.0 - eps_low), 1.0 + eps_high)
    return min(ratio * advantage, clipped * advantage)


def batch_weights_pipeline(
    batch: list[TokenRecord],
    cfg: JackpotConfig,
    kappa: float | None = None,
) -> tuple[list[TokenWeights], BatchCalibration]:
    """Two-pass weight computation for a batch of records.

    Pass 1 aggregates masks and top-k normalizer estimates into the batch
    calibration; pass 2 computes per-token weights with the frozen kappa.
    ``kappa`` overrides the calibrated value (for pipelines that computed it
    over a larger population); the returned calibration still reports the
    batch statistics.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    params = ObrsParams(cfg.lam)
    z_values = [z_topk_approx(rec.topk_inf, rec.topk_new, params).z_approx for rec in batch]
    accepted = sum(bernoulli_mask(rec, cfg)[0] for rec in batch)
    if kappa is None:
        calib = calibrate(z_values, proposed=len(batch), accepted=accepted)
    else:
        if not (kappa > 0 and math.isfinite(kappa)):
            raise ValueError(f"kappa must be positive and finite, got {kappa}")
        calib = BatchCalibration(
            proposed=len(batch),
            accepted=accepted,
            alpha_hat=accepted / len(batch),
            mean_z_approx=float(np.mean(z_values)),
            kappa=kappa,
        )
    weights = [jackpot_weight(rec, cfg, calib.kappa * z) for rec, z in zip(batch, z_values)]
    return weights, calib


def ppo_obrs_loss(
    batch: list[TokenRecord],
    cfg: JackpotConfig,
    lcfg: LossConfig,
    kappa: float | None = None,
    average_over_all: bool = False,
) -> tuple[float, list[TokenWeights], BatchCalibration]:
    """Masked, rho-weighted PPO-clip objective (a quantity to maximize).

    ``rho`` and the mask are stop-gradient: differentiation treats them as
    constants.  Masked tokens contribute 0; by default they are also excluded
    from the averaging denominator (``average_over_all`` switches to dividing
    by the full batch size).
    """
    weights, calib = batch_weights_pipeline(batch, cfg, kappa=kappa)
    survivors = sum(w.mask for w in weights)
    if survivors == 0:
        raise ValueError("empty effective batch: every token was masked")
    terms = [
        w.mask * w.rho * ppo_clip_term(
            _clamped_exp_scalar(rec.logp_new - rec.logp_ref),
            rec.advantage,
            lcfg.eps_low,
            lcfg.eps_high,
        )
        for rec, w in zip(batch, weights)
    ]
    denom = len(batch) if average_over_all else survivors
    return sum(terms) / denom, weights, calib


def ppo_plain_loss(batch: list[TokenRecord], lcfg: LossConfig) -> float:
    """Uncorrected PPO-clip objective, averaged over all tokens."""
    if not batch:
        raise ValueError("batch must be non-empty")
    terms = [
        1 * 1.0 * ppo_clip_term(
            _clamped_exp_scalar(rec.logp_new - rec.logp_ref),
            rec.advantage,
            lcfg.eps_low,
            lcfg.eps_high,
        )
        for rec in batch
    ]
    return sum(terms) / len(batch)


def ppo_obrs_objective_frozen(
    logp_new: np.ndarray,
    batch: list[TokenRecord],
    weights: list[TokenWeights],
    lcfg: LossConfig,
    average_over_all: bool = False,
) -> float:
    """The surrogate as a function of the logp_new vector with frozen weights.

    This is the stop-gradient contract made executable: rho and the mask come
    from ``weights`` (computed at the reference point) and do not respond to
    the perturbed ``logp_new``.  Used by the finite-difference gradient check.
    """
    survivors = sum(w.mask for w in weights)
    if survivors == 0:
        raise ValueError("empty effective batch: every token was masked")
    terms = [
        w.mask * w.rho * ppo_clip_term(
            _clamped_exp_scalar(float(lpn) - rec.logp_ref),
            rec.advantage,
            lcfg.eps_low,
            lcfg.eps_high,
        )
        for rec, w, lpn in zip(batch, weights, logp_new)
    ]
    denom = len(batch) if average_over_all else survivors
    return sum(terms) / denom


def ppo_obrs_grad_logp_new(
    logp_new: np.ndarray,
    batch: list[TokenRecord],
    weights: list[TokenWeights],
    lcfg: LossConfig,
    average_over_all: bool = False,
) -> np.ndarray:
    """Analytic d(objective)/d(logp_new_i) under the stop-gradient contract.

    The clip term's derivative w.r.t. logp_new is ``A * r`` on the unclipped
    branch (including the interior of the clip band, where both branches
    coincide) and 0 where the clipped branch is strictly active.
    """
    survivors = sum(w.mask for w in weights)
    if survivors == 0:
        raise ValueError("empty effective batch: every token was masked")
    denom = len(batch) if average_over_all else survivors
    grad = np.zeros(len(batch))
    for i, (rec, w, lpn) in enumerate(zip(batch, weights, logp_new)):
        ratio = _clamped_exp_scalar(float(lpn) - rec.logp_ref)
        unclipped = ratio * rec.advantage
        clipped = min(max(ratio, 1.0 - lcfg.eps_low), 1.0 + lcfg.eps_high) * rec.advantage
        active = (1.0 - lcfg.eps_low < ratio < 1.0 + lcfg.eps_high) or unclipped <= clipped
        if active:
            grad[i] = w.mask * w.rho * rec.advantage * ratio / denom
    return grad


def distill_loss(p_new: Categorical, p_omega: Categorical) -> float:
    """Forward KL(stop_grad(p_new) || p_omega); gradient flows through p_omega only."""
    return kl_divergence(p_new, p_omega)


def distill_grad_logits(p_new: Categorical, p_omega: Categorical) -> np.ndarray:
    """d distill_loss / d z where p_omega = softmax(z): equals p_omega - p_new."""
    if p_new.vocab_size != p_omega.vocab_size:
        raise ValueError(f"vocab mismatch: {p_new.vocab_size} vs {p_omega.vocab_size}")
    return p_omega.probs - p_new.probs


def grpo_advantages(rewards, group_ids) -> np.ndarray:
    """Group-normalized advantages (r - group mean)/max(group std, 1e-6)."""
    r = np.asarray(rewards, dtype=np.float64)
    g = np.asarray(group_ids)
    if r.shape != g.shape or r.ndim != 1:
        raise ValueError("rewards and group_ids must be 1-D and the same length")
    out = np.empty_like(r)
    for gid in np.unique(g):
        sel = g == gid
        members = r[sel]
        if members.size < 2:
            raise ValueError(f"group {gid} has size {members.size}; need >= 2")
        out[sel] = (members - members.mean()) / max(float(members.std()), 1e-6)
    return out


def joint_objective(policy_loss: float, rollout_loss: float, distill: float,
                    lcfg: LossConfig) -> float:
    """policy term + rollout term + lambda_distill * distillation term."""
    values = (policy_loss, rollout_loss, distill)
    if not all(math.isfinite(v) for v in values):
        raise ValueError(f"joint objective inputs must be finite, got {values}")
    return policy_loss + rollout_loss + lcfg.lambda_distill * distill
