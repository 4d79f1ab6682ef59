"""Desk-scale decoupled actor/policy RL testbed.

A bigram policy (one logit row per (prompt, previous-token) context) trains on
rollouts generated by a separate actor model, optionally a lower-capacity
unigram (one row per prompt — context-free), synced only every ``staleness``
steps.  The gap between the two is exactly the off-policy mismatch the
correction schemes are supposed to fix, and tabular softmax models keep every
gradient analytic and exactly checkable.

Schemes:

- ``on_policy``: rollouts from the live policy, plain clipped surrogate;
- ``off_policy_stale``: stale mismatched rollouts, no correction;
- ``tis`` / ``tis_adjusted``: truncated importance weights (reference-based
  and detached-latest-policy-based);
- ``jackpot_mask_only`` / ``jackpot_reweight_only`` / ``jackpot_full``:
  keyed Bernoulli acceptance masking and/or the normalized OBRS weight rho;
- ``jackpot_full_plus_distill``: the full scheme plus actor-side training
  (clipped surrogate on its own rollouts and forward-KL distillation toward
  the frozen policy).

All randomness flows through the counter-based keyed RNG, so runs are
bitwise reproducible and masks are persistent per (trajectory, position).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .obrs import batch_z_complement
from .rng import fold, fold_array, uniform_array

__all__ = [
    "SchemeName",
    "ModelKind",
    "ToyTask",
    "ToyModel",
    "Scheme",
    "TrainParams",
    "ModelBundle",
    "ToyBatch",
    "StepMetrics",
    "RunMetrics",
    "COLLAPSE_FRACTION",
    "COLLAPSE_PATIENCE",
    "log_softmax",
    "rollout",
    "group_advantages",
    "surrogate_coefficients",
    "surrogate_value",
    "surrogate_gradient",
    "actor_objective_value",
    "actor_gradient",
    "distill_step",
    "visited_kl",
    "train",
    "train_single",
    "metrics_to_jsonl",
]

COLLAPSE_FRACTION = 0.1
COLLAPSE_PATIENCE = 20

_STREAM_ROLLOUT = 1
_STREAM_EVAL = 2
_STREAM_MASK = 3


class SchemeName(str, enum.Enum):
    ON_POLICY = "on_policy"
    OFF_POLICY_STALE = "off_policy_stale"
    TIS = "tis"
    TIS_ADJUSTED = "tis_adjusted"
    JACKPOT_MASK_ONLY = "jackpot_mask_only"
    JACKPOT_REWEIGHT_ONLY = "jackpot_reweight_only"
    JACKPOT_FULL = "jackpot_full"
    JACKPOT_FULL_PLUS_DISTILL = "jackpot_full_plus_distill"


class ModelKind(str, enum.Enum):
    UNIGRAM = "unigram"
    BIGRAM = "bigram"
    #: The actor *is* the live policy object (fully on-policy rollouts).
    POLICY = "policy"


@dataclass(frozen=True)
class ToyTask:
    """Hidden reward rule: count of a target token against a threshold.

    ``count_threshold`` is either one threshold for every prompt or a tuple
    with one threshold per prompt (a difficulty mixture, so that some prompt
    sits at the learning frontier at every skill level).  With ``parity`` on,
    the count must additionally share the prompt index's parity — a brittle
    rule that punishes distribution mismatch.
    """

    vocab_size: int = 32
    horizon: int = 16
    n_prompts: int = 8
    target_token: int = 0
    count_threshold: int | tuple[int, ...] = 2
    parity: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2 or self.horizon < 1 or self.n_prompts < 1:
            raise ValueError("vocab_size >= 2, horizon >= 1, n_prompts >= 1 required")
        if not 0 <= self.target_token < self.vocab_size:
            raise ValueError(f"target_token out of range: {self.target_token}")
        if isinstance(self.count_threshold, int):
            thresholds: tuple[int, ...] = (self.count_threshold,) * self.n_prompts
        else:
            thresholds = tuple(self.count_threshold)
            if len(thresholds) != self.n_prompts:
                raise ValueError(
                    f"count_threshold needs one entry per prompt: expected "
                    f"{self.n_prompts}, got {len(thresholds)}"
                )
            object.__setattr__(self, "count_threshold", thresholds)
        for t in thresholds:
            if not isinstance(t, int) or not 1 <= t <= self.horizon:
                raise ValueError(f"count_threshold out of range: {t}")

    def thresholds(self) -> np.ndarray:
        """Per-prompt thresholds as an array of length n_prompts."""
        if isinstance(self.count_threshold, int):
            return np.full(self.n_prompts, self.count_threshold, dtype=np.int64)
        return np.asarray(self.count_threshold, dtype=np.int64)

    def reward(self, prompt_idx: np.ndarray, tokens: np.ndarray) -> np.ndarray:
        """Binary reward per trajectory; tokens has shape (n, horizon)."""
        counts = np.sum(tokens == self.target_token, axis=1)
        ok = counts >= self.thresholds()[prompt_idx]
        if self.parity:
            ok = ok & ((counts % 2) == (prompt_idx % 2))
        return ok.astype(np.float64)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stable log-softmax along the last axis."""
    m = np.max(logits, axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


@dataclass
class ToyModel:
    """Tabular softmax model.

    unigram: logits[prompt, token]; bigram: logits[prompt, context, token]
    with context = previous token id, or vocab_size for begin-of-sequence.
    """

    kind: ModelKind
    logits: np.ndarray

    def __post_init__(self) -> None:
        self.kind = ModelKind(self.kind)
        self.logits = np.asarray(self.logits, dtype=np.float64)
        expected = 2 if self.kind is ModelKind.UNIGRAM else 3
        if self.logits.ndim != expected:
            raise ValueError(
                f"{self.kind.value} logits must be {expected}-D, got {self.logits.ndim}-D"
            )
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")

    @classmethod
    def zeros(cls, kind: ModelKind, task: ToyTask) -> "ToyModel":
        kind = ModelKind(kind)
        if kind is ModelKind.UNIGRAM:
            shape: tuple[int, ...] = (task.n_prompts, task.vocab_size)
        else:
            shape = (task.n_prompts, task.vocab_size + 1, task.vocab_size)
        return cls(kind=kind, logits=np.zeros(shape))

    def copy(self) -> "ToyModel":
        return ToyModel(kind=self.kind, logits=self.logits.copy())

    def log_rows(self, prompt_idx: np.ndarray, ctx_idx: np.ndarray) -> np.ndarray:
        """(n, vocab) log-prob rows for the given contexts."""
        if self.kind is ModelKind.UNIGRAM:
            return log_softmax(self.logits[prompt_idx])
        return log_softmax(self.logits[prompt_idx, ctx_idx])


@dataclass(frozen=True)
class Scheme:
    """A named correction scheme plus its staleness and GRPO group size."""

    name: SchemeName
    staleness: int = 1
    group_size: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(self, "name", SchemeName(self.name))
        if self.staleness < 1:
            raise ValueError(f"staleness must be >= 1, got {self.staleness}")
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")

    @property
    def uses_mask(self) -> bool:
        return self.name in (
            SchemeName.JACKPOT_MASK_ONLY,
            SchemeName.JACKPOT_FULL,
            SchemeName.JACKPOT_FULL_PLUS_DISTILL,
        )

    @property
    def uses_reweight(self) -> bool:
        return self.name in (
            SchemeName.JACKPOT_REWEIGHT_ONLY,
            SchemeName.JACKPOT_FULL,
            SchemeName.JACKPOT_FULL_PLUS_DISTILL,
        )

    @property
    def tis_mode(self) -> str | None:
        if self.name is SchemeName.TIS:
            return "reference"
        if self.name is SchemeName.TIS_ADJUSTED:
            return "adjusted"
        return None

    @property
    def uses_distill(self) -> bool:
        return self.name is SchemeName.JACKPOT_FULL_PLUS_DISTILL

    @property
    def default_actor_kind(self) -> ModelKind:
        return ModelKind.POLICY if self.name is SchemeName.ON_POLICY else ModelKind.UNIGRAM


@dataclass(frozen=True)
class TrainParams:
    """Everything train() needs beyond the scheme and the task."""

    lr_policy: float = 0.5
    lr_actor: float = 0.5
    lr_distill: float = 1.0
    lam: float = 1.0
    c1: float = 3.0
    c2: float = 1.28
    tis_c: float = 3.0
    lambda_distill: float = 1.0
    eps_low: float = 0.2
    eps_high: float = 0.28
    n_groups: int = 8
    n_distill: int = 1
    eval_trajectories: int = 64
    actor_kind: ModelKind | None = None

    def __post_init__(self) -> None:
        if self.lr_policy <= 0:
            raise ValueError("lr_policy must be positive")
        if min(self.lr_actor, self.lr_distill) < 0:
            raise ValueError("lr_actor and lr_distill must be >= 0")
        if self.lam <= 0 or self.c1 < 1 or self.c2 < 1 or self.tis_c < 1:
            raise ValueError("need lam > 0 and truncation constants >= 1")
        if self.lambda_distill < 0:
            raise ValueError("lambda_distill must be >= 0")
        if not 0 < self.eps_low < 1:
            raise ValueError("eps_low must lie in (0, 1)")
        if self.eps_high <= 0:
            raise ValueError("eps_high must be positive")
        if self.n_groups < 1 or self.eval_trajectories < 1:
            raise ValueError("n_groups and eval_trajectories must be >= 1")
        if self.n_distill < 1:
            raise ValueError("n_distill must be >= 1")
        if self.actor_kind is not None:
            object.__setattr__(self, "actor_kind", ModelKind(self.actor_kind))


@dataclass(frozen=True)
class ModelBundle:
    """The three distributions a training step sees.

    ``policy`` is live (theta), ``actor`` is the frozen rollout snapshot used
    to collect the batch, ``ref`` the frozen policy snapshot from collection
    time (the clipping anchor).
    """

    policy: ToyModel
    actor: ToyModel
    ref: ToyModel


@dataclass
class ToyBatch:
    """Flat per-token arrays for one training slice (length n = trajs * T)."""

    prompt_idx: np.ndarray
    ctx_idx: np.ndarray
    token_id: np.ndarray
    logp_inf: np.ndarray
    logp_ref: np.ndarray
    advantage: np.ndarray
    trajectory_id: np.ndarray
    position: np.ndarray
    mask_u: np.ndarray
    group_id: np.ndarray
    rewards: np.ndarray  # per trajectory, length n / T

    def __len__(self) -> int:
        return self.token_id.size


@dataclass(frozen=True)
class StepMetrics:
    step: int
    reward_mean: float
    kl_actor_policy: float
    acceptance_rate: float
    grad_norm: float
    collapsed: bool


@dataclass
class RunMetrics:
    rows: list[StepMetrics] = field(default_factory=list)

    @property
    def collapsed(self) -> bool:
        return bool(self.rows) and self.rows[-1].collapsed

    @property
    def final_reward(self) -> float:
        if not self.rows:
            raise ValueError("no steps recorded")
        return self.rows[-1].reward_mean


def _traj_states(seed: int, stream: int, traj_ids: np.ndarray) -> np.ndarray:
    return fold_array(np.uint64(fold(fold(0, seed), stream)), traj_ids)


def _sample_rows(log_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF sample one token per row from log-prob rows."""
    cdf = np.cumsum(np.exp(log_rows), axis=1)
    idx = np.sum(cdf < u[:, None], axis=1)
    return np.minimum(idx, log_rows.shape[1] - 1)


def rollout(
    task: ToyTask,
    actor: ToyModel,
    n_trajectories: int,
    seed: int,
    traj_id_start: int = 0,
    group_size: int = 8,
    stream: int = _STREAM_ROLLOUT,
    mask_seed: int | None = None,
) -> ToyBatch:
    """Sample trajectories from the actor; group g rides prompt g % n_prompts.

    logp_ref and advantage come back zero-filled — the trainer stamps them
    from its own snapshots (reference rows and GRPO over rewards).
    """
    if n_trajectories < 1 or n_trajectories % group_size:
        raise ValueError(
            f"n_trajectories must be a positive multiple of group_size, "
            f"got {n_trajectories} / {group_size}"
        )
    n, horizon = n_trajectories, task.horizon
    traj_ids = traj_id_start + np.arange(n, dtype=np.uint64)
    group = np.arange(n) // group_size
    prompt_of_traj = (group % task.n_prompts).astype(np.int64)

    tok_states = _traj_states(seed, stream, traj_ids)
    tokens = np.empty((n, horizon), dtype=np.int64)
    logp_inf = np.empty((n, horizon))
    ctx = np.empty((n, horizon), dtype=np.int64)
    prev = np.full(n, task.vocab_size, dtype=np.int64)  # BOS context
    for t in range(horizon):
        rows = actor.log_rows(prompt_of_traj, prev)
        u = uniform_array(fold_array(tok_states, np.uint64(t)))
        tok = _sample_rows(rows, u)
        tokens[:, t] = tok
        ctx[:, t] = prev
        logp_inf[:, t] = rows[np.arange(n), tok]
        prev = tok

    rewards = task.reward(prompt_of_traj, tokens)
    positions = np.tile(np.arange(horizon, dtype=np.int64), n)
    flat_traj = np.repeat(traj_ids.astype(np.int64), horizon)
    mask_base = np.uint64(fold(fold(0, seed if mask_seed is None else mask_seed),
                               _STREAM_MASK))
    mask_states = fold_array(
        fold_array(mask_base, flat_traj.astype(np.uint64)),
        positions.astype(np.uint64),
    )
    return ToyBatch(
        prompt_idx=np.repeat(prompt_of_traj, horizon),
        ctx_idx=ctx.reshape(-1),
        token_id=tokens.reshape(-1),
        logp_inf=logp_inf.reshape(-1),
        logp_ref=np.zeros(n * horizon),
        advantage=np.zeros(n * horizon),
        trajectory_id=flat_traj,
        position=positions,
        mask_u=uniform_array(mask_states),
        group_id=np.repeat(group, horizon),
        rewards=rewards,
    )


def group_advantages(rewards: np.ndarray, group_size: int) -> np.ndarray:
    """(r - group mean) / max(group std, 1e-6) over contiguous equal groups."""
    if rewards.size % group_size:
        raise ValueError(f"{rewards.size} rewards do not split into groups of {group_size}")
    r = rewards.reshape(-1, group_size)
    mean = r.mean(axis=1, keepdims=True)
    std = np.maximum(r.std(axis=1, keepdims=True), 1e-6)
    return ((r - mean) / std).reshape(-1)


def _gather_logp(model: ToyModel, batch: ToyBatch) -> tuple[np.ndarray, np.ndarray]:
    rows = model.log_rows(batch.prompt_idx, batch.ctx_idx)
    return rows, rows[np.arange(len(batch)), batch.token_id]


def surrogate_coefficients(
    scheme: Scheme,
    batch: ToyBatch,
    models: ModelBundle,
    params: TrainParams,
) -> dict[str, np.ndarray | float]:
    """Stop-gradient pieces of a step: coefficients, clip anchor, diagnostics.

    The acceptance normalizer here is exact (full-vocabulary complement sum),
    so no top-k estimate and no kappa correction enter the toy: it isolates
    the RL dynamics from the estimation error studied elsewhere.
    """
    n = len(batch)
    rows_new, lp_new = _gather_logp(models.policy, batch)
    rows_inf = models.actor.log_rows(batch.prompt_idx, batch.ctx_idx)

    accept = np.minimum(1.0, np.exp(lp_new - batch.logp_inf - math.log(params.lam)))
    mask = (batch.mask_u < accept).astype(np.float64)

    z = batch_z_complement(rows_new, rows_inf, params.lam)
    w_obrs = z * np.maximum(params.lam, np.exp(lp_new - batch.logp_inf))
    rho = np.minimum(w_obrs, params.c1) * np.minimum(
        np.exp(batch.logp_ref - lp_new), params.c2
    )

    anchor = batch.logp_ref
    if scheme.tis_mode == "reference":
        coeff = np.minimum(np.exp(batch.logp_ref - batch.logp_inf), params.tis_c)
    elif scheme.tis_mode == "adjusted":
        coeff = np.minimum(np.exp(lp_new - batch.logp_inf), params.tis_c)
        anchor = lp_new.copy()  # detached: the clip ratio re-centers at 1
    else:
        coeff = np.ones(n)
        if scheme.uses_reweight:
            coeff = coeff * rho
        if scheme.uses_mask:
            coeff = mask * coeff
    denom = float(np.sum(mask)) if scheme.uses_mask else float(n)
    return {
        "coeff": coeff,
        "anchor": anchor,
        "denom": denom,
        "mask": mask,
        "accept": accept,
        "z": z,
        "w_obrs": w_obrs,
        "rho": rho,
        "rows_new": rows_new,
        "lp_new": lp_new,
        "rows_inf": rows_inf,
    }


def surrogate_value(
    batch: ToyBatch,
    policy_logits: np.ndarray,
    policy_kind: ModelKind,
    anchor: np.ndarray,
    coeff: np.ndarray,
    denom: float,
    params: TrainParams,
) -> float:
    """Clipped surrogate with frozen coefficients, as a pure function of the
    policy logits (this is what finite differences differentiate)."""
    model = ToyModel(kind=policy_kind, logits=policy_logits)
    _, lp_new = _gather_logp(model, batch)
    ratio = np.exp(lp_new - anchor)
    clipped = np.clip(ratio, 1.0 - params.eps_low, 1.0 + params.eps_high)
    term = np.minimum(ratio * batch.advantage, clipped * batch.advantage)
    if denom <= 0:
        return 0.0
    return float(np.sum(coeff * term) / denom)


def _clip_active(ratio: np.ndarray, adv: np.ndarray, params: TrainParams) -> np.ndarray:
    clipped = np.clip(ratio, 1.0 - params.eps_low, 1.0 + params.eps_high)
    inside = (ratio > 1.0 - params.eps_low) & (ratio < 1.0 + params.eps_high)
    return inside | (ratio * adv <= clipped * adv)


def _scatter_policy_grad(
    per_token: np.ndarray,
    batch: ToyBatch,
    rows_prob: np.ndarray,
    model: ToyModel,
) -> np.ndarray:
    """Accumulate per_token * d lp(token)/d logits into a table like model's."""
    grad = np.zeros_like(model.logits)
    if model.kind is ModelKind.UNIGRAM:
        flat = grad
        idx = batch.prompt_idx
    else:
        flat = grad.reshape(-1, grad.shape[-1])
        idx = batch.prompt_idx * model.logits.shape[1] + batch.ctx_idx
    np.add.at(flat, (idx, batch.token_id), per_token)
    np.subtract.at(flat, idx, per_token[:, None] * rows_prob)
    return grad


def surrogate_gradient(
    scheme: Scheme,
    batch: ToyBatch,
    models: ModelBundle,
    params: TrainParams,
) -> tuple[float, np.ndarray, dict[str, np.ndarray | float]]:
    """(objective value, d objective / d policy logits, diagnostics).

    The coefficients (mask, rho, TIS weights) are stop-gradient: they are
    evaluated at the current parameters and then held constant, so perturbing
    parameters inside them changes nothing here.
    """
    parts = surrogate_coefficients(scheme, batch, models, params)
    coeff, anchor, denom = parts["coeff"], parts["anchor"], parts["denom"]
    lp_new = parts["lp_new"]
    rows_new = parts["rows_new"]

    ratio = np.exp(lp_new - anchor)
    clipped = np.clip(ratio, 1.0 - params.eps_low, 1.0 + params.eps_high)
    term = np.minimum(ratio * batch.advantage, clipped * batch.advantage)
    if denom <= 0:
        return 0.0, np.zeros_like(models.policy.logits), parts
    value = float(np.sum(coeff * term) / denom)

    active = _clip_active(ratio, batch.advantage, params)
    per_token = np.where(active, coeff * batch.advantage * ratio, 0.0) / denom
    grad = _scatter_policy_grad(per_token, batch, np.exp(rows_new), models.policy)
    return value, grad, parts


def actor_objective_value(
    batch: ToyBatch,
    actor_logits: np.ndarray,
    actor_kind: ModelKind,
    params: TrainParams,
) -> float:
    """Actor-side clipped surrogate on its own rollouts (anchor = logp_inf)."""
    model = ToyModel(kind=actor_kind, logits=actor_logits)
    _, lp = _gather_logp(model, batch)
    ratio = np.exp(lp - batch.logp_inf)
    clipped = np.clip(ratio, 1.0 - params.eps_low, 1.0 + params.eps_high)
    term = np.minimum(ratio * batch.advantage, clipped * batch.advantage)
    return float(np.mean(term))


def actor_gradient(
    batch: ToyBatch, actor: ToyModel, params: TrainParams
) -> tuple[float, np.ndarray]:
    """(value, gradient) of the actor-side surrogate."""
    rows, lp = _gather_logp(actor, batch)
    ratio = np.exp(lp - batch.logp_inf)
    clipped = np.clip(ratio, 1.0 - params.eps_low, 1.0 + params.eps_high)
    term = np.minimum(ratio * batch.advantage, clipped * batch.advantage)
    active = _clip_active(ratio, batch.advantage, params)
    per_token = np.where(active, batch.advantage * ratio, 0.0) / len(batch)
    grad = _scatter_policy_grad(per_token, batch, np.exp(rows), actor)
    return float(np.mean(term)), grad


def visited_kl(
    a: ToyModel, b: ToyModel, batch: ToyBatch, direction: str = "a_to_b"
) -> float:
    """Mean KL between the two models' rows over the batch's visited contexts."""
    rows_a = a.log_rows(batch.prompt_idx, batch.ctx_idx)
    rows_b = b.log_rows(batch.prompt_idx, batch.ctx_idx)
    if direction == "b_to_a":
        rows_a, rows_b = rows_b, rows_a
    elif direction != "a_to_b":
        raise ValueError(f"direction must be 'a_to_b' or 'b_to_a', got {direction!r}")
    return float(np.mean(np.sum(np.exp(rows_a) * (rows_a - rows_b), axis=1)))


def distill_step(
    actor: ToyModel, policy: ToyModel, batch: ToyBatch, lr: float
) -> tuple[float, float]:
    """One forward-KL distillation descent step on the actor, in place.

    Returns (KL before, KL after) where KL = KL(policy || actor) averaged over
    the batch's visited contexts; strictly decreases whenever it exceeds 1e-8
    (the objective is convex in the actor logits and lr <= 1 is safely inside
    the curvature bound for softmax rows).
    """
    before = visited_kl(policy, actor, batch)
    target_rows = np.exp(policy.log_rows(batch.prompt_idx, batch.ctx_idx))
    actor_rows = np.exp(actor.log_rows(batch.prompt_idx, batch.ctx_idx))
    per_ctx = (actor_rows - target_rows) / len(batch)  # d mean KL / d actor logits
    grad = np.zeros_like(actor.logits)
    if actor.kind is ModelKind.UNIGRAM:
        np.add.at(grad, batch.prompt_idx, per_ctx)
    else:
        flat = grad.reshape(-1, grad.shape[-1])
        np.add.at(flat, batch.prompt_idx * actor.logits.shape[1] + batch.ctx_idx, per_ctx)
    actor.logits -= lr * grad
    after = visited_kl(policy, actor, batch)
    return before, after


def _project_unigram(policy: ToyModel, task: ToyTask) -> ToyModel:
    """Best-effort sync for a context-free actor: per prompt, the mean of the
    policy's context rows (uniform over contexts, including begin-of-sequence)."""
    probs = np.exp(log_softmax(policy.logits))  # (P, V+1, V)
    mean_rows = probs.mean(axis=1)
    return ToyModel(kind=ModelKind.UNIGRAM, logits=np.log(mean_rows))


def _eval_reward(task: ToyTask, policy: ToyModel, params: TrainParams,
                 seed: int, step: int) -> float:
    # group_size=1 round-robins prompts over individual eval trajectories.
    batch = rollout(
        task, policy, params.eval_trajectories,
        seed=fold(fold(seed, _STREAM_EVAL), step),
        traj_id_start=0, group_size=1, stream=_STREAM_EVAL,
    )
    return float(np.mean(batch.rewards))


def _stamp_ref_and_advantages(batch: ToyBatch, ref: ToyModel, group_size: int,
                              horizon: int) -> None:
    _, lp_ref = _gather_logp(ref, batch)
    batch.logp_ref = lp_ref
    adv = group_advantages(batch.rewards, group_size)
    batch.advantage = np.repeat(adv, horizon)


def _slice_batch(batch: ToyBatch, horizon: int, lo_traj: int, hi_traj: int) -> ToyBatch:
    lo, hi = lo_traj * horizon, hi_traj * horizon
    return ToyBatch(
        prompt_idx=batch.prompt_idx[lo:hi],
        ctx_idx=batch.ctx_idx[lo:hi],
        token_id=batch.token_id[lo:hi],
        logp_inf=batch.logp_inf[lo:hi],
        logp_ref=batch.logp_ref[lo:hi],
        advantage=batch.advantage[lo:hi],
        trajectory_id=batch.trajectory_id[lo:hi],
        position=batch.position[lo:hi],
        mask_u=batch.mask_u[lo:hi],
        group_id=batch.group_id[lo:hi],
        rewards=batch.rewards[lo_traj:hi_traj],
    )


def train_single(
    scheme: Scheme,
    task: ToyTask,
    steps: int,
    seed: int,
    params: TrainParams,
    policy_log: list[np.ndarray] | None = None,
) -> RunMetrics:
    """One seeded run. If ``policy_log`` is a list, the post-update policy
    logits of every step are appended to it (copies), exposing the parameter
    trajectory for exact-equivalence checks."""
    policy = ToyModel.zeros(ModelKind.BIGRAM, task)
    actor_kind = params.actor_kind or scheme.default_actor_kind
    actor: ToyModel | None = None
    ref: ToyModel | None = None
    collection: ToyBatch | None = None

    batch_trajs = params.n_groups * scheme.group_size
    horizon = task.horizon
    s = scheme.staleness
    traj_counter = 0

    metrics = RunMetrics()
    peak = 0.0
    low_streak = 0
    collapsed = False

    for step in range(steps):
        if step % s == 0:
            # Weight sync: the rollout model refreshes on the staleness cadence
            # for every scheme (that is what "staleness" means); distillation
            # additionally realigns the actor between syncs.
            if actor_kind is ModelKind.POLICY:
                actor = policy
            elif actor_kind is ModelKind.BIGRAM:
                actor = policy.copy()
            else:
                actor = _project_unigram(policy, task)

        if scheme.uses_distill:
            # Rollouts stream from the live (continuously distilled) actor, so
            # each step collects fresh data; staleness only sets the cadence of
            # the hard weight sync above.
            ref = policy.copy()
            batch = rollout(
                task, actor, batch_trajs, seed=seed,
                traj_id_start=traj_counter, group_size=scheme.group_size,
                mask_seed=seed,
            )
            traj_counter += batch_trajs
            _stamp_ref_and_advantages(batch, ref, scheme.group_size, horizon)
            actor_snapshot = actor.copy()
        else:
            if step % s == 0:
                ref = policy.copy()
                rollout_model = actor if actor_kind is not ModelKind.POLICY else policy
                collection = rollout(
                    task, rollout_model, s * batch_trajs, seed=seed,
                    traj_id_start=traj_counter, group_size=scheme.group_size,
                    mask_seed=seed,
                )
                traj_counter += s * batch_trajs
                _stamp_ref_and_advantages(collection, ref, scheme.group_size, horizon)
                actor_snapshot = rollout_model.copy()
            offset = (step % s) * batch_trajs
            batch = _slice_batch(collection, horizon, offset, offset + batch_trajs)
        models = ModelBundle(policy=policy, actor=actor_snapshot, ref=ref)

        value, grad, parts = surrogate_gradient(scheme, batch, models, params)
        grad_norm_sq = float(np.sum(grad * grad))

        finite = math.isfinite(value) and math.isfinite(grad_norm_sq)
        if finite:
            policy.logits += params.lr_policy * grad

        if scheme.uses_distill and actor is not policy:
            # The actor re-syncs toward the freshest trainer weights: its own
            # objective nudges it, then distillation pulls it onto the
            # just-updated policy.  n_distill > 1 models a distillation stream
            # running at a higher cadence than the trainer's updates.
            if params.lr_actor > 0:
                _, a_grad = actor_gradient(batch, actor, params)
                actor.logits += params.lr_actor * a_grad
            if params.lambda_distill > 0:
                for _ in range(params.n_distill):
                    distill_step(actor, policy, batch,
                                 params.lr_distill * params.lambda_distill)
        if policy_log is not None:
            policy_log.append(policy.logits.copy())

        kl_ap = visited_kl(actor if actor is not None else policy, policy, batch)
        reward = _eval_reward(task, policy, params, seed, step)
        grad_norm = math.sqrt(grad_norm_sq) if finite else math.inf

        peak = max(peak, reward)
        if reward < COLLAPSE_FRACTION * peak:
            low_streak += 1
        else:
            low_streak = 0
        if low_streak >= COLLAPSE_PATIENCE or not finite or not math.isfinite(kl_ap):
            collapsed = True  # monotone: never reset

        metrics.rows.append(
            StepMetrics(
                step=step,
                reward_mean=reward,
                kl_actor_policy=kl_ap,
                acceptance_rate=float(np.mean(parts["mask"])),
                grad_norm=grad_norm,
                collapsed=collapsed,
            )
        )
        if not finite:
            break
    return metrics


def train(
    scheme: Scheme,
    task: ToyTask,
    steps: int,
    seeds: tuple[int, ...],
    params: TrainParams = TrainParams(),
) -> dict[int, RunMetrics]:
    """Run the scheme once per seed; deterministic per (scheme, seed)."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if not seeds:
        raise ValueError("need at least one seed")
    return {int(s): train_single(scheme, task, steps, int(s), params) for s in seeds}


def metrics_to_jsonl(metrics: RunMetrics) -> str:
    """One JSON object per step, stable key order and byte-stable floats."""
    lines = []
    for row in metrics.rows:
        lines.append(json.dumps({
            "step": row.step,
            "reward_mean": row.reward_mean,
            "kl_actor_policy": row.kl_actor_policy,
            "acceptance_rate": row.acceptance_rate,
            "grad_norm": row.grad_norm,
            "collapsed": row.collapsed,
        }))
    return "\n".join(lines) + "\n"
