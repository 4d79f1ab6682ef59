"""Brute-force verification that the closed-form acceptance rule is optimal.

An acceptance rule assigns each token an accept probability ``alpha_i``; the
kept distribution is ``alpha * q / Z`` with ``Z = sum(alpha * q)`` pinned to a
budget.  Minimizing KL(p || kept) at fixed budget is equivalent to maximizing
``J(alpha) = sum_{p_i > 0} p_i * ln(alpha_i)``, which is what these oracles
score.  None of this imports the closed-form solver's internals: the oracle
enumerates saturation patterns directly, so agreement is evidence, not
circularity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .categorical import Categorical
from .obrs import solve_lambda_for_budget

__all__ = [
    "AcceptanceRule",
    "OptimalityReport",
    "rule_objective",
    "rule_acceptance_mass",
    "oracle_optimal_rule",
    "near_optimal_rules",
    "obrs_rule",
    "verify_obrs_optimality",
    "finite_difference_gradient",
]

_MAX_ORACLE_VOCAB = 16


@dataclass(frozen=True)
class AcceptanceRule:
    """Per-token accept probabilities, each in [0, 1]."""

    alphas: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.alphas, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError(f"alphas must be 1-D, got shape {arr.shape}")
        if not np.all((arr >= 0) & (arr <= 1 + 1e-12)):
            raise ValueError("alphas must lie in [0, 1]")
        arr = np.minimum(arr, 1.0)
        arr.setflags(write=False)
        object.__setattr__(self, "alphas", arr)


@dataclass(frozen=True)
class OptimalityReport:
    """Outcome of perturbation testing around a candidate rule."""

    base_objective: float
    trials: int
    improving_trials: int
    max_improvement: float
    passed: bool


def rule_objective(p: Categorical, rule: AcceptanceRule) -> float:
    """J(alpha) = sum over p's support of p_i * ln(alpha_i); -inf if any
    supported token has alpha 0."""
    probs = p.probs
    alphas = rule.alphas
    if probs.size != alphas.size:
        raise ValueError(f"size mismatch: {probs.size} vs {alphas.size}")
    support = probs > 0
    if np.any(alphas[support] == 0):
        return -math.inf
    with np.errstate(divide="ignore"):
        logs = np.log(alphas[support])
    return float(np.dot(probs[support], logs))


def rule_acceptance_mass(q: Categorical, rule: AcceptanceRule) -> float:
    """Expected acceptance rate sum(alpha * q) under proposal q."""
    if q.vocab_size != rule.alphas.size:
        raise ValueError(f"size mismatch: {q.vocab_size} vs {rule.alphas.size}")
    return float(np.dot(rule.alphas, q.probs))


def obrs_rule(p: Categorical, q: Categorical, budget: float) -> AcceptanceRule:
    """The closed-form rule min(1, p / (lambda q)) at the budget's lambda."""
    lam = solve_lambda_for_budget(p, q, budget).lam
    pp, qq = p.probs, q.probs
    alphas = np.ones(pp.size)
    pos = qq > 0
    alphas[pos] = np.minimum(1.0, pp[pos] / (lam * qq[pos]))
    alphas[(~pos) & (pp == 0)] = 0.0
    return AcceptanceRule(alphas)


@dataclass(frozen=True)
class _PatternTable:
    """Scored saturation patterns shared by the oracle and the uniqueness probe."""

    budget: float
    pp: np.ndarray
    qq: np.ndarray
    forced_one: np.ndarray
    forced_zero: np.ndarray
    free: np.ndarray
    sat: np.ndarray
    objective: np.ndarray
    lam: np.ndarray
    degenerate: np.ndarray
    leftover: np.ndarray


def _pattern_table(p: Categorical, q: Categorical, budget: float) -> _PatternTable:
    """Score every saturation pattern (which tokens sit at alpha = 1).

    The rest share the leftover budget in proportion to p/q (the stationarity
    condition on the interior); infeasible patterns score -inf.
    """
    if not 0 < budget <= 1:
        raise ValueError(f"budget must lie in (0, 1], got {budget}")
    pp, qq = p.probs, q.probs
    vocab = pp.size
    if vocab > _MAX_ORACLE_VOCAB:
        raise ValueError(f"oracle enumeration is limited to vocab <= {_MAX_ORACLE_VOCAB}")
    if budget > float(np.sum(qq[pp > 0])) + 1e-12:
        raise ValueError(
            f"budget {budget} exceeds the proposal mass on the target's support"
        )

    # Tokens the pattern search cannot move: q = 0 tokens contribute no mass,
    # so give them alpha = 1 on p's support (costless) and 0 elsewhere.
    forced_one = (qq == 0) & (pp > 0)
    forced_zero = (qq == 0) & (pp == 0)
    free = np.nonzero(qq > 0)[0]
    n_free = free.size
    if n_free == 0:
        raise ValueError("proposal has empty support")

    bits = (np.arange(2**n_free)[:, None] >> np.arange(n_free)) & 1  # (patterns, n_free)
    sat = bits.astype(np.float64)
    q_free = qq[free]
    p_free = pp[free]
    with np.errstate(divide="ignore", invalid="ignore"):
        v_free = np.where(p_free > 0, p_free * (np.log(p_free) - np.log(q_free)), 0.0)
        ratio_free = np.where(p_free > 0, p_free / q_free, 0.0)

    q_sat = sat @ q_free
    leftover = budget - q_sat
    comp = 1.0 - sat
    p_comp = comp @ p_free  # target mass that must squeeze through the leftover
    v_comp = comp @ v_free
    max_ratio_comp = (comp * ratio_free).max(axis=1)

    objective = np.full(sat.shape[0], -math.inf)
    degenerate = p_comp <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        lam = np.where(degenerate | (leftover <= 0), np.nan, p_comp / leftover)
    regular = (
        ~degenerate
        & (leftover > 0)
        & (max_ratio_comp <= lam * (1 + 1e-9))
    )
    objective[regular] = v_comp[regular] - np.log(lam[regular]) * p_comp[regular]

    # Degenerate patterns: the whole target support is saturated; zero-support
    # complement tokens may absorb the leftover (objective-neutral).
    q_zero_comp = comp @ (q_free * (p_free == 0))
    deg_ok = degenerate & (leftover >= -1e-12) & (leftover <= q_zero_comp + 1e-12)
    objective[deg_ok] = 0.0

    return _PatternTable(
        budget=budget,
        pp=pp,
        qq=qq,
        forced_one=forced_one,
        forced_zero=forced_zero,
        free=free,
        sat=sat,
        objective=objective,
        lam=lam,
        degenerate=degenerate,
        leftover=leftover,
    )


def _rule_for_pattern(table: _PatternTable, index: int) -> AcceptanceRule:
    """Materialize the acceptance rule for one scored pattern."""
    pp, qq, free = table.pp, table.qq, table.free
    alphas = np.zeros(pp.size)
    alphas[table.forced_one] = 1.0
    alphas[table.forced_zero] = 0.0
    chosen = table.sat[index].astype(bool)
    alphas[free[chosen]] = 1.0
    if table.degenerate[index]:
        remaining = max(0.0, float(table.leftover[index]))
        for idx in free[~chosen]:
            if pp[idx] > 0:
                continue
            take = min(1.0, remaining / qq[idx]) if qq[idx] > 0 else 0.0
            alphas[idx] = take
            remaining -= take * qq[idx]
            if remaining <= 1e-15:
                break
    else:
        interior = free[~chosen]
        alphas[interior] = np.minimum(
            1.0, pp[interior] / (table.lam[index] * qq[interior])
        )
    return AcceptanceRule(alphas)


def oracle_optimal_rule(p: Categorical, q: Categorical, budget: float) -> AcceptanceRule:
    """Exhaustive optimum over all saturation patterns (small vocabularies)."""
    table = _pattern_table(p, q, budget)
    best = int(np.argmax(table.objective))
    if not math.isfinite(table.objective[best]):
        raise ValueError("no feasible acceptance rule matches the budget")
    rule = _rule_for_pattern(table, best)
    mass = rule_acceptance_mass(q, rule)
    if abs(mass - budget) > 1e-9:
        raise AssertionError(f"oracle rule misses the budget: {mass} vs {budget}")
    return rule


def near_optimal_rules(
    p: Categorical, q: Categorical, budget: float, tol: float = 1e-9
) -> list[AcceptanceRule]:
    """Every enumerated rule whose objective is within ``tol`` of the optimum.

    Distinct saturation patterns can produce identical rules (a token whose
    interior solution lands exactly on 1), so the list may repeat; callers
    compare rules entrywise, for which repeats are harmless.
    """
    table = _pattern_table(p, q, budget)
    best = float(np.max(table.objective))
    if not math.isfinite(best):
        raise ValueError("no feasible acceptance rule matches the budget")
    hits = np.nonzero(table.objective >= best - tol)[0]
    return [_rule_for_pattern(table, int(i)) for i in hits]


def verify_obrs_optimality(
    p: Categorical,
    q: Categorical,
    budget: float,
    trials: int = 1000,
    seed: int = 0,
    step_scale: float = 0.05,
) -> OptimalityReport:
    """Random budget-preserving perturbations must not beat the closed form.

    Each trial moves accept probability between two tokens of q's support
    (delta on one, compensating -delta * q_i / q_j on the other, so the
    acceptance mass is unchanged), clipped to keep both inside [0, 1].
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rule = obrs_rule(p, q, budget)
    base = rule_objective(p, rule)
    alphas = rule.alphas
    pp, qq = p.probs, q.probs
    support = np.nonzero(qq > 0)[0]
    if support.size < 2:
        return OptimalityReport(base, trials, 0, 0.0, True)

    rng = np.random.default_rng(seed)
    i_pos = rng.integers(0, support.size, size=trials)
    j_pos = (i_pos + 1 + rng.integers(0, support.size - 1, size=trials)) % support.size
    i = support[i_pos]
    j = support[j_pos]
    delta = rng.uniform(-step_scale, step_scale, size=trials)

    ai, aj = alphas[i], alphas[j]
    qi, qj = qq[i], qq[j]
    # Feasible delta window keeping alpha_i and alpha_j inside [0, 1].
    lo = np.maximum(-ai, -(1.0 - aj) * qj / qi)
    hi = np.minimum(1.0 - ai, aj * qj / qi)
    delta = np.clip(delta, lo, hi)
    new_ai = np.clip(ai + delta, 0.0, 1.0)
    new_aj = np.clip(aj - delta * qi / qj, 0.0, 1.0)

    def _contrib(prob: np.ndarray, alpha: np.ndarray) -> np.ndarray:
        out = np.zeros_like(alpha)
        sel = prob > 0
        with np.errstate(divide="ignore"):
            out[sel] = prob[sel] * np.log(alpha[sel])
        return out

    gain = (
        _contrib(pp[i], new_ai)
        + _contrib(pp[j], new_aj)
        - _contrib(pp[i], ai)
        - _contrib(pp[j], aj)
    )
    gain = np.where(np.isnan(gain), -math.inf, gain)
    max_improvement = float(np.max(gain))
    improving = int(np.sum(gain > 1e-9))
    return OptimalityReport(
        base_objective=base,
        trials=trials,
        improving_trials=improving,
        max_improvement=max_improvement,
        passed=improving == 0,
    )


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, one axis at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in range(x.size):
        bump = np.zeros_like(x)
        bump.flat[idx] = h
        grad.flat[idx] = (f(x + bump) - f(x - bump)) / (2 * h)
    return grad
