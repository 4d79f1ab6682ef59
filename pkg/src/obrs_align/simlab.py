"""Dirichlet-pair sweeps: acceptance rate vs. KL, and KL reduction across lam.

Each trial draws a target p from a Dirichlet, perturbs its logits with
Gaussian noise of scale eta to get the proposal q, and measures the exact
acceptance rate and the KL contraction of the kept distribution.  Medians are
reported per noise level (KLs are heavy-tailed at high eta); the per-trial
records behind them are also exposed for CSV emission.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .categorical import Categorical, SimPairConfig, dirichlet_pair, kl_divergence
from .obrs import ObrsParams, _effective_ratios, post_rejection
from .rng import derive_state

__all__ = [
    "SweepConfig",
    "SweepRow",
    "TrialRecord",
    "SweepInvariantViolation",
    "TRIAL_CSV_HEADER",
    "acceptance_trials",
    "sweep_acceptance_vs_kl",
    "reduction_trials",
    "sweep_kl_reduction",
    "trials_to_csv_text",
]

#: Mandatory header for per-trial CSV files.
TRIAL_CSV_HEADER = "eta,trial,kl_pq,z,kl_post,ratio"

#: Slack factors so the symbolic grid endpoints land strictly outside the
#: ratio range: "min" must not reject anything, "max" must keep exactly p.
_MIN_ENDPOINT_SHRINK = 1.0 - 1e-9


class SweepInvariantViolation(Exception):
    """A trial violated the guaranteed contraction inequality."""


@dataclass(frozen=True)
class SweepConfig:
    """Knobs for one sweep."""

    vocab_size: int = 10_000
    dirichlet_alpha: float = 1.0
    noise_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.4, 0.8, 1.2, 1.6, 2.0)
    lam: float = 1.0
    trials_per_level: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.dirichlet_alpha <= 0:
            raise ValueError(f"dirichlet_alpha must be positive, got {self.dirichlet_alpha}")
        grid = tuple(float(e) for e in self.noise_grid)
        if not grid or any(e < 0 for e in grid):
            raise ValueError("noise_grid must be non-empty and non-negative")
        object.__setattr__(self, "noise_grid", grid)
        ObrsParams(self.lam)
        if self.trials_per_level < 1:
            raise ValueError(f"trials_per_level must be >= 1, got {self.trials_per_level}")


@dataclass(frozen=True)
class TrialRecord:
    """One (pair, lam) measurement; the CSV row unit."""

    eta: float
    trial: int
    kl_pq: float
    z: float
    kl_post: float
    ratio: float


@dataclass(frozen=True)
class SweepRow:
    """Per-noise-level medians."""

    eta: float
    kl_pq_median: float
    acceptance_rate_median: float
    kl_reduced_median: float
    reduction_ratio_median: float

    def __post_init__(self) -> None:
        if self.kl_reduced_median > self.kl_pq_median + 1e-12:
            raise SweepInvariantViolation(
                f"median kept-KL {self.kl_reduced_median} exceeds median raw KL "
                f"{self.kl_pq_median} at eta={self.eta}"
            )


def _trial_pair(cfg: SweepConfig, level: int, trial: int) -> tuple[Categorical, Categorical]:
    # Counter-derived per-trial seed: independent of lam, so reduction sweeps
    # at different lam values see identical pairs (paired comparisons).
    pair_seed = derive_state(cfg.seed, level, trial)
    return dirichlet_pair(
        SimPairConfig(
            vocab_size=cfg.vocab_size,
            dirichlet_alpha=cfg.dirichlet_alpha,
            noise_scale=cfg.noise_grid[level],
            seed=int(pair_seed),
        )
    )


def _resolve_lambda(spec: float | str, p: Categorical, q: Categorical) -> float:
    if isinstance(spec, str):
        ratios = _effective_ratios(p, q)[2]
        if spec == "min":
            return float(np.min(ratios)) * _MIN_ENDPOINT_SHRINK
        if spec == "max":
            return float(np.max(ratios))
        raise ValueError(f"lambda grid entries must be numbers, 'min', or 'max': {spec!r}")
    return float(spec)


def _measure(p: Categorical, q: Categorical, lam: float,
             eta: float, trial: int) -> TrialRecord:
    kl_pq = kl_divergence(p, q)
    post = post_rejection(p, q, ObrsParams(lam))
    kl_post = kl_divergence(p, post.kept_dist)
    if kl_post > kl_pq + 1e-12:
        raise SweepInvariantViolation(
            f"trial {trial} at eta={eta}, lam={lam}: kept KL {kl_post} exceeds raw KL {kl_pq}"
        )
    ratio = kl_post / kl_pq if kl_pq > 0 else 1.0
    return TrialRecord(eta=eta, trial=trial, kl_pq=kl_pq, z=post.z,
                       kl_post=kl_post, ratio=ratio)


def acceptance_trials(cfg: SweepConfig) -> list[TrialRecord]:
    """Per-trial measurements at the config's fixed lam."""
    out = []
    for level, eta in enumerate(cfg.noise_grid):
        for trial in range(cfg.trials_per_level):
            p, q = _trial_pair(cfg, level, trial)
            out.append(_measure(p, q, cfg.lam, eta, trial))
    return out


def _summarize(trials: list[TrialRecord]) -> list[SweepRow]:
    rows = []
    for eta in sorted({t.eta for t in trials}):
        level = [t for t in trials if t.eta == eta]
        rows.append(
            SweepRow(
                eta=eta,
                kl_pq_median=float(np.median([t.kl_pq for t in level])),
                acceptance_rate_median=float(np.median([t.z for t in level])),
                kl_reduced_median=float(np.median([t.kl_post for t in level])),
                reduction_ratio_median=float(np.median([t.ratio for t in level])),
            )
        )
    return rows


def sweep_acceptance_vs_kl(cfg: SweepConfig) -> list[SweepRow]:
    """Median acceptance rate and KLs per noise level at cfg.lam."""
    return _summarize(acceptance_trials(cfg))


def reduction_trials(cfg: SweepConfig, lam_spec: float | str) -> list[TrialRecord]:
    """Per-trial measurements at one grid entry.

    ``lam_spec`` may be a number or "min"/"max", which resolve per trial to
    just under the pair's smallest ratio (keep everything) or exactly its
    largest (classical rejection sampling: kept distribution is p).
    """
    out = []
    for level, eta in enumerate(cfg.noise_grid):
        for trial in range(cfg.trials_per_level):
            p, q = _trial_pair(cfg, level, trial)
            lam = _resolve_lambda(lam_spec, p, q)
            out.append(_measure(p, q, lam, eta, trial))
    return out


def sweep_kl_reduction(
    cfg: SweepConfig, lambda_grid: tuple[float | str, ...]
) -> dict[str, list[SweepRow]]:
    """Median rows per lambda-grid entry, keyed by the entry's label."""
    if not lambda_grid:
        raise ValueError("lambda_grid must be non-empty")
    out: dict[str, list[SweepRow]] = {}
    for spec in lambda_grid:
        label = spec if isinstance(spec, str) else repr(float(spec))
        if label in out:
            raise ValueError(f"duplicate lambda grid entry {label}")
        out[label] = _summarize(reduction_trials(cfg, spec))
    return out


def trials_to_csv_text(trials: list[TrialRecord]) -> str:
    """Render trials as CSV with the mandatory header; byte-stable."""
    lines = [TRIAL_CSV_HEADER]
    for t in trials:
        lines.append(
            f"{t.eta!r},{t.trial},{t.kl_pq!r},{t.z!r},{t.kl_post!r},{t.ratio!r}"
        )
    return "\n".join(lines) + "\n"
