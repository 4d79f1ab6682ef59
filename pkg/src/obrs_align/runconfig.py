"""Flat `key = value` run configuration files.

UTF-8 text, one assignment per line; blank lines and `#` comments allowed.
Unknown keys are rejected with the offending line number, as are duplicates
and badly typed values.  Every key has a documented default, so an empty file
is a valid config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .simlab import SweepConfig
from .toy_rl import ModelKind, Scheme, SchemeName, ToyTask, TrainParams
from .weights import JackpotConfig, LossConfig, TargetPolicy

__all__ = ["ConfigError", "RunConfig", "parse_config", "read_config", "DEFAULT_LAMBDA_GRID"]

DEFAULT_LAMBDA_GRID = ("min", "0.5", "1.0", "2.0", "max")


class ConfigError(ValueError):
    """Bad config content; message carries the 1-based line number when known."""


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a parsed config file; field defaults are the contract."""

    # Correction-weight knobs
    lam: float = 1.0                     # key: lambda
    c1: float = 3.0
    c2: float = 1.28
    top_k: int = 20
    target_policy: str = "latest"
    mask_seed: int | None = None         # key: mask_seed; default: follow seed
    kappa: float | None = None           # key: kappa; "auto" or a positive number
    # Loss knobs
    eps_low: float = 0.2
    eps_high: float = 0.28
    tis_c: float = 3.0
    lambda_distill: float = 1.0
    # Sweep knobs
    vocab_size: int = 10_000
    dirichlet_alpha: float = 1.0
    noise_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.4, 0.8, 1.2, 1.6, 2.0)
    trials_per_level: int = 100
    lambda_grid: tuple[str, ...] = DEFAULT_LAMBDA_GRID
    # Scheme / training knobs
    scheme: str = "on_policy"
    staleness: int = 1
    group_size: int = 8
    n_groups: int = 8
    n_distill: int = 1
    steps: int = 200
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    lr_policy: float = 0.5
    lr_actor: float = 0.5
    lr_distill: float = 1.0
    eval_trajectories: int = 64
    actor_kind: str | None = None        # key: actor_kind; default: per scheme
    # Toy task knobs
    toy_vocab_size: int = 32
    horizon: int = 16
    n_prompts: int = 8
    target_token: int = 0
    count_threshold: int | tuple[int, ...] = 2   # one value, or one per prompt
    parity: bool = False
    # Shared
    seed: int = 0

    def jackpot_config(self, seed_override: int | None = None) -> JackpotConfig:
        seed = self.seed if seed_override is None else seed_override
        mask_seed = seed if self.mask_seed is None else self.mask_seed
        return JackpotConfig(
            lam=self.lam, c1=self.c1, c2=self.c2, top_k=self.top_k,
            target_policy=TargetPolicy(self.target_policy), mask_seed=mask_seed,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(eps_low=self.eps_low, eps_high=self.eps_high,
                          tis_c=self.tis_c, lambda_distill=self.lambda_distill)

    def sweep_config(self, seed_override: int | None = None) -> SweepConfig:
        return SweepConfig(
            vocab_size=self.vocab_size, dirichlet_alpha=self.dirichlet_alpha,
            noise_grid=self.noise_grid, lam=self.lam,
            trials_per_level=self.trials_per_level,
            seed=self.seed if seed_override is None else seed_override,
        )

    def lambda_grid_values(self) -> tuple[float | str, ...]:
        out: list[float | str] = []
        for entry in self.lambda_grid:
            out.append(entry if entry in ("min", "max") else float(entry))
        return tuple(out)

    def toy_scheme(self) -> Scheme:
        return Scheme(name=SchemeName(self.scheme), staleness=self.staleness,
                      group_size=self.group_size)

    def toy_task(self) -> ToyTask:
        return ToyTask(
            vocab_size=self.toy_vocab_size, horizon=self.horizon,
            n_prompts=self.n_prompts, target_token=self.target_token,
            count_threshold=self.count_threshold, parity=self.parity,
            seed=self.seed,
        )

    def train_params(self) -> TrainParams:
        return TrainParams(
            lr_policy=self.lr_policy, lr_actor=self.lr_actor,
            lr_distill=self.lr_distill, lam=self.lam, c1=self.c1, c2=self.c2,
            tis_c=self.tis_c, lambda_distill=self.lambda_distill,
            eps_low=self.eps_low, eps_high=self.eps_high,
            n_groups=self.n_groups, n_distill=self.n_distill,
            eval_trajectories=self.eval_trajectories,
            actor_kind=None if not self.actor_kind else ModelKind(self.actor_kind),
        )


def _parse_bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def _parse_value(key: str, raw: str):
    if key == "lambda":
        return "lam", float(raw)
    if key == "mask_seed":
        return key, None if raw == "" or raw.lower() == "auto" else int(raw)
    if key == "kappa":
        if raw == "" or raw.lower() == "auto":
            return key, None
        value = float(raw)
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"kappa must be positive and finite, got {raw!r}")
        return key, value
    if key == "actor_kind":
        return key, None if raw == "" or raw.lower() == "auto" else raw
    if key == "noise_grid":
        return key, tuple(float(x) for x in raw.split(",") if x.strip() != "")
    if key == "lambda_grid":
        entries = tuple(x.strip() for x in raw.split(",") if x.strip() != "")
        for e in entries:
            if e not in ("min", "max"):
                float(e)  # raises on garbage
        return key, entries
    if key == "seeds":
        return key, tuple(int(x) for x in raw.split(",") if x.strip() != "")
    if key == "count_threshold":
        if "," in raw:
            return key, tuple(int(x) for x in raw.split(",") if x.strip() != "")
        return key, int(raw)
    if key == "parity":
        return key, _parse_bool(raw)
    hints = {f.name: f.type for f in fields(RunConfig)}
    hint = hints[key]
    if hint == "int":
        return key, int(raw)
    if hint == "float":
        return key, float(raw)
    return key, raw


_VALID_KEYS = tuple(
    "lambda" if f.name == "lam" else f.name for f in fields(RunConfig)
)


def parse_config(text: str) -> RunConfig:
    values: dict = {}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _VALID_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        seen.add(key)
        try:
            name, value = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for '{key}': {exc}") from exc
        values[name] = value
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def read_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
