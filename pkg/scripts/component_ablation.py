#!/usr/bin/env python3
"""Correction-component ablation.

Runs every correction variant on the frozen ladder task in the wide-clip
regime (eps 0.8/0.8), where within-window drift is large enough for the
masking and reweighting components to matter individually.  Prints a
median-final-reward table and the directional checks: the combined scheme
should score at least as high as each single-component variant's median.

Usage:
    python3 scripts/component_ablation.py --out results/ablation
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import time

from obrs_align.experiments import (
    ABLATION_SCHEMES,
    SEEDS,
    STABILITY_STEPS,
    final_reward,
    run_ablation,
)
from obrs_align.toy_rl import metrics_to_jsonl
from obrs_align.trace import atomic_write_text


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/ablation", help="output directory")
    ap.add_argument("--steps", type=int, default=STABILITY_STEPS)
    ap.add_argument("--seeds", default=",".join(str(s) for s in SEEDS))
    args = ap.parse_args()
    seeds = tuple(int(s) for s in args.seeds.split(","))

    t0 = time.time()
    results = run_ablation(seeds=seeds, steps=args.steps)

    os.makedirs(args.out, exist_ok=True)
    finals: dict[str, dict[int, float]] = {}
    medians: dict[str, float] = {}
    for scheme, runs in results.items():
        finals[scheme] = {seed: final_reward(m) for seed, m in runs.items()}
        medians[scheme] = statistics.median(finals[scheme].values())
        for seed, metrics in runs.items():
            path = os.path.join(args.out, f"{scheme}_seed{seed}.jsonl")
            atomic_write_text(path, metrics_to_jsonl(metrics))

    full = medians["jackpot_full"]
    checks = {
        "full_vs_mask_only": full >= medians["jackpot_mask_only"],
        "full_vs_reweight_only": full >= medians["jackpot_reweight_only"],
    }
    summary = {
        "steps": args.steps,
        "seeds": list(seeds),
        "final_rewards": finals,
        "medians": medians,
        "checks": checks,
    }
    atomic_write_text(
        os.path.join(args.out, "summary.json"),
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )

    width = max(len(s) for s in ABLATION_SCHEMES)
    for scheme in ABLATION_SCHEMES:
        per_seed = "  ".join(f"{finals[scheme][s]:.3f}" for s in seeds)
        print(f"{scheme:<{width}}  median={medians[scheme]:.3f}  [{per_seed}]")
    for name, ok in checks.items():
        print(f"  {name}: {'PASS' if ok else 'FAIL'}")
    print(f"wrote {args.out} in {time.time() - t0:.1f}s")
    return 0 if all(checks.values()) else 2


if __name__ == "__main__":
    raise SystemExit(main())
