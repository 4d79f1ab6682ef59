"""End-to-end CLI tests: every subcommand in-process via main(argv)."""

import json
import math
import os

import numpy as np
import pytest

from obrs_align.categorical import SparseTopK
from obrs_align.cli import EXIT_OK, EXIT_USAGE, EXIT_VIOLATION, main
from obrs_align.trace import records_to_text
from obrs_align.weights import TokenRecord


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("OBRS_ALIGN_SEED", raising=False)


def topk_from_probs(probs):
    order = np.argsort([-p for p in probs], kind="stable")
    return SparseTopK(
        token_ids=np.array(order, dtype=np.int64),
        log_probs=np.log(np.array([probs[i] for i in order])),
    )


def one_token_record(p_inf, p_ref, p_new, token=0, traj=0):
    probs_inf = [p_inf, 0.3, 1.0 - p_inf - 0.3]
    probs_new = [p_new, 0.3, 1.0 - p_new - 0.3]
    return TokenRecord(
        token_id=token,
        logp_inf=math.log(p_inf),
        logp_ref=math.log(p_ref),
        logp_new=math.log(p_new),
        advantage=1.0,
        group_id=0,
        trajectory_id=traj,
        position=0,
        topk_inf=topk_from_probs(probs_inf),
        topk_new=topk_from_probs(probs_new),
    )


def canonical_trace(tmp_path):
    # proposal (0.5, 0.3, 0.2), target (0.2, 0.3, 0.5), reference mass 0.25
    path = tmp_path / "one.trace"
    path.write_text(records_to_text([one_token_record(0.5, 0.25, 0.2)]))
    return str(path)


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------- simulate


def test_simulate_writes_csv_and_reduction_files(tmp_path, capsys):
    cfg = write_cfg(
        tmp_path,
        "vocab_size = 32\ntrials_per_level = 3\nnoise_grid = 0.0, 0.5\n"
        "lambda_grid = min, 1.0, max\nseed = 2\n",
    )
    out = tmp_path / "acc.csv"
    rdir = tmp_path / "reduction"
    code = main(["simulate", "--config", cfg, "--out", str(out),
                 "--reduction-dir", str(rdir)])
    assert code == EXIT_OK
    text = out.read_text()
    assert text.splitlines()[0] == "eta,trial,kl_pq,z,kl_post,ratio"
    for label in ("min", "1.0", "max"):
        assert (rdir / f"reduction_lambda_{label}.csv").exists()
    stdout = capsys.readouterr().out
    assert "acceptance sweep:" in stdout
    assert "reduction sweep lambda=max:" in stdout


def test_simulate_is_bitwise_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, "vocab_size = 16\ntrials_per_level = 2\n"
                              "noise_grid = 0.0, 0.4\nseed = 9\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == EXIT_OK
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


# ------------------------------------------------------------------ verify


def test_verify_canonical_instance(capsys):
    code = main(["verify", "--size", "3", "--instances", "1",
                 "--budgets", "0.7", "--seed", "0"])
    assert code == EXIT_OK
    out = capsys.readouterr().out
    assert "canonical pair at budget 0.7: acceptance mass 0.700000000000" in out
    assert "alphas [0.4, 1.0, 1.0]" in out
    assert "verified 1 (instance, budget) cases" in out


def test_verify_rejects_bad_flags(capsys):
    assert main(["verify", "--size", "20"]) == EXIT_USAGE
    assert "--size must be <= 14" in capsys.readouterr().err
    assert main(["verify", "--budgets", "1.5"]) == EXIT_USAGE
    assert "budgets must lie in (0, 1]" in capsys.readouterr().err


# ------------------------------------------------------------------ zbench


def test_zbench_synthetic_csv_and_exactness_at_full_k(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "vocab_size = 16\nseed = 4\n")
    out = tmp_path / "z.csv"
    code = main(["zbench", "--config", cfg, "--k", "1,4,16", "--eta", "0.5",
                 "--out", str(out)])
    assert code == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "k,z_approx,z_exact,fraction"
    rows = [line.split(",") for line in lines[1:]]
    assert [r[0] for r in rows] == ["1", "4", "16"]
    fracs = [float(r[3]) for r in rows]
    approxs = [float(r[1]) for r in rows]
    exact = float(rows[0][2])
    assert all(float(r[2]) == exact for r in rows)  # same pair throughout
    assert approxs == sorted(approxs)  # k-monotone
    assert all(a <= exact + 1e-12 for a in approxs)  # never exceeds
    assert abs(approxs[-1] - exact) <= 1e-12  # k = V is exact
    assert abs(fracs[-1] - 1.0) <= 1e-12
    table = capsys.readouterr().out
    assert "z_approx" in table and "fraction" in table


def test_zbench_deterministic_and_seed_precedence(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, "vocab_size = 16\nseed = 3\n")
    a, b, c, d = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv", "d.csv"))
    assert main(["zbench", "--config", cfg, "--k", "1,4", "--out", str(a)]) == EXIT_OK
    assert main(["zbench", "--config", cfg, "--k", "1,4", "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()

    monkeypatch.setenv("OBRS_ALIGN_SEED", "4")
    assert main(["zbench", "--config", cfg, "--k", "1,4", "--out", str(c)]) == EXIT_OK
    assert c.read_bytes() != a.read_bytes()  # env var beats config seed

    assert main(["zbench", "--config", cfg, "--k", "1,4", "--seed", "3",
                 "--out", str(d)]) == EXIT_OK
    assert d.read_bytes() == a.read_bytes()  # flag beats env var


def test_zbench_bad_env_seed(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("OBRS_ALIGN_SEED", "soon")
    assert main(["zbench", "--k", "1"]) == EXIT_USAGE
    assert "OBRS_ALIGN_SEED must be an integer" in capsys.readouterr().err


def test_zbench_trace_mode(tmp_path, capsys):
    trace = canonical_trace(tmp_path)
    cfg = write_cfg(tmp_path, "kappa = 1.0\n")
    out = tmp_path / "zt.csv"
    code = main(["zbench", "--config", cfg, "--trace", trace, "--out", str(out)])
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert "trace: 1 records" in stdout
    assert "kappa=1.000000" in stdout
    lines = out.read_text().splitlines()
    assert lines[0] == "index,token_id,z_corrected"
    assert lines[1] == "0,0,0.7"


# ----------------------------------------------------------- analyze-trace


def test_analyze_trace_worked_example(tmp_path, capsys):
    trace = canonical_trace(tmp_path)
    cfg = write_cfg(tmp_path, "kappa = 1.0\nc2 = 3.0\n")
    out = tmp_path / "weights.csv"
    code = main(["analyze-trace", "--config", cfg, "--trace", trace,
                 "--out", str(out), "--seed", "0"])
    assert code == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == ("index,token_id,trajectory_id,position,mask,accept_prob,"
                        "z_corrected,w_obrs,rho,tis_weight,tis_adjusted_weight")
    assert lines[1] == "0,0,0,0,1,0.4,0.7,0.7,0.875,0.5,0.4"
    stdout = capsys.readouterr().out
    assert "records=1" in stdout
    assert "kappa=1.000000" in stdout
    assert "acceptance_rate=1.000000" in stdout
    assert "rho quantiles (0/25/50/75/100%): " in stdout
    assert stdout.count("0.875000") == 5


def test_analyze_trace_all_masked_is_violation(tmp_path, capsys):
    # acceptance probability ~1e-8; the mask draw for trajectory 1 is far above
    path = tmp_path / "masked.trace"
    path.write_text(records_to_text([one_token_record(0.6, 0.5, 1e-8, traj=1)]))
    cfg = write_cfg(tmp_path, "kappa = 1.0\n")
    code = main(["analyze-trace", "--config", cfg, "--trace", str(path), "--seed", "0"])
    assert code == EXIT_VIOLATION
    assert "empty effective batch" in capsys.readouterr().err


def test_analyze_trace_bad_file_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.trace"
    path.write_text('{"token_id": 0}\n')
    assert main(["analyze-trace", "--trace", str(path)]) == EXIT_USAGE
    assert "line 1: missing key" in capsys.readouterr().err


def test_missing_config_file_is_usage_error(tmp_path, capsys):
    assert main(["zbench", "--config", str(tmp_path / "nope.cfg"), "--k", "1"]) \
        == EXIT_USAGE
    assert "cannot read config" in capsys.readouterr().err


def test_config_error_carries_line_number(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "steps = 5\nwat = 9\n")
    assert main(["zbench", "--config", cfg, "--k", "1"]) == EXIT_USAGE
    assert "line 2: unknown key 'wat'" in capsys.readouterr().err


# --------------------------------------------------------------- train-toy


TOY_CFG = (
    "toy_vocab_size = 8\nhorizon = 4\nn_prompts = 2\ncount_threshold = 1\n"
    "group_size = 4\nn_groups = 2\nsteps = 4\nseeds = 0, 1\n"
    "eval_trajectories = 8\nscheme = on_policy\n"
)


def test_train_toy_writes_metrics_and_summary(tmp_path, capsys):
    cfg = write_cfg(tmp_path, TOY_CFG)
    out_dir = tmp_path / "runs"
    code = main(["train-toy", "--config", cfg, "--out-dir", str(out_dir)])
    assert code == EXIT_OK
    for seed in (0, 1):
        lines = (out_dir / f"metrics_on_policy_seed{seed}.jsonl").read_text().splitlines()
        assert len(lines) == 4
        rec = json.loads(lines[0])
        assert list(rec) == ["step", "reward_mean", "kl_actor_policy",
                             "acceptance_rate", "grad_norm", "collapsed"]
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["scheme"] == "on_policy"
    assert summary["staleness"] == 1
    assert summary["collapse_count"] == 0
    assert [r["seed"] for r in summary["runs"]] == [0, 1]
    stdout = capsys.readouterr().out
    assert "seed 0: final_reward=" in stdout
    assert "collapse count: 0/2" in stdout


def test_train_toy_seed_flag_shifts_seed_list(tmp_path):
    cfg = write_cfg(tmp_path, TOY_CFG)
    out_dir = tmp_path / "shifted"
    assert main(["train-toy", "--config", cfg, "--out-dir", str(out_dir),
                 "--seed", "10"]) == EXIT_OK
    names = sorted(os.listdir(out_dir))
    assert names == ["metrics_on_policy_seed10.jsonl",
                     "metrics_on_policy_seed11.jsonl", "summary.json"]


def test_train_toy_is_deterministic(tmp_path):
    cfg = write_cfg(tmp_path, TOY_CFG)
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["train-toy", "--config", cfg, "--out-dir", str(d1)]) == EXIT_OK
    assert main(["train-toy", "--config", cfg, "--out-dir", str(d2)]) == EXIT_OK
    for name in ("metrics_on_policy_seed0.jsonl", "summary.json"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
