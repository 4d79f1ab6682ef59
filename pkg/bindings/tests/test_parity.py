"""Bitwise parity with the primary CLI on a large randomized batch.

The same 10^5-token batch flows through both paths:

  records -> trace file -> `analyze-trace` CLI -> per-token weight CSV
  records -> BatchBuffers -> batch_weights     -> result buffers

The CSV serializes floats via repr (shortest round-trip form), so parsing a
field back with float() recovers the exact bits; equality below is bitwise.
"""

import numpy as np
import pytest

from obrs_align.categorical import SparseTopK
from obrs_align.cli import EXIT_OK, main
from obrs_align.trace import records_to_text
from obrs_align.weights import TokenRecord
from obrs_align_bindings import batch_tis, batch_weights, buffers_from_records

N_TOKENS = 100_000
VOCAB = 12
# 2 * TOP_K > VOCAB, so any two top-k lists overlap and every record's
# truncated normalizer estimate is strictly positive.
TOP_K = 8
SEED = 5


def random_records(n=N_TOKENS, vocab=VOCAB, k=TOP_K, seed=1234):
    """Randomized batch: peaked pairs, partial top-k lists, varied ids."""
    rng = np.random.default_rng(seed)
    p_inf = rng.dirichlet(np.full(vocab, 0.6), size=n)
    p_new = rng.dirichlet(np.full(vocab, 0.6), size=n)
    lp_inf = np.log(p_inf)
    lp_new = np.log(p_new)
    # Inverse-CDF sampling of the emitted token from the proposal.
    cdf = np.cumsum(p_inf, axis=1)
    tokens = np.minimum(
        (cdf < rng.random((n, 1))).sum(axis=1), vocab - 1
    ).astype(np.int64)
    lp_ref = np.log(rng.uniform(0.05, 0.95, size=n))
    advantage = rng.standard_normal(n)
    order_inf = np.argsort(-lp_inf, axis=1, kind="stable")
    order_new = np.argsort(-lp_new, axis=1, kind="stable")

    records = []
    for i in range(n):
        top_inf = order_inf[i, :k]
        top_new = order_new[i, :k]
        records.append(
            TokenRecord(
                token_id=int(tokens[i]),
                logp_inf=float(lp_inf[i, tokens[i]]),
                logp_ref=float(lp_ref[i]),
                logp_new=float(lp_new[i, tokens[i]]),
                topk_inf=SparseTopK(top_inf, lp_inf[i, top_inf]),
                topk_new=SparseTopK(top_new, lp_new[i, top_new]),
                advantage=float(advantage[i]),
                group_id=i // 64,
                position=i % 16,
                trajectory_id=i // 16,
            )
        )
    return records


@pytest.fixture(scope="module")
def batch():
    return random_records()


def test_batch_weights_matches_analyze_trace_bitwise(batch, tmp_path):
    trace_path = tmp_path / "large.trace"
    trace_path.write_text(records_to_text(batch))
    csv_path = tmp_path / "weights.csv"
    code = main([
        "analyze-trace", "--trace", str(trace_path),
        "--out", str(csv_path), "--seed", str(SEED),
    ])
    assert code == EXIT_OK

    buffers = buffers_from_records(batch, mask_seed=SEED)
    result = batch_weights(buffers)

    lines = csv_path.read_text().splitlines()
    header = lines[0].split(",")
    assert len(lines) == len(batch) + 1
    col = {name: header.index(name) for name in
           ("mask", "rho", "w_obrs", "tis_weight")}
    for i, line in enumerate(lines[1:]):
        fields = line.split(",")
        assert int(fields[col["mask"]]) == int(result.mask[i]), i
        assert float(fields[col["rho"]]) == result.rho[i], i
        assert float(fields[col["w_obrs"]]) == result.w_obrs[i], i


def test_batch_tis_matches_analyze_trace_bitwise(batch, tmp_path):
    trace_path = tmp_path / "large.trace"
    trace_path.write_text(records_to_text(batch))
    csv_path = tmp_path / "weights.csv"
    assert main([
        "analyze-trace", "--trace", str(trace_path),
        "--out", str(csv_path), "--seed", str(SEED),
    ]) == EXIT_OK
    lines = csv_path.read_text().splitlines()
    header = lines[0].split(",")
    tis_col = header.index("tis_weight")
    expected = np.array(
        [float(line.split(",")[tis_col]) for line in lines[1:]]
    )
    # The CLI caps TIS weights at the same default C the binding exposes.
    ours = batch_tis(buffers_from_records(batch), c=3.0)
    assert np.array_equal(ours, expected)
