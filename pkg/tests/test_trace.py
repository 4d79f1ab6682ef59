"""Token-trace serialization: canonical bytes, clamping, line-numbered errors."""

import math
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from obrs_align.categorical import SparseTopK
from obrs_align.trace import (
    LOGP_ROUNDING_TOL,
    TRACE_KEYS,
    TraceError,
    atomic_write_text,
    read_trace,
    record_to_line,
    records_to_text,
    text_to_records,
    write_trace,
)
from obrs_align.trace import _fmt  # white-box: the 17-digit float formatter
from obrs_align.weights import TokenRecord


def topk(pairs):
    ids, lps = zip(*pairs)
    return SparseTopK(
        token_ids=np.array(ids, dtype=np.int64),
        log_probs=np.array(lps, dtype=np.float64),
    )


def rec(
    token_id=0,
    logp_inf=math.log(0.5),
    logp_ref=math.log(0.4),
    logp_new=math.log(0.25),
    advantage=1.0,
    group_id=0,
    trajectory_id=0,
    position=0,
):
    return TokenRecord(
        token_id=token_id,
        logp_inf=logp_inf,
        logp_ref=logp_ref,
        logp_new=logp_new,
        advantage=advantage,
        group_id=group_id,
        trajectory_id=trajectory_id,
        position=position,
        topk_inf=topk([(token_id, logp_inf), (7, math.log(0.3))]),
        topk_new=topk([(5, math.log(0.5)), (token_id, logp_new)]),
    )


def assert_records_equal(a, b):
    assert len(a) == len(b)
    for ra, rb in zip(a, b):
        assert ra.token_id == rb.token_id
        assert ra.logp_inf == rb.logp_inf
        assert ra.logp_ref == rb.logp_ref
        assert ra.logp_new == rb.logp_new
        assert ra.advantage == rb.advantage
        assert (ra.group_id, ra.trajectory_id, ra.position) == (
            rb.group_id,
            rb.trajectory_id,
            rb.position,
        )
        for ka, kb in ((ra.topk_inf, rb.topk_inf), (ra.topk_new, rb.topk_new)):
            assert np.array_equal(ka.token_ids, kb.token_ids)
            assert np.array_equal(ka.log_probs, kb.log_probs)


def test_round_trip_is_byte_identical():
    records = [
        rec(),
        rec(token_id=3, logp_new=math.log(0.25) - 1e-13, advantage=-2.5,
            group_id=1, trajectory_id=9, position=4),
        rec(advantage=1e300),
        rec(advantage=-0.0),
    ]
    text = records_to_text(records)
    parsed = text_to_records(text)
    assert_records_equal(parsed, records)
    assert records_to_text(parsed) == text
    # and once more: the canonical form is a fixed point
    assert records_to_text(text_to_records(records_to_text(parsed))) == text


def test_file_round_trip(tmp_path):
    path = str(tmp_path / "t.trace")
    records = [rec(), rec(token_id=2, position=1)]
    write_trace(path, records)
    text = open(path).read()
    assert text == records_to_text(records)
    back = read_trace(path)
    assert_records_equal(back, records)
    write_trace(path, back)
    assert open(path).read() == text


@given(st.floats(min_value=-745.0, max_value=0.0, allow_nan=False))
def test_fmt_is_lossless_for_logps(x):
    assert float(_fmt(x)) == x


@given(st.floats(allow_nan=False, allow_infinity=False))
@settings(max_examples=300)
def test_fmt_is_lossless_everywhere(x):
    got = float(_fmt(x))
    assert got == x or (x == 0.0 and got == 0.0)


@given(
    st.integers(min_value=0, max_value=10**6),
    st.floats(min_value=-50.0, max_value=-0.7, allow_nan=False),
    st.floats(min_value=-50.0, max_value=-0.7, allow_nan=False),
    st.floats(min_value=-50.0, max_value=-0.7, allow_nan=False),
    st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
)
@settings(max_examples=100)
def test_round_trip_random_records(tid, li, lr, ln, adv):
    r = TokenRecord(
        token_id=tid,
        logp_inf=li,
        logp_ref=lr,
        logp_new=ln,
        advantage=adv,
        group_id=1,
        trajectory_id=2,
        position=3,
        topk_inf=topk(sorted([(tid, li), (tid + 1, min(li, lr) - 0.5)],
                             key=lambda p: -p[1])),
        topk_new=topk(sorted([(tid, ln), (tid + 1, min(ln, lr) - 0.5)],
                             key=lambda p: -p[1])),
    )
    text = records_to_text([r])
    assert records_to_text(text_to_records(text)) == text


def test_slightly_positive_logp_clamps_to_zero():
    # Serving engines sometimes emit logp 1e-7-ish for a certain token; the
    # reader folds anything within tolerance to exactly 0.  The sampled token
    # is absent from topk_new here, so no consistency check interferes.
    line = (
        '{"token_id": 0, "logp_inf": -0.5, "logp_ref": -0.5, "logp_new": 5e-07, '
        '"advantage": 1, "group_id": 0, "trajectory_id": 0, "position": 0, '
        '"topk_inf": [[0, -0.5], [7, -1.5]], '
        '"topk_new": [[5, -0.7], [7, [TK]]]}'
    ).replace("[TK]", "-1.2")
    parsed = text_to_records(line)
    assert parsed[0].logp_new == 0.0
    # top-k entries are clamped the same way
    clamped = line.replace("[[0, -0.5], [7, -1.5]]", "[[9, 9e-07]]")
    assert text_to_records(clamped)[0].topk_inf.log_probs[0] == 0.0


def test_too_positive_logp_rejected():
    bad = record_to_line(rec()).replace(f'"logp_ref": {_fmt(math.log(0.4))}',
                                        '"logp_ref": 2e-06')
    with pytest.raises(TraceError, match=r"line 1: logp_ref must be <= 0"):
        text_to_records(bad)


def test_blank_lines_are_skipped():
    body = records_to_text([rec(), rec(position=1)])
    lines = body.splitlines()
    text = "\n" + lines[0] + "\n\n" + lines[1] + "\n\n"
    parsed = text_to_records(text)
    assert len(parsed) == 2
    assert records_to_text(parsed) == body


def test_empty_trace_is_an_error():
    with pytest.raises(TraceError, match="no records"):
        text_to_records("\n  \n")


def test_invalid_json_names_line():
    good = record_to_line(rec())
    with pytest.raises(TraceError, match="line 2: invalid JSON"):
        text_to_records(good + "\n{oops\n")


def test_missing_key_named():
    good = record_to_line(rec())
    broken = good.replace('"advantage": 1, ', "")
    with pytest.raises(TraceError, match="line 1: missing key 'advantage'"):
        text_to_records(broken)


def test_unknown_key_named():
    good = record_to_line(rec())
    broken = good[:-1] + ', "confidence": 1}'
    with pytest.raises(TraceError, match="line 1: unknown key 'confidence'"):
        text_to_records(broken)


def test_nonfinite_numbers_banned():
    good = record_to_line(rec())
    for token in ("Infinity", "-Infinity", "NaN"):
        broken = good.replace('"advantage": 1', f'"advantage": {token}')
        with pytest.raises(TraceError, match="non-finite number"):
            text_to_records(broken)


def test_bool_is_not_an_int_or_float():
    good = record_to_line(rec())
    with pytest.raises(TraceError, match="token_id must be an integer, got True"):
        text_to_records(good.replace('"token_id": 0', '"token_id": true'))
    with pytest.raises(TraceError, match="advantage must be a number"):
        text_to_records(good.replace('"advantage": 1', '"advantage": false'))


def test_float_token_id_rejected():
    good = record_to_line(rec())
    with pytest.raises(TraceError, match="position must be an integer"):
        text_to_records(good.replace('"position": 0', '"position": 0.5'))


def test_non_object_line_rejected():
    with pytest.raises(TraceError, match="line 1: each line must be a JSON object, got list"):
        text_to_records("[1, 2]\n")


def test_topk_shape_errors():
    import re

    good = record_to_line(rec())
    one_element = re.sub(r'"topk_inf": \[\[[^\]]*\]', '"topk_inf": [[0]', good, count=1)
    with pytest.raises(TraceError, match=r"topk_inf entries must be \[id, logp\] pairs"):
        text_to_records(one_element)
    with pytest.raises(TraceError, match="topk_new must be a non-empty list"):
        text_to_records(re.sub(r'"topk_new": \[.*\]}', '"topk_new": []}', good))
    with pytest.raises(TraceError, match="topk_new id must be an integer"):
        text_to_records(re.sub(r'"topk_new": \[\[5,', '"topk_new": [[5.5,', good, count=1))


def test_record_validation_surfaces_with_line_number():
    good = record_to_line(rec())
    # duplicate id inside a top-k list trips SparseTopK validation
    broken = good.replace('[7, ', "[0, ")
    with pytest.raises(TraceError, match="line 1"):
        text_to_records(broken)


def test_advantage_may_be_any_finite_float():
    line = record_to_line(rec(advantage=-123.456))
    assert text_to_records(line)[0].advantage == -123.456


def test_atomic_write_text(tmp_path):
    path = str(tmp_path / "out.txt")
    atomic_write_text(path, "hello\n")
    assert open(path).read() == "hello\n"
    atomic_write_text(path, "replaced\n")
    assert open(path).read() == "replaced\n"
    leftovers = [f for f in os.listdir(tmp_path) if f != "out.txt"]
    assert leftovers == []


def test_trace_keys_frozen():
    assert TRACE_KEYS == (
        "token_id", "logp_inf", "logp_ref", "logp_new", "advantage",
        "group_id", "trajectory_id", "position", "topk_inf", "topk_new",
    )
    assert LOGP_ROUNDING_TOL == 1e-6
