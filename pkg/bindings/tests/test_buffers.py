"""Boundary validation: every failure names the buffer and the position."""

import numpy as np
import pytest

from obrs_align_bindings import (
    BatchBuffers,
    BindingError,
    BufferShapeError,
    NonFiniteEntryError,
)


def flat(values, dtype=np.float64):
    return np.asarray(values, dtype=dtype)


def ids(values):
    return flat(values, dtype=np.int64)


def valid_kwargs(n=2, k=2):
    """A minimal well-formed batch: each row's top-k is its own token."""
    vocab_lists = {
        "offsets": ids(range(0, k * n + 1, k)),
        "ids": ids([j for _ in range(n) for j in range(k)]),
        "logps": flat([-0.5 - 0.1 * j for _ in range(n) for j in range(k)]),
    }
    return dict(
        logp_inf=flat([-0.5] * n),
        logp_ref=flat([-0.7] * n),
        logp_new=flat([-0.5] * n),
        advantage=flat([1.0] * n),
        token_id=ids([0] * n),
        trajectory_id=ids(range(n)),
        position=ids([0] * n),
        group_id=ids([0] * n),
        topk_inf_offsets=vocab_lists["offsets"],
        topk_inf_ids=vocab_lists["ids"],
        topk_inf_logps=vocab_lists["logps"],
        topk_new_offsets=vocab_lists["offsets"].copy(),
        topk_new_ids=vocab_lists["ids"].copy(),
        topk_new_logps=vocab_lists["logps"].copy(),
    )


def test_well_formed_batch_constructs_and_reports_length():
    buffers = BatchBuffers(**valid_kwargs(n=3))
    assert len(buffers) == 3


def test_length_mismatch_names_both_buffers():
    kwargs = valid_kwargs(n=2)
    kwargs["advantage"] = flat([1.0, 2.0, 3.0])
    with pytest.raises(BufferShapeError, match="advantage=3") as err:
        BatchBuffers(**kwargs)
    assert "logp_inf=2" in str(err.value)


def test_wrong_dtype_is_rejected_not_coerced():
    kwargs = valid_kwargs()
    kwargs["logp_new"] = kwargs["logp_new"].astype(np.float32)
    with pytest.raises(BufferShapeError, match="logp_new must have dtype float64"):
        BatchBuffers(**kwargs)
    kwargs = valid_kwargs()
    kwargs["token_id"] = kwargs["token_id"].astype(np.int32)
    with pytest.raises(BufferShapeError, match="token_id must have dtype int64"):
        BatchBuffers(**kwargs)


def test_non_finite_entry_carries_buffer_and_index():
    kwargs = valid_kwargs()
    kwargs["logp_inf"] = flat([-0.5, np.nan])
    with pytest.raises(NonFiniteEntryError, match=r"logp_inf\[1\]") as err:
        BatchBuffers(**kwargs)
    assert err.value.buffer == "logp_inf"
    assert err.value.index == 1


def test_topk_logps_allow_minus_inf_but_not_nan_or_plus_inf():
    kwargs = valid_kwargs()
    kwargs["topk_inf_logps"] = flat([-0.5, -np.inf, -0.5, -0.6])
    BatchBuffers(**kwargs)  # -inf is a zero-mass token: fine
    kwargs["topk_inf_logps"] = flat([-0.5, np.inf, -0.5, -0.6])
    with pytest.raises(NonFiniteEntryError, match=r"topk_inf_logps\[1\]"):
        BatchBuffers(**kwargs)


def test_offsets_must_start_at_zero_and_cover_the_flat_arrays():
    kwargs = valid_kwargs()
    kwargs["topk_new_offsets"] = ids([1, 2, 4])
    with pytest.raises(BufferShapeError, match="topk_new_offsets must start at 0"):
        BatchBuffers(**kwargs)
    kwargs = valid_kwargs()
    kwargs["topk_new_offsets"] = ids([0, 3, 2])
    with pytest.raises(BufferShapeError, match="goes backwards"):
        BatchBuffers(**kwargs)
    kwargs = valid_kwargs()
    kwargs["topk_new_offsets"] = ids([0, 2, 3])
    with pytest.raises(BufferShapeError, match="ends at 3 but"):
        BatchBuffers(**kwargs)


def test_offsets_need_one_entry_per_token_plus_one():
    kwargs = valid_kwargs(n=2)
    kwargs["topk_inf_offsets"] = ids([0, 4])
    with pytest.raises(BufferShapeError, match="needs 3 entries for 2 tokens"):
        BatchBuffers(**kwargs)


def test_config_scalars_are_validated():
    with pytest.raises(BindingError, match="target_policy"):
        BatchBuffers(**valid_kwargs(), target_policy="newest")
    with pytest.raises(BindingError, match="kappa must be positive"):
        BatchBuffers(**valid_kwargs(), kappa=0.0)


def test_empty_batch_is_rejected():
    kwargs = valid_kwargs(n=2)
    for name in ("logp_inf", "logp_ref", "logp_new", "advantage"):
        kwargs[name] = flat([])
    for name in ("token_id", "trajectory_id", "position", "group_id"):
        kwargs[name] = ids([])
    kwargs["topk_inf_offsets"] = ids([0])
    kwargs["topk_inf_ids"] = ids([])
    kwargs["topk_inf_logps"] = flat([])
    kwargs["topk_new_offsets"] = ids([0])
    kwargs["topk_new_ids"] = ids([])
    kwargs["topk_new_logps"] = flat([])
    with pytest.raises(BufferShapeError, match="at least one token"):
        BatchBuffers(**kwargs)
