"""Token-trace files: JSON-lines serialization of per-token records.

One record per line with keys: token_id, logp_inf, logp_ref, logp_new,
advantage, group_id, trajectory_id, position, topk_inf, topk_new (top-k lists
as [[id, logp], ...]).  Log-probs are serialized with 17 significant digits so
writing and re-reading is exact; slightly positive log-probs (<= 1e-6, a
serving-engine rounding artifact) are clamped to 0 on read, anything larger
is rejected.  ``read_trace`` then ``write_trace`` reproduces a canonical file
byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from typing import Iterable

import numpy as np

from .categorical import SparseTopK
from .weights import TokenRecord

__all__ = [
    "TraceError",
    "LOGP_ROUNDING_TOL",
    "TRACE_KEYS",
    "records_to_text",
    "text_to_records",
    "read_trace",
    "write_trace",
    "atomic_write_text",
]

LOGP_ROUNDING_TOL = 1e-6

TRACE_KEYS = (
    "token_id",
    "logp_inf",
    "logp_ref",
    "logp_new",
    "advantage",
    "group_id",
    "trajectory_id",
    "position",
    "topk_inf",
    "topk_new",
)

_INT_KEYS = ("token_id", "group_id", "trajectory_id", "position")
_LOGP_KEYS = ("logp_inf", "logp_ref", "logp_new")


class TraceError(ValueError):
    """Malformed trace content; message carries the 1-based line number."""


def _fmt(x: float) -> str:
    if x == 0.0:
        return "0"  # fold -0.0: JSON would reread "-0" as the integer 0 anyway
    return "%.17g" % x


def _clamp_logp(value: float, what: str) -> float:
    if value > LOGP_ROUNDING_TOL:
        raise ValueError(f"{what} must be <= 0 (rounding tolerance {LOGP_ROUNDING_TOL}), "
                         f"got {value}")
    return 0.0 if value > 0 else value


def _reject_constant(token: str) -> float:
    raise ValueError(f"non-finite number {token!r} is not allowed in traces")


def _topk_text(topk: SparseTopK) -> str:
    pairs = ", ".join(
        f"[{int(i)}, {_fmt(float(lp))}]"
        for i, lp in zip(topk.token_ids, topk.log_probs)
    )
    return f"[{pairs}]"


def record_to_line(rec: TokenRecord) -> str:
    """Canonical single-line serialization of one record."""
    return (
        f'{{"token_id": {rec.token_id}, '
        f'"logp_inf": {_fmt(rec.logp_inf)}, '
        f'"logp_ref": {_fmt(rec.logp_ref)}, '
        f'"logp_new": {_fmt(rec.logp_new)}, '
        f'"advantage": {_fmt(rec.advantage)}, '
        f'"group_id": {rec.group_id}, '
        f'"trajectory_id": {rec.trajectory_id}, '
        f'"position": {rec.position}, '
        f'"topk_inf": {_topk_text(rec.topk_inf)}, '
        f'"topk_new": {_topk_text(rec.topk_new)}}}'
    )


def records_to_text(records: Iterable[TokenRecord]) -> str:
    return "".join(record_to_line(r) + "\n" for r in records)


def _as_int(obj: object, what: str) -> int:
    if isinstance(obj, bool) or not isinstance(obj, int):
        raise ValueError(f"{what} must be an integer, got {obj!r}")
    return obj


def _as_float(obj: object, what: str) -> float:
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise ValueError(f"{what} must be a number, got {obj!r}")
    return float(obj)


def _parse_topk(obj: object, what: str) -> SparseTopK:
    if not isinstance(obj, list) or not obj:
        raise ValueError(f"{what} must be a non-empty list of [id, logp] pairs")
    ids, lps = [], []
    for entry in obj:
        if not (isinstance(entry, list) and len(entry) == 2):
            raise ValueError(f"{what} entries must be [id, logp] pairs, got {entry!r}")
        ids.append(_as_int(entry[0], f"{what} id"))
        lps.append(_clamp_logp(_as_float(entry[1], f"{what} logp"), f"{what} logp"))
    return SparseTopK(token_ids=np.array(ids, dtype=np.int64),
                      log_probs=np.array(lps, dtype=np.float64))


def _parse_record(obj: object) -> TokenRecord:
    if not isinstance(obj, dict):
        raise ValueError(f"each line must be a JSON object, got {type(obj).__name__}")
    for key in TRACE_KEYS:
        if key not in obj:
            raise ValueError(f"missing key '{key}'")
    for key in obj:
        if key not in TRACE_KEYS:
            raise ValueError(f"unknown key '{key}'")
    fields: dict = {k: _as_int(obj[k], k) for k in _INT_KEYS}
    for k in _LOGP_KEYS:
        fields[k] = _clamp_logp(_as_float(obj[k], k), k)
    fields["advantage"] = _as_float(obj["advantage"], "advantage")
    fields["topk_inf"] = _parse_topk(obj["topk_inf"], "topk_inf")
    fields["topk_new"] = _parse_topk(obj["topk_new"], "topk_new")
    return TokenRecord(**fields)


def text_to_records(text: str) -> list[TokenRecord]:
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line, parse_constant=_reject_constant)
            records.append(_parse_record(obj))
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        except ValueError as exc:
            raise TraceError(f"line {lineno}: {exc}") from exc
    if not records:
        raise TraceError("trace contains no records")
    return records


def read_trace(path: str) -> list[TokenRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return text_to_records(fh.read())


def atomic_write_text(path: str, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a torn file."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace(path: str, records: Iterable[TokenRecord]) -> None:
    atomic_write_text(path, records_to_text(records))
