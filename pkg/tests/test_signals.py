"""Signal extraction, canonical token order, and power-of-two bucketing."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semfuzz.executor import CrashInfo, ExecutionRecord, RawSignals, new_bitmap
from semfuzz.signals import (OUTPUT_CAP_BYTES, canonicalize, extract_signals,
                             pow2_bucket)


def record_with(raw: RawSignals, outcome="ok", crash=None) -> ExecutionRecord:
    return ExecutionRecord(
        input_id="i", bitmap=new_bitmap(), outcome=outcome,
        exit_status=134 if outcome == "crash" else 0, raw_signals=raw,
        wall_time_us=1, crash_info=crash,
    )


POW2_CASES = [
    (0, "0"), (1, "1"), (2, "2"), (3, "2"), (4, "4"), (5, "4"), (7, "4"),
    (8, "8"), (1023, "512"), (1024, "1024"), (-3, "-2"), (-1024, "-1024"),
    (0.75, "0.5"), (0.5, "0.5"), (0.49, "0.25"),
    (float("inf"), "nan"), (float("nan"), "nan"),
]


@pytest.mark.parametrize("value,bucket", POW2_CASES)
def test_pow2_bucket_cases(value, bucket):
    assert pow2_bucket(value) == bucket


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=1, max_value=2**40))
def test_pow2_bucket_floors(n):
    b = int(pow2_bucket(n))
    assert b <= n < 2 * b
    assert b & (b - 1) == 0


def test_token_order_is_ret_log_exc_mem_out():
    raw = RawSignals(
        return_values=[("rows", 5)],
        log_messages=["Plan Ready"],
        exception_type=None,
        state_hashes=[("state", 0xDEADBEEF12345678)],
        output_bytes=b"ok done",
    )
    sig = extract_signals(record_with(raw, outcome="crash",
                                      crash=CrashInfo("logic_assert:x", ("f",))))
    tokens = canonicalize(sig).tokens
    kinds = [t.split(":")[0] for t in tokens]
    assert kinds == sorted(kinds, key="ret log exc mem out".split().index)
    assert tokens[0] == "ret:rows=4"
    assert "log:plan" in tokens and "log:ready" in tokens
    assert "exc:logic_assert:x" in tokens
    assert any(t.startswith("mem:state=") for t in tokens)
    assert tokens[-1] == "out:done"


def test_crash_kind_becomes_exception_token():
    raw = RawSignals()
    sig = extract_signals(record_with(raw, outcome="crash",
                                      crash=CrashInfo("memory_guard:oob", ("f",))))
    assert sig.exception_type == "memory_guard:oob"
    sig = extract_signals(record_with(raw, outcome="timeout"))
    assert sig.exception_type == "timeout"
    sig = extract_signals(record_with(raw))
    assert sig.exception_type is None


def test_region_filter_keeps_declared_only():
    raw = RawSignals(state_hashes=[("a", 1), ("b", 2)])
    sig = extract_signals(record_with(raw), declared_regions=("b",))
    assert sig.state_hashes == [("b", 2)]
    sig = extract_signals(record_with(raw), declared_regions=None)
    assert len(sig.state_hashes) == 2


def test_output_capped():
    raw = RawSignals(output_bytes=b"x" * (OUTPUT_CAP_BYTES + 100))
    sig = extract_signals(record_with(raw))
    assert len(sig.output_bytes) == OUTPUT_CAP_BYTES


def test_value_jitter_within_bucket_is_invisible():
    def tok(n):
        return canonicalize(RawSignals(return_values=[("rows", n)])).tokens

    assert tok(9) == tok(15)   # same bucket
    assert tok(15) != tok(16)  # bucket boundary


def test_bool_not_bucketed():
    tokens = canonicalize(RawSignals(return_values=[("ok", True)])).tokens
    assert tokens == ("ret:ok=true",)


def test_canonicalize_deterministic():
    raw = RawSignals(return_values=[("a", 3)], log_messages=["m n"],
                     output_bytes=b"z")
    assert canonicalize(raw) == canonicalize(raw)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.text(alphabet="abc", min_size=1, max_size=4),
                       st.integers(-1000, 1000)), max_size=5),
    st.lists(st.text(alphabet="ab c", max_size=12), max_size=4),
)
def test_tokens_are_nonempty_strings(returns, logs):
    raw = RawSignals(return_values=list(returns), log_messages=list(logs))
    for token in canonicalize(raw).tokens:
        assert token and " " not in token
