"""Edge bitmap semantics, execution outcomes, and crash deduplication."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semfuzz.errors import HarnessError, NotACrash
from semfuzz.executor import (MAP_SIZE, ExecLimits, TargetHandle, classify_counts,
                              coverage_delta, dedup_crash, edges_covered, execute,
                              new_bitmap)


def make_handle(fn, target_id="t"):
    return TargetHandle(
        target_id=target_id, run=fn, input_format="raw",
        manifest_path="", schema_path="", seeds_dir="",
    )


def walker(locations):
    def run(data, ctx):
        for loc in locations:
            ctx.hit(loc)

    return make_handle(run)


BUCKET_CASES = [
    (0, 0), (1, 1), (2, 2), (3, 4), (4, 8), (7, 8), (8, 16), (15, 16),
    (16, 32), (31, 32), (32, 64), (127, 64), (128, 128), (255, 128),
]


@pytest.mark.parametrize("count,bucket", BUCKET_CASES)
def test_bucket_boundaries(count, bucket):
    raw = new_bitmap()
    raw[7] = count
    assert classify_counts(raw)[7] == bucket


def test_bitmap_shape_and_dtype():
    b = new_bitmap()
    assert b.shape == (MAP_SIZE,)
    assert b.dtype == np.uint8


def test_identical_paths_identical_bitmaps():
    h = walker(["a", "b", "c", "b"])
    r1 = execute(b"", h)
    r2 = execute(b"", h)
    assert np.array_equal(r1.bitmap, r2.bitmap)


def test_path_order_matters():
    r1 = execute(b"", walker(["a", "b", "c"]))
    r2 = execute(b"", walker(["c", "b", "a"]))
    assert not np.array_equal(r1.bitmap, r2.bitmap)


def test_counter_saturates_without_wrap():
    h = walker(["x", "y"] * 400)
    record = execute(b"", h)
    assert record.bitmap.max() <= 255
    assert record.outcome == "ok"


def test_new_edges_counts_only_first_appearance():
    global_map = new_bitmap()
    record = execute(b"", walker(["a", "b"]))
    n1, global_map = coverage_delta(record, global_map)
    assert n1 == edges_covered(global_map) > 0
    # same record again: nothing new, merge idempotent
    n2, merged = coverage_delta(record, global_map)
    assert n2 == 0
    assert np.array_equal(merged, global_map)


def test_hit_count_change_is_not_a_new_edge():
    global_map = new_bitmap()
    # two laps so the loop-back edge b->a is already in the baseline
    _, global_map = coverage_delta(execute(b"", walker(["a", "b"] * 2)), global_map)
    before = edges_covered(global_map)
    # same edge set, higher counts: bucket upgrade but no zero->nonzero flip
    n, merged = coverage_delta(execute(b"", walker(["a", "b"] * 6)), global_map)
    assert n == 0
    assert edges_covered(merged) == before
    assert merged.max() >= global_map.max()


def test_coverage_delta_shape_mismatch():
    record = execute(b"", walker(["a"]))
    with pytest.raises(ValueError):
        coverage_delta(record, np.zeros(16, dtype=np.uint8))


def test_ok_record_fields():
    def run(data, ctx):
        ctx.call("entry")
        ctx.ret("len", len(data))
        ctx.log("hello")
        ctx.out(b"result")
        ctx.region("state", b"abc")

    record = execute(b"xy", make_handle(run), input_id="i1")
    assert record.input_id == "i1"
    assert record.outcome == "ok" and record.exit_status == 0
    assert record.call_sequence == ("entry",)
    assert record.raw_signals.return_values == [("len", 2)]
    assert record.raw_signals.log_messages == ["hello"]
    assert record.raw_signals.output_bytes == b"result"
    assert len(record.raw_signals.state_hashes) == 1
    assert record.wall_time_us >= 0


def test_default_input_id_is_content_hash():
    h = walker(["a"])
    assert execute(b"same", h).input_id == execute(b"same", h).input_id
    assert execute(b"same", h).input_id != execute(b"diff", h).input_id


def crasher(kind, extra_frames=0):
    def level(n, ctx):
        if n == 0:
            ctx.guard(False, kind)
        else:
            level(n - 1, ctx)

    def run(data, ctx):
        ctx.call("entry")
        level(extra_frames, ctx)

    return make_handle(run)


def test_crash_outcome_and_frames():
    record = execute(b"", crasher("logic_assert:boom"))
    assert record.outcome == "crash"
    assert record.exit_status == 134
    assert record.crash_info.signal_kind == "logic_assert:boom"
    assert record.crash_info.frames[0] == "level"  # innermost target frame first


def test_dedup_same_site_same_bug():
    a = dedup_crash(execute(b"1", crasher("k")))
    b = dedup_crash(execute(b"2", crasher("k")))
    assert a == b
    assert a.key.startswith("k-")


def test_dedup_depth_truncation():
    # identical top-5 frames, different call depth below them
    shallow = dedup_crash(execute(b"", crasher("k", extra_frames=6)), depth=5)
    deep = dedup_crash(execute(b"", crasher("k", extra_frames=9)), depth=5)
    assert shallow == deep


def test_dedup_distinguishes_signal_kinds():
    a = dedup_crash(execute(b"", crasher("k1")))
    b = dedup_crash(execute(b"", crasher("k2")))
    assert a != b


def test_dedup_rejects_non_crash():
    with pytest.raises(NotACrash):
        dedup_crash(execute(b"", walker(["a"])))


def test_step_budget_times_out():
    def run(data, ctx):
        while True:
            ctx.hit("spin")

    record = execute(b"", make_handle(run), ExecLimits(max_steps=10_000))
    assert record.outcome == "timeout"
    assert record.exit_status == 124


def test_unguarded_exception_is_harness_error():
    def run(data, ctx):
        raise RuntimeError("target is broken")

    with pytest.raises(HarnessError):
        execute(b"", make_handle(run))


def test_invalid_limits_rejected():
    with pytest.raises(ValueError):
        execute(b"", walker(["a"]), ExecLimits(timeout_ms=0))
    with pytest.raises(ValueError):
        execute(b"", walker(["a"]), ExecLimits(max_steps=0))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=30), min_size=1, max_size=8))
def test_merge_monotone_and_delta_consistent(paths):
    global_map = new_bitmap()
    covered = 0
    for path in paths:
        record = execute(b"", walker(path))
        n, global_map = coverage_delta(record, global_map)
        now = edges_covered(global_map)
        assert n == now - covered >= 0
        covered = now
