"""In-process execution harness with edge coverage and crash deduplication.

Targets are plain Python callables taking ``(data, ctx)``; they report control
flow through ``ctx.hit`` / ``ctx.call`` and runtime signals through the other
context methods.  Edges are hashed AFL-style into a fixed 64 KiB counter map;
hit counts are bucketed before any delta comparison so that loop-count jitter
does not register as new behavior.
"""

from __future__ import annotations

import hashlib
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from semfuzz.errors import HarnessError, NotACrash

MAP_SIZE = 65_536

# AFL hit-count buckets: counts are collapsed to {1,2,4,8,16,32,64,128}.
_BUCKET_LUT = np.zeros(256, dtype=np.uint8)
for _lo, _hi, _val in (
    (1, 1, 1),
    (2, 2, 2),
    (3, 3, 4),
    (4, 7, 8),
    (8, 15, 16),
    (16, 31, 32),
    (32, 127, 64),
    (128, 255, 128),
):
    _BUCKET_LUT[_lo : _hi + 1] = _val


def new_bitmap() -> np.ndarray:
    return np.zeros(MAP_SIZE, dtype=np.uint8)


def classify_counts(bitmap: np.ndarray) -> np.ndarray:
    """Collapse raw hit counters into AFL bucket values."""
    return _BUCKET_LUT[bitmap]


_location_cache: dict[str, int] = {}


def _location_id(name: str) -> int:
    cached = _location_cache.get(name)
    if cached is None:
        digest = hashlib.blake2b(name.encode(), digest_size=2).digest()
        cached = int.from_bytes(digest, "big")
        _location_cache[name] = cached
    return cached


class GuardViolation(Exception):
    """Raised by targets when an instrumented guard fires."""

    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


class _StepBudgetExceeded(Exception):
    pass


class _WallClockExceeded(Exception):
    pass


@dataclass
class CrashInfo:
    signal_kind: str
    frames: tuple[str, ...]


@dataclass
class RawSignals:
    """Runtime signal classes captured during one execution."""

    return_values: list[tuple[str, object]] = field(default_factory=list)
    log_messages: list[str] = field(default_factory=list)
    exception_type: str | None = None
    state_hashes: list[tuple[str, int]] = field(default_factory=list)
    output_bytes: bytes = b""


@dataclass
class ExecutionRecord:
    input_id: str
    bitmap: np.ndarray
    outcome: str  # ok | crash | timeout
    exit_status: int
    raw_signals: RawSignals
    wall_time_us: int
    crash_info: CrashInfo | None = None
    call_sequence: tuple[str, ...] = ()


@dataclass(frozen=True)
class BugId:
    stack_hash: int
    signal_kind: str

    @property
    def key(self) -> str:
        return f"{self.signal_kind}-{self.stack_hash:016x}"


@dataclass
class ExecLimits:
    timeout_ms: int = 1000
    memory_bytes: int = 64 * 1024 * 1024
    max_steps: int = 1_000_000


class TraceContext:
    """Instrumentation surface handed to targets.

    ``hit`` records an edge between the previous and current location (AFL
    prev>>1 XOR cur).  ``call`` additionally appends to the dynamic call
    sequence.  Signal methods accumulate the raw material for RawSignals.
    """

    __slots__ = (
        "bitmap",
        "_prev",
        "_steps",
        "_max_steps",
        "_deadline",
        "calls",
        "logs",
        "returns",
        "regions",
        "output",
    )

    def __init__(self, max_steps: int, deadline: float):
        self.bitmap = new_bitmap()
        self._prev = 0
        self._steps = 0
        self._max_steps = max_steps
        self._deadline = deadline
        self.calls: list[str] = []
        self.logs: list[str] = []
        self.returns: list[tuple[str, object]] = []
        self.regions: list[tuple[str, bytes]] = []
        self.output = bytearray()

    def hit(self, location: str) -> None:
        cur = _location_id(location)
        idx = (self._prev ^ cur) & (MAP_SIZE - 1)
        count = self.bitmap[idx]
        if count != 255:
            self.bitmap[idx] = count + 1
        self._prev = cur >> 1
        self._steps += 1
        if self._steps >= self._max_steps:
            raise _StepBudgetExceeded
        if not self._steps & 0x3FF and time.monotonic() > self._deadline:
            raise _WallClockExceeded

    def call(self, function_id: str) -> None:
        self.calls.append(function_id)
        self.hit(f"fn:{function_id}")

    def log(self, message: str) -> None:
        self.logs.append(message)

    def ret(self, name: str, value: object) -> None:
        self.returns.append((name, value))

    def out(self, data: bytes) -> None:
        self.output.extend(data)

    def region(self, name: str, data: bytes) -> None:
        digest = hashlib.blake2b(data, digest_size=8).digest()
        self.regions.append((name, int.from_bytes(digest, "big")))

    def guard(self, ok: bool, kind: str) -> None:
        if not ok:
            raise GuardViolation(kind)


@dataclass(frozen=True)
class TargetHandle:
    """A registered in-process target plus its shipped description files."""

    target_id: str
    run: Callable[[bytes, TraceContext], None]
    input_format: str
    manifest_path: str
    schema_path: str
    seeds_dir: str


_HARNESS_MODULES = (__name__,)


def _target_frames(exc: GuardViolation, limit: int) -> tuple[str, ...]:
    """Innermost-first function names of the raising site, harness frames dropped."""
    tb = exc.__traceback__
    frames = []
    for frame_summary in reversed(traceback.extract_tb(tb)):
        name = frame_summary.name
        if name in ("guard", "execute"):
            continue
        frames.append(name)
        if len(frames) >= limit:
            break
    return tuple(frames)


def execute(
    data: bytes,
    target: TargetHandle,
    limits: ExecLimits | None = None,
    input_id: str | None = None,
) -> ExecutionRecord:
    """Run one input through a target, capturing coverage, signals, and crashes."""
    limits = limits or ExecLimits()
    if limits.timeout_ms <= 0 or limits.max_steps <= 0:
        raise ValueError("limits must be positive")
    if input_id is None:
        input_id = hashlib.sha256(data).hexdigest()[:16]

    deadline = time.monotonic() + limits.timeout_ms / 1000.0
    ctx = TraceContext(max_steps=limits.max_steps, deadline=deadline)
    start = time.perf_counter()
    outcome = "ok"
    exit_status = 0
    crash_info: CrashInfo | None = None
    try:
        target.run(data, ctx)
    except GuardViolation as exc:
        outcome = "crash"
        exit_status = 134
        crash_info = CrashInfo(signal_kind=exc.kind, frames=_target_frames(exc, limit=16))
    except (_StepBudgetExceeded, _WallClockExceeded):
        outcome = "timeout"
        exit_status = 124
    except Exception as exc:  # target bug, not a fuzzing result
        raise HarnessError(
            f"target {target.target_id!r} raised {type(exc).__name__} outside a guarded region: {exc}"
        ) from exc
    wall_us = int((time.perf_counter() - start) * 1e6)

    raw = RawSignals(
        return_values=list(ctx.returns),
        log_messages=list(ctx.logs),
        exception_type=None,
        state_hashes=list(ctx.regions),
        output_bytes=bytes(ctx.output),
    )
    return ExecutionRecord(
        input_id=input_id,
        bitmap=ctx.bitmap,
        outcome=outcome,
        exit_status=exit_status,
        raw_signals=raw,
        wall_time_us=wall_us,
        crash_info=crash_info,
        call_sequence=tuple(ctx.calls),
    )


def coverage_delta(record: ExecutionRecord, global_map: np.ndarray) -> tuple[int, np.ndarray]:
    """Count bucketed edges new to the global map and return the merged map.

    The global map holds bucketed values; merging is an element-wise max, so
    repeated merges of the same record are idempotent.
    """
    if record.bitmap.shape != global_map.shape:
        raise ValueError("coverage maps differ in size")
    bucketed = classify_counts(record.bitmap)
    new_edges = int(np.count_nonzero((bucketed != 0) & (global_map == 0)))
    updated = np.maximum(global_map, bucketed)
    return new_edges, updated


DEDUP_FRAME_DEPTH = 5


def dedup_crash(record: ExecutionRecord, depth: int = DEDUP_FRAME_DEPTH) -> BugId:
    """Fold the top crash frames and signal kind into a stable 64-bit bug id."""
    if record.outcome != "crash" or record.crash_info is None:
        raise NotACrash(f"record {record.input_id} did not crash")
    info = record.crash_info
    material = "|".join(info.frames[:depth]) + "|" + info.signal_kind
    digest = hashlib.blake2b(material.encode(), digest_size=8).digest()
    return BugId(stack_hash=int.from_bytes(digest, "big"), signal_kind=info.signal_kind)


def edges_covered(global_map: np.ndarray) -> int:
    return int(np.count_nonzero(global_map))
