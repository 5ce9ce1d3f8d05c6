"""Runtime signal extraction and canonical tokenization.

The executor collects raw material (returns, logs, memory-region hashes,
output); this module turns it into a bounded, deterministic token list that
the embedder consumes.  Numeric return values are bucketed to powers of two
so value-level jitter between behaviorally identical runs disappears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from semfuzz.executor import ExecutionRecord, RawSignals

OUTPUT_CAP_BYTES = 4096
TOKEN_CAP = 2048


@dataclass(frozen=True)
class SignalTokens:
    tokens: tuple[str, ...]


def pow2_bucket(value: float) -> str:
    """Floor-power-of-two bucket label for a numeric value."""
    if value == 0:
        return "0"
    if value < 0:
        return "-" + pow2_bucket(-value)
    if math.isinf(value) or math.isnan(value):
        return "nan"
    exp = math.floor(math.log2(value))
    bucket = 2.0**exp
    if bucket >= 1:
        return str(int(bucket))
    return repr(bucket)


def extract_signals(record: ExecutionRecord, declared_regions: tuple[str, ...] | None = None) -> RawSignals:
    """Canonical RawSignals for a record: output capped, crash kind surfaced.

    ``declared_regions`` filters memory-state hashes to names the target
    manifest declares; None keeps everything the target reported.
    """
    raw = record.raw_signals
    exception = None
    if record.outcome == "crash" and record.crash_info is not None:
        exception = record.crash_info.signal_kind
    elif record.outcome == "timeout":
        exception = "timeout"
    hashes = raw.state_hashes
    if declared_regions is not None:
        allowed = set(declared_regions)
        hashes = [(name, h) for name, h in raw.state_hashes if name in allowed]
    return RawSignals(
        return_values=list(raw.return_values),
        log_messages=list(raw.log_messages),
        exception_type=exception,
        state_hashes=hashes,
        output_bytes=raw.output_bytes[:OUTPUT_CAP_BYTES],
    )


def _words(text: str) -> list[str]:
    return [w for w in text.lower().split() if w]


def canonicalize(signals: RawSignals) -> SignalTokens:
    """Tokenize signals in fixed order: returns, logs, exception, memory, output."""
    tokens: list[str] = []
    for name, value in signals.return_values:
        if isinstance(value, bool):
            tokens.append(f"ret:{name}={str(value).lower()}")
        elif isinstance(value, (int, float)):
            tokens.append(f"ret:{name}={pow2_bucket(value)}")
        else:
            text = str(value).strip().lower().replace(" ", "_")
            if text:
                tokens.append(f"ret:{name}={text}")
    for message in signals.log_messages:
        tokens.extend(f"log:{w}" for w in _words(message))
    if signals.exception_type:
        tokens.append(f"exc:{signals.exception_type}")
    for region, digest in signals.state_hashes:
        tokens.append(f"mem:{region}={format(digest, '016x')[:8]}")
    out_text = signals.output_bytes[:OUTPUT_CAP_BYTES].decode("latin-1")
    tokens.extend(f"out:{w}" for w in _words(out_text))
    return SignalTokens(tokens=tuple(tokens[:TOKEN_CAP]))
