"""Shared queue directory protocol for master/helper seed exchange.

Each fuzzer owns ``<root>/<fuzzer_id>/queue/`` and never writes anywhere
else.  Entry files carry the raw input bytes; all metadata lives in the
filename:

    id:<seq>,src:<parent>,adm:<admission>,nov:<score>

with seq zero-padded to six digits, parent a seed id or ``none``, admission
one of coverage/novelty/both/initial, and nov a four-decimal novelty score
or ``na``.  Writes go to a dot-prefixed temp file first and are renamed into
place, so readers never observe partial entries.

Edge counts are not serialized: receivers re-execute scanned inputs and
re-evaluate admission against their own coverage map, so a stale or
malicious peer cannot inflate local bookkeeping.
"""

from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from semfuzz.errors import EmptyList, IoError
from semfuzz.scheduler import QueueEntry
from semfuzz.target_model import seed_id_for

log = logging.getLogger(__name__)

ENTRY_RE = re.compile(
    r"^id:(\d{6}),src:([0-9a-f]{16}|none),"
    r"adm:(coverage|novelty|both|initial),nov:(na|\d+\.\d{4})$"
)


def entry_filename(seq: int, parent_id: str | None, admission: str,
                   novelty_score: float | None) -> str:
    src = parent_id if parent_id else "none"
    nov = f"{novelty_score:.4f}" if novelty_score is not None else "na"
    return f"id:{seq:06d},src:{src},adm:{admission},nov:{nov}"


class QueueDirLayout:
    """Path scheme plus per-fuzzer sequence allocation."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._next_seq: dict[str, int] = {}

    def queue_dir(self, fuzzer_id: str) -> Path:
        return self.root / fuzzer_id / "queue"

    def peers(self, self_id: str) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            p.name for p in self.root.iterdir()
            if p.is_dir() and p.name != self_id and (p / "queue").is_dir()
        )

    def allocate_seq(self, fuzzer_id: str) -> int:
        if fuzzer_id not in self._next_seq:
            top = -1
            qdir = self.queue_dir(fuzzer_id)
            if qdir.is_dir():
                for name in os.listdir(qdir):
                    m = ENTRY_RE.match(name)
                    if m:
                        top = max(top, int(m.group(1)))
            self._next_seq[fuzzer_id] = top + 1
        seq = self._next_seq[fuzzer_id]
        self._next_seq[fuzzer_id] = seq + 1
        return seq


@dataclass
class SyncCursor:
    """Per-peer high-water marks; strictly monotone, never rewound."""

    last_seen: dict[str, int] = field(default_factory=dict)

    def position(self, peer: str) -> int:
        return self.last_seen.get(peer, -1)

    def advance(self, peer: str, seq: int) -> None:
        if seq > self.position(peer):
            self.last_seen[peer] = seq


def publish(layout: QueueDirLayout, fuzzer_id: str, entry: QueueEntry) -> str:
    """Write one queue entry atomically; returns the entry filename."""
    qdir = layout.queue_dir(fuzzer_id)
    try:
        qdir.mkdir(parents=True, exist_ok=True)
        seq = layout.allocate_seq(fuzzer_id)
        name = entry_filename(seq, entry.parent_id, entry.admission, entry.novelty_score)
        tmp = qdir / f".tmp.{name}"
        tmp.write_bytes(entry.data)
        os.replace(tmp, qdir / name)
    except OSError as exc:
        raise IoError(f"publishing to {qdir} failed: {exc}") from exc
    return name


def _scan_source(peer: str) -> str:
    return "master" if peer == "master" else "helper"


def scan_new(layout: QueueDirLayout, self_id: str, cursor: SyncCursor) -> list[QueueEntry]:
    """Collect peers' entries beyond the cursor, oldest first per peer.

    Unreadable entries are skipped with a warning but still advance the
    cursor, so one bad file cannot wedge the scan loop.  Reconstructed
    entries carry new_edges=0; the caller recomputes coverage locally.
    """
    found: list[QueueEntry] = []
    recency = 0.0
    for peer in layout.peers(self_id):
        qdir = layout.queue_dir(peer)
        try:
            names = sorted(os.listdir(qdir))
        except OSError as exc:
            log.warning("cannot list %s: %s", qdir, exc)
            continue
        for name in names:
            m = ENTRY_RE.match(name)
            if m is None:
                if not name.startswith("."):
                    log.warning("ignoring malformed queue entry %s/%s", peer, name)
                continue
            seq = int(m.group(1))
            if seq <= cursor.position(peer):
                continue
            try:
                data = (qdir / name).read_bytes()
            except OSError as exc:
                log.warning("skipping unreadable queue entry %s/%s: %s", peer, name, exc)
                cursor.advance(peer, seq)
                continue
            parent = None if m.group(2) == "none" else m.group(2)
            nov = None if m.group(4) == "na" else float(m.group(4))
            found.append(QueueEntry(
                seed_id=seed_id_for(data), data=data, source=_scan_source(peer),
                admission=m.group(3), new_edges=0, energy=1.0,
                created_at=recency, novelty_score=nov, parent_id=parent,
            ))
            recency += 1.0
            cursor.advance(peer, seq)
    return found


def select_inspirational(entries: list[QueueEntry]) -> QueueEntry:
    """Prefer the entry with the largest coverage gain, newest on ties."""
    if not entries:
        raise EmptyList("no entries to select from")
    return max(entries, key=lambda e: (e.new_edges, e.created_at))
