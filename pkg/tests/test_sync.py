"""Queue directory protocol: filenames, atomic publish, cursor scans."""

from __future__ import annotations

import logging
import random

import pytest

from semfuzz.errors import EmptyList, IoError
from semfuzz.scheduler import QueueEntry
from semfuzz.sync import (ENTRY_RE, QueueDirLayout, SyncCursor, entry_filename,
                          publish, scan_new, select_inspirational)
from semfuzz.target_model import seed_id_for


def make_entry(data: bytes, admission="coverage", nov=None, parent=None,
               new_edges=0, created_at=0.0) -> QueueEntry:
    return QueueEntry(
        seed_id=seed_id_for(data), data=data, source="master",
        admission=admission, new_edges=new_edges, energy=1.0,
        created_at=created_at, novelty_score=nov, parent_id=parent,
    )


# --- filename format -----------------------------------------------------

def test_filename_golden_minimal():
    assert entry_filename(0, None, "coverage", None) == \
        "id:000000,src:none,adm:coverage,nov:na"


def test_filename_golden_full():
    name = entry_filename(42, "0123456789abcdef", "novelty", 0.73)
    assert name == "id:000042,src:0123456789abcdef,adm:novelty,nov:0.7300"


def test_filename_rounds_to_four_decimals():
    name = entry_filename(7, None, "both", 0.25116)
    assert name.endswith("nov:0.2512")


@pytest.mark.parametrize("name,ok", [
    ("id:000000,src:none,adm:coverage,nov:na", True),
    ("id:999999,src:00aa11bb22cc33dd,adm:both,nov:1.0000", True),
    ("id:00000,src:none,adm:coverage,nov:na", False),     # short seq
    ("id:000000,src:NONE,adm:coverage,nov:na", False),    # case
    ("id:000000,src:none,adm:crash,nov:na", False),       # bad admission
    ("id:000000,src:none,adm:coverage,nov:0.123", False), # 3 decimals
    ("id:000000,src:none,adm:coverage,nov:na,x", False),  # trailing junk
    ("id:000000,src:0123456789abcdeg,adm:coverage,nov:na", False),
    ("readme.txt", False),
])
def test_entry_name_grammar(name, ok):
    assert (ENTRY_RE.match(name) is not None) == ok


def test_every_generated_name_matches_the_grammar():
    rng = random.Random(0)
    for _ in range(200):
        parent = None if rng.random() < 0.5 else f"{rng.getrandbits(64):016x}"
        nov = None if rng.random() < 0.5 else rng.random()
        adm = rng.choice(["coverage", "novelty", "both", "initial"])
        assert ENTRY_RE.match(entry_filename(rng.randrange(10**6), parent, adm, nov))


# --- publish / scan round trip -------------------------------------------

def test_publish_scan_round_trip(tmp_path):
    layout = QueueDirLayout(tmp_path)
    entry = make_entry(b"payload-1", admission="both", nov=0.5,
                       parent="aa" * 8)
    publish(layout, "helper", entry)

    got = scan_new(layout, "master", SyncCursor())
    assert len(got) == 1
    e = got[0]
    assert e.data == b"payload-1"
    assert e.admission == "both"
    assert e.novelty_score == pytest.approx(0.5)
    assert e.parent_id == "aa" * 8
    assert e.source == "helper"
    assert e.new_edges == 0  # receivers re-execute; counts never cross the wire
    assert e.seed_id == seed_id_for(b"payload-1")


def test_scan_source_follows_peer_name(tmp_path):
    layout = QueueDirLayout(tmp_path)
    publish(layout, "master", make_entry(b"m"))
    got = scan_new(layout, "helper", SyncCursor())
    assert [e.source for e in got] == ["master"]


def test_no_redelivery_across_scans(tmp_path):
    layout = QueueDirLayout(tmp_path)
    cursor = SyncCursor()
    publish(layout, "helper", make_entry(b"a"))
    assert len(scan_new(layout, "master", cursor)) == 1
    assert scan_new(layout, "master", cursor) == []
    publish(layout, "helper", make_entry(b"b"))
    assert [e.data for e in scan_new(layout, "master", cursor)] == [b"b"]


def test_own_queue_is_not_scanned(tmp_path):
    layout = QueueDirLayout(tmp_path)
    publish(layout, "master", make_entry(b"mine"))
    assert scan_new(layout, "master", SyncCursor()) == []


def test_scan_ignores_temp_files(tmp_path):
    layout = QueueDirLayout(tmp_path)
    qdir = layout.queue_dir("helper")
    qdir.mkdir(parents=True)
    # a crashed writer leaves a dot-prefixed temp behind
    (qdir / ".tmp.id:000000,src:none,adm:coverage,nov:na").write_bytes(b"partial")
    assert scan_new(layout, "master", SyncCursor()) == []


def test_publish_leaves_no_temp_files(tmp_path):
    layout = QueueDirLayout(tmp_path)
    for i in range(10):
        publish(layout, "helper", make_entry(bytes([i])))
    names = [p.name for p in layout.queue_dir("helper").iterdir()]
    assert len(names) == 10
    assert all(ENTRY_RE.match(n) for n in names)


def test_malformed_names_skipped_with_warning(tmp_path, caplog):
    layout = QueueDirLayout(tmp_path)
    qdir = layout.queue_dir("helper")
    qdir.mkdir(parents=True)
    (qdir / "notes.txt").write_bytes(b"junk")
    publish(layout, "helper", make_entry(b"ok"))
    with caplog.at_level(logging.WARNING, logger="semfuzz.sync"):
        got = scan_new(layout, "master", SyncCursor())
    assert [e.data for e in got] == [b"ok"]
    assert any("malformed" in r.message for r in caplog.records)


def test_unreadable_entry_skipped_and_cursor_advances(tmp_path, caplog):
    layout = QueueDirLayout(tmp_path)
    qdir = layout.queue_dir("helper")
    qdir.mkdir(parents=True)
    # a directory with a valid entry name: read_bytes raises OSError
    (qdir / "id:000000,src:none,adm:coverage,nov:na").mkdir()
    cursor = SyncCursor()
    with caplog.at_level(logging.WARNING, logger="semfuzz.sync"):
        assert scan_new(layout, "master", cursor) == []
    assert any("unreadable" in r.message for r in caplog.records)
    assert cursor.position("helper") == 0  # will not be retried
    assert scan_new(layout, "master", cursor) == []


def test_publish_failure_raises_io_error(tmp_path):
    blocker = tmp_path / "root"
    blocker.write_bytes(b"")  # a file where the root dir should be
    layout = QueueDirLayout(blocker)
    with pytest.raises(IoError):
        publish(layout, "helper", make_entry(b"x"))


# --- sequence allocation -------------------------------------------------

def test_allocate_seq_counts_up(tmp_path):
    layout = QueueDirLayout(tmp_path)
    names = [publish(layout, "helper", make_entry(bytes([i]))) for i in range(3)]
    assert [n.split(",")[0] for n in names] == ["id:000000", "id:000001", "id:000002"]


def test_allocate_seq_resumes_after_restart(tmp_path):
    first = QueueDirLayout(tmp_path)
    for i in range(5):
        publish(first, "helper", make_entry(bytes([i])))
    # a fresh layout (process restart) continues where the directory left off
    second = QueueDirLayout(tmp_path)
    name = publish(second, "helper", make_entry(b"resumed"))
    assert name.startswith("id:000005,")


def test_peer_listing(tmp_path):
    layout = QueueDirLayout(tmp_path)
    for fid in ("master", "helper", "h2"):
        publish(layout, fid, make_entry(fid.encode()))
    (tmp_path / "stray_file").write_bytes(b"")
    (tmp_path / "no_queue_dir").mkdir()
    assert layout.peers("master") == ["h2", "helper"]
    assert layout.peers("helper") == ["h2", "master"]


# --- inspirational pick --------------------------------------------------

def test_select_inspirational_prefers_coverage_then_recency():
    a = make_entry(b"a", new_edges=3, created_at=0.0)
    b = make_entry(b"b", new_edges=7, created_at=1.0)
    c = make_entry(b"c", new_edges=7, created_at=2.0)
    assert select_inspirational([a, b, c]) is c
    assert select_inspirational([a, b]) is b


def test_select_inspirational_empty():
    with pytest.raises(EmptyList):
        select_inspirational([])


# --- randomized interleavings -------------------------------------------

def test_interleaved_publish_scan_delivers_exactly_once(tmp_path):
    layout = QueueDirLayout(tmp_path)
    rng = random.Random(1234)
    cursor = SyncCursor()
    published: list[bytes] = []
    delivered: list[bytes] = []
    serial = 0
    for _ in range(300):
        if rng.random() < 0.6:
            peer = rng.choice(["helper", "h2"])
            data = f"{peer}:{serial}".encode()
            serial += 1
            publish(layout, peer, make_entry(data))
            published.append(data)
        else:
            delivered.extend(e.data for e in scan_new(layout, "master", cursor))
    delivered.extend(e.data for e in scan_new(layout, "master", cursor))
    assert sorted(delivered) == sorted(published)
    assert len(delivered) == len(set(delivered))
