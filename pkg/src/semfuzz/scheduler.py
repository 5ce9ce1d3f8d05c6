"""Seed pool, admission, and energy-weighted scheduling.

Admission is a disjunction: a mutant enters the pool if it covers a new edge
bucket or if its behavior embedding is novel relative to everything admitted
so far.  Either path alone suffices; the admission tag records which fired.

The energy law lives in exactly one function (seed_energy) so experiments can
swap scheduling policies without touching pool bookkeeping.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass
from typing import Optional

import numpy as np

from semfuzz.errors import EmptyPool, UnknownSeed
from semfuzz.executor import MAP_SIZE, ExecutionRecord, coverage_delta
from semfuzz.semantic import DEFAULT_TAU, NoveltyConfig, is_novel
from semfuzz.target_model import SeedAnnotation, seed_id_for

SOURCES = ("master", "helper", "initial")
ADMISSIONS = ("coverage", "novelty", "both", "initial")

ENERGY_MIN = 0.1
ENERGY_MAX = 100.0
CHILD_BONUS = 1.2
BARREN_DECAY = 0.9
API_BONUS = 1.5
HELPER_SOURCE_BONUS = 1.5


@dataclass
class QueueEntry:
    seed_id: str
    data: bytes
    source: str
    admission: str
    new_edges: int
    energy: float
    created_at: float
    novelty_score: Optional[float] = None
    annotation: Optional[SeedAnnotation] = None
    parent_id: Optional[str] = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.admission not in ADMISSIONS:
            raise ValueError(f"unknown admission {self.admission!r}")


def seed_energy(novelty_score: Optional[float], new_edges: int,
                annotation: Optional[SeedAnnotation], source: str = "initial") -> float:
    """The scheduling energy for a freshly admitted seed.

    Multiplicative boosts: semantic novelty, log-damped coverage gain, a
    flat bonus for seeds whose reachable code touches at least two API
    categories, and another for helper-originated seeds so structured
    inputs get a head start in the master's queue.
    """
    energy = 1.0
    if novelty_score is not None:
        energy *= 1.0 + novelty_score
    energy *= 1.0 + math.log2(1.0 + new_edges)
    if annotation is not None and len(annotation.touched_api_categories) >= 2:
        energy *= API_BONUS
    if source == "helper":
        energy *= HELPER_SOURCE_BONUS
    return energy


class SeedPool:
    """Ordered pool of admitted seeds plus the global coverage map.

    Entries are never culled; energy decay is the only pressure against
    stale seeds.
    """

    def __init__(self, tau: float = DEFAULT_TAU, rng_seed: int = 0):
        self.tau = tau
        # tau outside (0,1) switches the semantic channel off entirely;
        # admission then reduces to coverage-only behavior.
        self.novelty_config = NoveltyConfig(tau=tau) if 0.0 < tau < 1.0 else None
        self.entries: list[QueueEntry] = []
        self.by_id: dict[str, QueueEntry] = {}
        self.global_map = np.zeros(MAP_SIZE, dtype=np.uint8)
        self.rng = random.Random(rng_seed)
        self._clock = itertools.count()

    def __len__(self) -> int:
        return len(self.entries)

    def _insert(self, entry: QueueEntry) -> QueueEntry:
        if entry.seed_id in self.by_id:
            return self.by_id[entry.seed_id]
        self.entries.append(entry)
        self.by_id[entry.seed_id] = entry
        return entry

    def add_initial(self, data: bytes, record: ExecutionRecord,
                    annotation: Optional[SeedAnnotation] = None,
                    novelty_score: Optional[float] = None) -> QueueEntry:
        """Admit a corpus seed unconditionally, merging its coverage."""
        new_edges, merged = coverage_delta(record, self.global_map)
        self.global_map = merged
        entry = QueueEntry(
            seed_id=seed_id_for(data), data=data, source="initial",
            admission="initial", new_edges=new_edges,
            energy=seed_energy(novelty_score, new_edges, annotation, "initial"),
            created_at=next(self._clock), novelty_score=novelty_score,
            annotation=annotation,
        )
        return self._insert(entry)


def admit(pool: SeedPool, data: bytes, record: ExecutionRecord,
          novelty_score: Optional[float] = None, *,
          source: str = "master", annotation: Optional[SeedAnnotation] = None,
          parent_id: Optional[str] = None) -> Optional[QueueEntry]:
    """Admission gate: new coverage or semantic novelty, else rejection.

    Returns the created entry, or None when both conditions fail.  The
    global map is only merged for admitted inputs, so rejected executions
    cannot consume coverage budget.
    """
    new_edges, merged = coverage_delta(record, pool.global_map)
    covers = new_edges > 0
    novel = (novelty_score is not None and pool.novelty_config is not None
             and is_novel(novelty_score, pool.novelty_config))
    if not covers and not novel:
        return None

    if covers and novel:
        admission = "both"
    elif covers:
        admission = "coverage"
    else:
        admission = "novelty"

    pool.global_map = merged
    entry = QueueEntry(
        seed_id=seed_id_for(data), data=data, source=source,
        admission=admission, new_edges=new_edges,
        energy=seed_energy(novelty_score, new_edges, annotation, source),
        created_at=next(pool._clock), novelty_score=novelty_score,
        annotation=annotation, parent_id=parent_id,
    )
    return pool._insert(entry)


def select_next(pool: SeedPool) -> QueueEntry:
    """Energy-weighted draw; equal energies collapse to uniform choice.

    The cumulative walk visits entries in admission order, so any boundary
    ambiguity resolves toward the oldest seed.
    """
    if not pool.entries:
        raise EmptyPool("cannot select from an empty seed pool")
    total = sum(e.energy for e in pool.entries)
    if total <= 0.0:
        return pool.entries[0]
    r = pool.rng.random() * total
    acc = 0.0
    for entry in pool.entries:
        acc += entry.energy
        if r < acc:
            return entry
    return pool.entries[-1]


def update_energy(pool: SeedPool, seed_id: str, children_admitted: int) -> float:
    """Reward fertile seeds, decay barren ones; clamp keeps both bounded."""
    entry = pool.by_id.get(seed_id)
    if entry is None:
        raise UnknownSeed(f"no pool entry with id {seed_id!r}")
    if children_admitted > 0:
        entry.energy *= CHILD_BONUS ** children_admitted
    else:
        entry.energy *= BARREN_DECAY
    entry.energy = min(max(entry.energy, ENERGY_MIN), ENERGY_MAX)
    return entry.energy
