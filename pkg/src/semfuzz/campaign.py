"""Campaign orchestration: role loops, metrics, and report emission.

Three modes share one engine.  ``master`` runs coverage-guided havoc at full
speed and never talks to a model; ``helper`` runs the structured loop
(inspiration, context, generation, validate/repair, execute, admit) and
scores every execution for semantic novelty; ``single_combined`` interleaves
both roles in one process so campaigns are deterministic under a fixed seed.

Master and helper exchange seeds only through the shared queue directory;
each side re-executes scanned inputs and re-evaluates admission against its
own coverage map.
"""

from __future__ import annotations

import csv
import random
import time
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from semfuzz.errors import (ConfigError, EmptyList, DuplicateId, IoError,
                            ProviderError, UnknownFunction)
from semfuzz.executor import (ExecLimits, ExecutionRecord, dedup_crash,
                              edges_covered, execute)
from semfuzz.mutation import (DEFAULT_K, DEFAULT_TEMPERATURE, GenerationRequest,
                              GrammarMutator, build_context, build_prompt,
                              generate, load_schema, objective_for, repair,
                              validate)
from semfuzz.providers import HttpEmbeddingProvider, HttpGenerationProvider
from semfuzz.scheduler import (QueueEntry, SeedPool, admit, select_next,
                               update_energy)
from semfuzz.semantic import (DEFAULT_TAU, EMBED_DIM, REDUCED_DIM, NoveltyIndex,
                              PcaState, ReducedEmbedding, embed, novelty,
                              pca_partial_fit, pca_transform)
from semfuzz.signals import canonicalize, extract_signals
from semfuzz.sync import (QueueDirLayout, SyncCursor, publish, scan_new,
                          select_inspirational)
from semfuzz.target_model import annotate_seed, load_api_table, load_manifest
from semfuzz.testbed import get_target

MODES = ("master", "helper", "single_combined")

HAVOC_BATCH = 8            # children per master seed selection
PCA_BATCH = 256            # embeddings buffered per streaming PCA update
INDEX_REBUILD_MAX = 4096   # stop re-projecting the index once the basis settles
INDEX_SOFT_CAP = 4096      # rejected-execution sampling stops growing past this
REJECT_SAMPLE_EVERY = 16   # 1-in-N rejected executions still enter the index
SNAPSHOT_EVERY = 500       # executions between metric series rows
NOVELTY_WINDOW = 256

_INTERESTING_BYTES = (0, 1, 2, 4, 8, 16, 32, 64, 100, 127, 128, 192, 255)


@dataclass
class CampaignConfig:
    target_id: str
    manifest_path: str = ""
    mode: str = "single_combined"
    tau: float = DEFAULT_TAU
    d_prime: int = REDUCED_DIM
    k: int = DEFAULT_K
    temperature: float = DEFAULT_TEMPERATURE
    time_budget: float = 60.0
    rng_seed: int = 0
    outdir: str = "out"
    llm_endpoint: Optional[str] = None
    embed_endpoint: Optional[str] = None
    semantic_off: bool = False
    llm_off: bool = False
    api_table_path: Optional[str] = None
    max_execs: Optional[int] = None
    stop_after_first_bug: bool = False
    queue_root: Optional[str] = None
    fuzzer_id: Optional[str] = None
    sync_interval: float = 5.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.time_budget <= 0:
            raise ConfigError("time_budget must be positive")
        if self.max_execs is not None and self.max_execs <= 0:
            raise ConfigError("max_execs must be positive when given")
        if not 0 <= self.rng_seed < 2**64:
            raise ConfigError("rng_seed must fit in 64 bits")
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError("temperature must lie in [0, 2]")
        if not self.outdir:
            raise ConfigError("outdir is required")
        if self.mode == "helper" and not (self.queue_root or self.outdir):
            raise ConfigError("helper mode requires a queue root")


@dataclass(frozen=True)
class BugRecord:
    bug_id: str
    ttfb_execs: int
    admission_path: str


@dataclass
class CampaignStats:
    executions: int = 0
    execs_per_sec: float = 0.0
    llm_queries: int = 0
    llm_queries_per_hour: float = 0.0
    valid_input_rate: Optional[float] = None
    unique_bugs: int = 0
    ttfb: Optional[float] = None
    ttfb_execs: Optional[int] = None
    mean_novelty_series: list = field(default_factory=list)
    coverage_series: list = field(default_factory=list)
    bugs: list = field(default_factory=list)
    report_rows: list = field(default_factory=list)


def snapshot(stats: CampaignStats) -> CampaignStats:
    """Consistent point-in-time copy; safe to keep across further updates."""
    return replace(
        stats,
        mean_novelty_series=list(stats.mean_novelty_series),
        coverage_series=list(stats.coverage_series),
        bugs=list(stats.bugs),
        report_rows=list(stats.report_rows),
    )


def havoc(data: bytes, rng: random.Random, max_len: int = 4096) -> bytes:
    """AFL-style byte-level mutation stack; single-input ops, no splicing."""
    out = bytearray(data)
    for _ in range(1 + rng.getrandbits(2)):
        op = rng.randrange(8)
        if not out:
            op = 5
        if op == 0:
            i = rng.randrange(len(out))
            out[i] ^= 1 << rng.randrange(8)
        elif op == 1:
            i = rng.randrange(len(out))
            out[i] = rng.randrange(256)
        elif op == 2:
            i = rng.randrange(len(out))
            out[i] = (out[i] + rng.choice((-35, -1, 1, 3, 16, 64))) % 256
        elif op == 3:
            i = rng.randrange(len(out))
            out[i] = rng.choice(_INTERESTING_BYTES)
        elif op == 4 and len(out) > 1:
            i = rng.randrange(len(out))
            del out[i:i + 1 + rng.randrange(min(16, len(out) - i))]
        elif op == 5:
            i = rng.randrange(len(out) + 1)
            out[i:i] = bytes(rng.randrange(256) for _ in range(1 + rng.randrange(8)))
        elif op == 6 and out:
            i = rng.randrange(len(out))
            n = 1 + rng.randrange(min(16, len(out) - i))
            out[i:i] = out[i:i + n]
        elif op == 7 and out:
            i = rng.randrange(len(out))
            out[i] = rng.choice((0x00, 0xFF, 0x7F, 0x80))
    if not out:
        out = bytearray(b"\x00")
    return bytes(out[:max_len])


class Campaign:
    """One campaign process: state, loops, and metric bookkeeping."""

    def __init__(self, config: CampaignConfig):
        self.config = config
        try:
            self.handle = get_target(config.target_id)
        except UnknownFunction as exc:
            raise ConfigError(str(exc)) from exc
        api_table = None
        if config.api_table_path:
            api_table = load_api_table(config.api_table_path)
        manifest_path = config.manifest_path or self.handle.manifest_path
        if api_table is not None:
            self.manifest = load_manifest(manifest_path, api_table)
        else:
            self.manifest = load_manifest(manifest_path)
        self.schema = load_schema(self.handle.schema_path)
        self.annotation = annotate_seed(b"", self.manifest.entry_function, self.manifest)
        self.limits = ExecLimits()

        seed = config.rng_seed
        self.rng = random.Random(seed)
        self.pool = SeedPool(tau=config.tau, rng_seed=seed ^ 0x5EED)
        self.grammar = GrammarMutator(self.schema, seed=seed ^ 0x6E4)
        self.sample_rng = random.Random(seed ^ 0xA11)

        self.outdir = Path(config.outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.fuzzer_id = config.fuzzer_id or {
            "master": "master", "helper": "helper", "single_combined": "solo",
        }[config.mode]
        self.layout = QueueDirLayout(config.queue_root or config.outdir)
        self.cursor = SyncCursor()
        self._last_scan = 0.0

        # Semantic channel: the master role never scores anything.  Until
        # the first PCA fit the index holds full-width embeddings; reduced
        # coordinates would be meaningless before a basis exists.
        self.semantic = not config.semantic_off and config.mode != "master"
        self.pca = PcaState()
        self.index = NoveltyIndex(dim=EMBED_DIM)
        self._warm = True
        self._pca_buffer: list[np.ndarray] = []
        self._archive: list[tuple[str, np.ndarray]] = []
        self._novelty_window: deque = deque(maxlen=NOVELTY_WINDOW)
        self._rejected = 0

        self.remote_gen = None
        if config.llm_endpoint and not config.llm_off:
            self.remote_gen = HttpGenerationProvider(
                config.llm_endpoint, cache_dir=self.outdir / "cache" / "gen")
        self.remote_embed = None
        if config.embed_endpoint and self.semantic:
            self.remote_embed = HttpEmbeddingProvider(
                config.embed_endpoint, cache_dir=self.outdir / "cache" / "embed")
        self._embed_degraded = False

        self.stats = CampaignStats()
        self._records: dict[str, ExecutionRecord] = {}
        self._seen_bugs: set[str] = set()
        self._gen_total = 0
        self._gen_valid = 0
        self._helper_iter = 0
        self._t0 = 0.0
        self._deadline = 0.0
        self._last_t = 0.0

    # -- plumbing -----------------------------------------------------------

    def _done(self) -> bool:
        if time.monotonic() >= self._deadline:
            return True
        if self.config.max_execs is not None and self.stats.executions >= self.config.max_execs:
            return True
        if self.config.stop_after_first_bug and self.stats.unique_bugs >= 1:
            return True
        return False

    def _next_t(self) -> float:
        t = time.monotonic() - self._t0
        if t <= self._last_t:
            t = self._last_t + 1e-6
        self._last_t = t
        return t

    def _record_row(self) -> None:
        t = self._next_t()
        edges = edges_covered(self.pool.global_map)
        self.stats.coverage_series.append((t, edges))
        mean_nov: Optional[float] = None
        if self.semantic and self._novelty_window:
            mean_nov = float(np.mean(self._novelty_window))
            mean_nov = min(max(mean_nov, 0.0), 1.0)
            self.stats.mean_novelty_series.append((t, mean_nov))
        self.stats.report_rows.append(
            (t, self.stats.executions, edges, mean_nov, self.stats.unique_bugs))

    # -- semantic scoring ---------------------------------------------------

    def _embed_full(self, tokens) -> np.ndarray:
        if self.remote_embed is not None and not self._embed_degraded:
            try:
                return self.remote_embed.embed(tokens.tokens)
            except ProviderError:
                self._embed_degraded = True
        return embed(tokens)

    def _reduce(self, full: np.ndarray) -> ReducedEmbedding:
        if self._warm:
            return ReducedEmbedding(vector=full, norm=float(np.linalg.norm(full)),
                                    provisional=True)
        return pca_transform(self.pca, full)

    def _score(self, record: ExecutionRecord):
        """Novelty of one execution against everything indexed so far."""
        signals = extract_signals(record, self.manifest.regions)
        tokens = canonicalize(signals)
        full = self._embed_full(tokens)
        reduced = self._reduce(full)
        score = novelty(reduced, self.index)
        self._novelty_window.append(score)
        self._pca_buffer.append(full)
        if len(self._pca_buffer) >= PCA_BATCH:
            pca_partial_fit(self.pca, self._pca_buffer)
            self._pca_buffer = []
            if self._warm or self.pca.samples_seen <= INDEX_REBUILD_MAX:
                self._warm = False
                rebuilt = NoveltyIndex(dim=REDUCED_DIM)
                for eid, vec in self._archive:
                    rebuilt.insert(eid, pca_transform(self.pca, vec))
                self.index = rebuilt
                reduced = self._reduce(full)   # basis changed under us
        return score, full, reduced

    def _index_insert(self, entry_id: str, full: np.ndarray, reduced) -> None:
        try:
            self.index.insert(entry_id, reduced)
        except DuplicateId:
            return
        if self.pca.samples_seen <= INDEX_REBUILD_MAX:
            self._archive.append((entry_id, full))

    # -- execution pipeline -------------------------------------------------

    def _process_execution(self, data: bytes, record: ExecutionRecord,
                           source: str, parent: Optional[QueueEntry]) -> Optional[QueueEntry]:
        self.stats.executions += 1
        parent_admission = parent.admission if parent is not None else "initial"

        if record.outcome == "crash":
            self._register_bug(record, data, parent_admission)
            if self.stats.executions % SNAPSHOT_EVERY == 0:
                self._record_row()
            return None

        score = None
        full = reduced = None
        if self.semantic:
            score, full, reduced = self._score(record)

        entry = admit(self.pool, data, record, score, source=source,
                      annotation=self.annotation,
                      parent_id=parent.seed_id if parent else None)
        if entry is not None:
            self._records[entry.seed_id] = record
            if self.semantic and reduced is not None:
                self._index_insert(entry.seed_id, full, reduced)
            publish(self.layout, self.fuzzer_id, entry)
        elif self.semantic and reduced is not None:
            self._rejected += 1
            if self._rejected % REJECT_SAMPLE_EVERY == 0 and len(self.index) < INDEX_SOFT_CAP:
                self._index_insert(f"r:{record.input_id}", full, reduced)

        if self.stats.executions % SNAPSHOT_EVERY == 0:
            self._record_row()
        return entry

    def _register_bug(self, record: ExecutionRecord, data: bytes,
                      admission_path: str) -> None:
        bug = dedup_crash(record)
        if bug.key in self._seen_bugs:
            return
        self._seen_bugs.add(bug.key)
        self.stats.unique_bugs += 1
        if self.stats.ttfb is None:
            self.stats.ttfb = time.monotonic() - self._t0
            self.stats.ttfb_execs = self.stats.executions
        self.stats.bugs.append(BugRecord(
            bug_id=bug.key, ttfb_execs=self.stats.executions,
            admission_path=admission_path))
        crash_dir = self.outdir / "crashes" / bug.key
        try:
            crash_dir.mkdir(parents=True, exist_ok=True)
            (crash_dir / "input.bin").write_bytes(data)
            frames = record.crash_info.frames if record.crash_info else ()
            (crash_dir / "report.txt").write_text(
                f"bug_id: {bug.key}\n"
                f"signal: {record.crash_info.signal_kind if record.crash_info else '?'}\n"
                f"frames: {' < '.join(frames)}\n"
                f"found_at_exec: {self.stats.executions}\n"
                f"admission_path: {admission_path}\n")
        except OSError as exc:
            raise IoError(f"writing crash artifact for {bug.key} failed: {exc}") from exc

    def _execute(self, data: bytes) -> ExecutionRecord:
        input_id = f"i{self.stats.executions:08d}"
        return execute(data, self.handle, self.limits, input_id=input_id)

    # -- corpus and sync ----------------------------------------------------

    def _load_corpus(self) -> None:
        seeds_dir = Path(self.handle.seeds_dir)
        paths = sorted(seeds_dir.iterdir()) if seeds_dir.is_dir() else []
        for path in paths:
            if not path.is_file():
                continue
            data = path.read_bytes()
            record = self._execute(data)
            self.stats.executions += 1
            if record.outcome == "crash":
                self._register_bug(record, data, "initial")
                continue
            score = None
            if self.semantic:
                score, full, reduced = self._score(record)
            entry = self.pool.add_initial(data, record, annotation=self.annotation,
                                          novelty_score=score)
            self._records[entry.seed_id] = record
            if self.semantic:
                self._index_insert(entry.seed_id, full, reduced)
            publish(self.layout, self.fuzzer_id, entry)
        if not self.pool.entries:
            raise ConfigError(f"target {self.config.target_id!r} has no seed corpus")

    def _maybe_scan(self) -> list[QueueEntry]:
        """Pull peers' new entries and re-admit them against local state."""
        now = time.monotonic()
        if now - self._last_scan < self.config.sync_interval:
            return []
        self._last_scan = now
        admitted = []
        for scanned in scan_new(self.layout, self.fuzzer_id, self.cursor):
            if self._done():
                break
            record = self._execute(scanned.data)
            entry = self._process_execution(scanned.data, record,
                                            source=scanned.source, parent=None)
            if entry is not None:
                admitted.append(entry)
        return admitted

    # -- role loops ---------------------------------------------------------

    def _master_cycle(self) -> None:
        parent = select_next(self.pool)
        admitted = 0
        for _ in range(HAVOC_BATCH):
            if self._done():
                break
            child = havoc(parent.data, self.rng)
            record = self._execute(child)
            if self._process_execution(child, record, "master", parent) is not None:
                admitted += 1
        update_energy(self.pool, parent.seed_id, admitted)

    def _helper_cycle(self) -> None:
        scanned_admitted = self._maybe_scan() if self.config.mode == "helper" else []
        if self._done():
            return
        try:
            inspiration = select_inspirational(scanned_admitted)
        except EmptyList:
            inspiration = select_next(self.pool)

        record = self._records.get(inspiration.seed_id)
        if record is None:
            record = self._execute(inspiration.data)
        ctx = build_context(inspiration, self.annotation, record, self.manifest)
        objective = objective_for(self.handle.input_format, self._helper_iter)
        self._helper_iter += 1
        prompt = build_prompt(ctx, objective)
        req = GenerationRequest(prompt=prompt, temperature=self.config.temperature,
                                k=self.config.k)
        provider = self.remote_gen or self.grammar
        fallback = self.grammar if provider is not self.grammar else None
        candidates = generate(req, provider, seed=inspiration.data, fallback=fallback)

        admitted = 0
        for cand in candidates:
            if self._done():
                break
            violations = validate(cand.data, self.schema)
            if violations:
                cand = repair(cand, violations, self.schema, provider=self.remote_gen)
            else:
                cand = replace(cand, valid=True)
            self._gen_total += 1
            if not cand.valid:
                continue
            self._gen_valid += 1
            record = self._execute(cand.data)
            entry = self._process_execution(cand.data, record, "helper", inspiration)
            if entry is not None:
                admitted += 1
        update_energy(self.pool, inspiration.seed_id, admitted)

    # -- entry point --------------------------------------------------------

    def run(self) -> CampaignStats:
        self._t0 = time.monotonic()
        self._deadline = self._t0 + self.config.time_budget
        self._load_corpus()
        while not self._done():
            if self.config.mode == "master":
                self._master_cycle()
                self._maybe_scan()
            elif self.config.mode == "helper":
                self._helper_cycle()
            else:
                self._master_cycle()
                if not self._done():
                    self._helper_cycle()

        elapsed = max(time.monotonic() - self._t0, 1e-9)
        self.stats.execs_per_sec = self.stats.executions / elapsed
        if self.remote_gen is not None:
            self.stats.llm_queries = self.remote_gen.queries
        self.stats.llm_queries_per_hour = self.stats.llm_queries / (elapsed / 3600.0)
        if self._gen_total:
            self.stats.valid_input_rate = self._gen_valid / self._gen_total
        self._record_row()
        return self.stats


def run(config: CampaignConfig) -> CampaignStats:
    """Execute one campaign to completion and return its final stats."""
    return Campaign(config).run()


def emit_report(stats: CampaignStats, outdir: str | Path) -> list[Path]:
    """Write report.csv, summary.txt, and bugs.csv under outdir."""
    out = Path(outdir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        report = out / "report.csv"
        with report.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time", "execs", "edges", "mean_novelty", "unique_bugs"])
            for t, execs, edges, mean_nov, bugs in stats.report_rows:
                nov = f"{mean_nov:.4f}" if mean_nov is not None else "na"
                writer.writerow([f"{t:.3f}", execs, edges, nov, bugs])

        summary = out / "summary.txt"
        fmt = lambda v, spec="": ("na" if v is None else format(v, spec))
        summary.write_text(
            f"executions: {stats.executions}\n"
            f"execs_per_sec: {stats.execs_per_sec:.1f}\n"
            f"llm_queries: {stats.llm_queries}\n"
            f"llm_queries_per_hour: {stats.llm_queries_per_hour:.2f}\n"
            f"valid_input_rate: {fmt(stats.valid_input_rate, '.4f')}\n"
            f"unique_bugs: {stats.unique_bugs}\n"
            f"ttfb_seconds: {fmt(stats.ttfb, '.3f')}\n"
            f"ttfb_execs: {fmt(stats.ttfb_execs)}\n")

        bugs = out / "bugs.csv"
        with bugs.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bug_id", "ttfb_execs", "admission_path"])
            for bug in stats.bugs:
                writer.writerow([bug.bug_id, bug.ttfb_execs, bug.admission_path])
    except OSError as exc:
        raise IoError(f"emitting reports under {out} failed: {exc}") from exc
    return [report, summary, bugs]
