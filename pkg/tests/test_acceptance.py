"""Acceptance gate: one numbered end-to-end check per headline property.

Every test prints a single PASS/FAIL verdict line, so a full run reads as a
checklist.  The paired-campaign checks (criteria 4 and 5) dominate the
runtime; expect roughly an hour end to end on one core.
"""

from __future__ import annotations

import random
import time
from pathlib import Path

import numpy as np
import pytest

from semfuzz.campaign import Campaign, CampaignConfig, emit_report, run as run_campaign
from semfuzz.executor import dedup_crash, execute
from semfuzz.experiments import null_check, paired_ttfb, tau_sweep
from semfuzz.mutation import (CandidateInput, GrammarMutator, load_schema,
                              repair, validate)
from semfuzz.scheduler import QueueEntry
from semfuzz.semantic import (NoveltyConfig, NoveltyIndex, PcaState,
                              ReducedEmbedding, is_novel, novelty,
                              pca_partial_fit, retained_variance)
from semfuzz.sync import ENTRY_RE, QueueDirLayout, SyncCursor, publish, scan_new
from semfuzz.synth import (gaussian_corpus, geometric_retained,
                           geometric_spectrum, random_unit_vectors,
                           spiked_spectrum)
from semfuzz.target_model import seed_id_for
from semfuzz.testbed import get_target

from test_mutation import corrupt, valid_corpus
from test_testbed import (BAD_AGGREGATE, CHUNKY_OVERFLOW, CHUNKY_PALETTE,
                          CHUNKY_UNDERFLOW, DISSECT_OOB, DISSECT_REASSEMBLY,
                          WRONG_PLAN)


@pytest.fixture
def verdict(capsys):
    """One PASS/FAIL line per criterion, written past the capture buffer."""

    def report(num: int, name: str, ok: bool, detail: str) -> None:
        line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'} {name}: {detail}"
        with capsys.disabled():
            print(line, flush=True)
        assert ok, line

    return report


# -- 1: novelty scoring matches a brute-force nearest-neighbor oracle -----

def _brute_force_novelty(q: np.ndarray, M: np.ndarray) -> float:
    if len(M) == 0:
        return 1.0
    qn = np.linalg.norm(q)
    if qn == 0:
        return 1.0
    norms = np.linalg.norm(M, axis=1)
    cos = np.where(norms > 0, (M @ q) / (norms * qn), 0.0)
    return float(min(max(1.0 - cos.max(), 0.0), 1.0))


def test_criterion_01_novelty_oracle(verdict):
    t0 = time.monotonic()
    rng = np.random.default_rng(0)
    queries = 0
    worst = 0.0
    for size in (1, 3, 10, 100, 1000, 5000, 10000):
        M = random_unit_vectors(size, 64, rng)
        index = NoveltyIndex(dim=64)
        for j in range(size):
            index.insert(f"e{j}", ReducedEmbedding(vector=M[j], norm=1.0))
        for q in random_unit_vectors(143, 64, rng):
            got = novelty(ReducedEmbedding(vector=q, norm=float(np.linalg.norm(q))), index)
            want = _brute_force_novelty(q, M)
            worst = max(worst, abs(got - want))
            queries += 1
            assert 0.0 <= got <= 1.0

    # strict-inequality admission gate at the default threshold
    cfg = NoveltyConfig(tau=0.25)
    gate_ok = (not is_novel(0.25, cfg)) and is_novel(0.2500001, cfg) and not is_novel(0.2499, cfg)
    elapsed = time.monotonic() - t0
    ok = worst < 1e-12 and gate_ok and queries >= 1000 and elapsed < 30.0
    verdict(1, "novelty vs brute-force oracle", ok,
             f"{queries} queries, worst |diff|={worst:.2e}, strict gate at 0.25: "
             f"{gate_ok}, {elapsed:.1f}s")


# -- 2: streaming PCA agrees with a batch eigendecomposition --------------

def test_criterion_02_pca_fidelity(verdict):
    t0 = time.monotonic()
    rng = np.random.default_rng(1)
    lam = spiked_spectrum(dim=768, n_spikes=64, spike=2.0, noise=0.02)
    samples, _, _ = gaussian_corpus(5000, lam, rng)

    state = PcaState()
    for i in range(0, len(samples), 200):
        pca_partial_fit(state, list(samples[i:i + 200]))
    inc_retained = retained_variance(state, 64)

    X = samples - samples.mean(axis=0)
    w, V = np.linalg.eigh((X.T @ X) / (len(X) - 1))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    batch_retained = float(w[:64].sum() / w.sum())

    diff = abs(inc_retained - batch_retained)
    sv = np.linalg.svd(state.components[:64] @ V[:, :64], compute_uv=False)
    angle = float(np.degrees(np.arccos(np.clip(sv.min(), -1.0, 1.0))))
    orth = float(np.abs(state.components @ state.components.T
                        - np.eye(len(state.components))).max())
    elapsed = time.monotonic() - t0
    ok = diff < 0.02 and angle < 5.0 and orth < 1e-6 and elapsed < 60.0
    verdict(2, "streaming PCA vs batch oracle", ok,
             f"retained(64) {inc_retained:.4f} vs {batch_retained:.4f} "
             f"(|diff|={diff:.4f}), principal angle {angle:.2f} deg, "
             f"orthonormality {orth:.1e}, {elapsed:.1f}s")


# -- 3: retained variance, analytic spectrum and campaign corpus ----------

def test_criterion_03_retained_variance(verdict, tmp_path):
    rng = np.random.default_rng(2)
    samples, _, _ = gaussian_corpus(5000, geometric_spectrum(dim=768, ratio=0.5), rng)
    state = PcaState()
    for i in range(0, len(samples), 250):
        pca_partial_fit(state, list(samples[i:i + 250]))
    worst = 0.0
    for d in (4, 8, 16, 32, 64):
        got = retained_variance(state, d)
        want = geometric_retained(d, 768, 0.5)
        worst = max(worst, abs(got - want))
    analytic_ok = worst < 0.03

    campaign = Campaign(CampaignConfig(
        target_id="miniq", mode="single_combined", time_budget=600.0,
        max_execs=40_000, rng_seed=0, outdir=str(tmp_path / "c3")))
    campaign.run()
    live = retained_variance(campaign.pca, 64)
    live_ok = live >= 0.90
    verdict(3, "retained variance closed form + campaign floor",
             analytic_ok and live_ok,
             f"analytic worst |diff|={worst:.4f}; campaign corpus retained(64)="
             f"{live:.4f} (reported; floor 0.90)")


# -- 4: semantic feedback finds the planted logic bugs faster -------------

def test_criterion_04_paired_ttfb(verdict, capsys):
    t0 = time.monotonic()
    with capsys.disabled():
        print("[criterion 04] running 20 paired campaigns, this is the long one", flush=True)
        summary = paired_ttfb(target_id="miniq", rng_seeds=range(20), progress=True)
    elapsed = time.monotonic() - t0
    median_ok = summary.median_on <= 0.8 * summary.median_off
    rates_ok = summary.on_find_rate >= 0.70 and summary.off_find_rate <= 0.30
    p_ok = summary.sign_test_p < 0.05
    ok = median_ok and rates_ok and p_ok and elapsed < 90 * 60
    verdict(4, "paired time-to-first-bug", ok,
             f"median execs on/off {summary.median_on:.0f}/{summary.median_off:.0f} "
             f"(ratio {summary.median_ratio:.3f}), find rate on/off "
             f"{summary.on_find_rate:.2f}/{summary.off_find_rate:.2f}, "
             f"sign test p={summary.sign_test_p:.2e}, {elapsed/60:.1f} min")


# -- 5: the null target shows no semantic effect --------------------------

def test_criterion_05_null_target(verdict, capsys):
    with capsys.disabled():
        print("[criterion 05] running 10 paired 60 s null-target campaigns", flush=True)
        res = null_check(target_id="mathbench", rng_seeds=range(10), time_budget=60.0,
                         progress=True)
    cov = res.coverage_rel_diff()
    nov = res.mean_novelty()
    ok = cov < 0.01 and nov < 0.05
    verdict(5, "null-result target", ok,
             f"coverage rel diff {cov:.4f} (< 0.01), mean novelty {nov:.4f} (< 0.05)")


# -- 6: the admission threshold has an interior sweet spot ----------------

def test_criterion_06_tau_sensitivity(verdict, capsys):
    with capsys.disabled():
        print("[criterion 06] sweeping the admission threshold, 25 campaigns", flush=True)
        res = tau_sweep(target_id="miniq", taus=(0.15, 0.20, 0.25, 0.30, 0.35),
                        rng_seeds=range(5), progress=True)
    means = {tau: res.mean_bugs(tau) for tau in res.taus}
    best = res.argmax_tau()
    ok = 0.20 <= best <= 0.30
    verdict(6, "tau sensitivity shape", ok,
             "mean bugs " + " ".join(f"{t:.2f}:{means[t]:.2f}" for t in res.taus)
             + f", argmax {best:.2f} in [0.20, 0.30]")


# -- 7: queue protocol is exact under heavy interleaving ------------------

def test_criterion_07_sync_protocol(verdict, tmp_path):
    t0 = time.monotonic()
    layout = QueueDirLayout(tmp_path)
    rng = random.Random(7)
    cursor = SyncCursor()

    def entry(data: bytes) -> QueueEntry:
        return QueueEntry(seed_id=seed_id_for(data), data=data, source="master",
                          admission="coverage", new_edges=1, energy=1.0,
                          created_at=0.0,
                          novelty_score=rng.random() if rng.random() < 0.5 else None)

    # byte exactness on adversarial payloads
    exact = bytes(range(256)) * 3
    publish(layout, "peer0", entry(exact))
    got = scan_new(layout, "self", cursor)
    byte_exact = len(got) == 1 and got[0].data == exact

    published: list[bytes] = []
    delivered: list[bytes] = [g.data for g in got]
    partials = 0
    for i in range(10_000):
        peer = f"peer{rng.randrange(3)}"
        data = f"{peer}/{i}".encode()
        publish(layout, peer, entry(data))
        published.append(data)
        if rng.random() < 0.002:  # a writer dying before its atomic rename
            qdir = layout.queue_dir(peer)
            (qdir / f".tmp.id:{900000 + i:06d},src:none,adm:coverage,nov:na"
             ).write_bytes(b"partial write")
            partials += 1
        if rng.random() < 0.05:
            delivered.extend(e.data for e in scan_new(layout, "self", cursor))
    delivered.extend(e.data for e in scan_new(layout, "self", cursor))

    exactly_once = sorted(delivered) == sorted([exact] + published)
    visible_ok = all(
        ENTRY_RE.match(p.name)
        for peer in ("peer0", "peer1", "peer2")
        for p in layout.queue_dir(peer).iterdir()
        if not p.name.startswith(".")
    )
    no_partial_delivered = all(d != b"partial write" for d in delivered)
    elapsed = time.monotonic() - t0
    ok = byte_exact and exactly_once and visible_ok and no_partial_delivered
    verdict(7, "sync protocol at scale", ok,
             f"10000 publishes, {len(delivered)} delivered exactly once, "
             f"{partials} injected partial writes ignored, byte-exact "
             f"round trip {byte_exact}, {elapsed:.1f}s")


# -- 8: validator and repair survive random corruption --------------------

def test_criterion_08_validator_repair(verdict):
    t0 = time.monotonic()
    rng = random.Random(8)
    cases = []
    for target_id in ("miniq", "chunky", "dissect"):
        handle = get_target(target_id)
        schema = load_schema(handle.schema_path)
        cases.append((schema, valid_corpus(handle)))

    repaired_claims = 0
    revalidated = 0
    for i in range(10_000):
        schema, seeds = cases[i % len(cases)]
        data = corrupt(rng.choice(seeds), rng)
        violations = validate(data, schema)
        if not violations:
            continue
        fixed = repair(CandidateInput(data=data, origin="provider"), violations, schema)
        if fixed.valid:
            repaired_claims += 1
            revalidated += not validate(fixed.data, schema)
    round_trip_ok = repaired_claims > 0 and revalidated == repaired_claims

    miniq = get_target("miniq")
    schema = load_schema(miniq.schema_path)
    mutator = GrammarMutator(schema, seed=8)
    seeds = valid_corpus(miniq)
    valid = 0
    n_mutants = 1000
    for _ in range(n_mutants):
        child = mutator.mutate(rng.choice(seeds), objective="")
        valid += not validate(child, schema)
    rate = valid / n_mutants
    elapsed = time.monotonic() - t0
    ok = round_trip_ok and rate >= 0.95
    verdict(8, "validator/repair round trip", ok,
             f"{repaired_claims} repairs claimed valid, {revalidated} revalidated; "
             f"grammar valid rate {rate:.3f} (>= 0.95), {elapsed:.1f}s")


# -- 9: campaigns are reproducible under a fixed seed ---------------------

def test_criterion_09_determinism(verdict, tmp_path):
    def one(tag: str):
        out = tmp_path / tag
        stats = run_campaign(CampaignConfig(
            target_id="chunky", mode="single_combined", time_budget=600.0,
            max_execs=2500, rng_seed=99, outdir=str(out)))
        emit_report(stats, out / "rep")
        return stats, (out / "rep" / "bugs.csv").read_bytes()

    a, bugs_a = one("a")
    b, bugs_b = one("b")
    ok = (a.executions == b.executions and bugs_a == bugs_b
          and a.coverage_series[-1][1] == b.coverage_series[-1][1])
    verdict(9, "determinism", ok,
             f"executions {a.executions}=={b.executions}, bugs.csv byte-equal "
             f"{bugs_a == bugs_b} ({a.unique_bugs} bugs)")


# -- 10: crash dedup collapses variants and separates bugs ----------------

def test_criterion_10_dedup(verdict):
    miniq = get_target("miniq")
    variants = [
        b"GET items WHERE id = 3 AND price < 40 ORDER price DESC LIMIT 2",
        b"GET items WHERE id = 9 AND price < 40 ORDER price DESC LIMIT 2",
        b"GET items WHERE id = 3 AND price < 12 ORDER price DESC LIMIT 2",
        b"GET items WHERE id = 3 AND price < 40 ORDER price DESC LIMIT 7",
        b"GET  items  WHERE id = 5 AND price < 8 ORDER price DESC LIMIT 1",
    ]
    keys = set()
    for data in variants:
        record = execute(data, miniq)
        assert record.outcome == "crash"
        keys.add(dedup_crash(record).key)
    collapse_ok = len(keys) == 1

    planted = [
        ("chunky", CHUNKY_OVERFLOW), ("chunky", CHUNKY_UNDERFLOW),
        ("chunky", CHUNKY_PALETTE), ("dissect", DISSECT_OOB),
        ("dissect", DISSECT_REASSEMBLY), ("miniq", WRONG_PLAN),
        ("miniq", BAD_AGGREGATE),
    ]
    all_keys = set()
    for target_id, data in planted:
        record = execute(data, get_target(target_id))
        assert record.outcome == "crash"
        all_keys.add(dedup_crash(record).key)
    distinct_ok = len(all_keys) == len(planted)
    verdict(10, "crash deduplication", collapse_ok and distinct_ok,
             f"5 variants -> {len(keys)} bug id; {len(planted)} planted bugs -> "
             f"{len(all_keys)} distinct ids")
