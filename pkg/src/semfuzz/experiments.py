"""Paired campaign experiments: TTFB comparisons, tau sweeps, null checks.

These drive the same campaign entry point the CLI uses, just many times with
shared rng seeds across arms.  Everything here is offline: no endpoints are
configured, so generation falls back to the grammar mutator and embeddings
come from the built-in feature hasher.
"""

from __future__ import annotations

import math
import shutil
import statistics
import tempfile
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .campaign import CampaignConfig, CampaignStats, run

DEFAULT_TIME_BUDGET = 120.0
DEFAULT_EXEC_BUDGET = 500_000


@dataclass
class PairedRun:
    rng_seed: int
    on_found: bool
    off_found: bool
    # TTFB in executions; censored runs carry the exec count at stop
    on_ttfb: float
    off_ttfb: float
    on_censored: bool
    off_censored: bool


@dataclass
class PairedSummary:
    pairs: list[PairedRun]
    on_find_rate: float
    off_find_rate: float
    median_on: float
    median_off: float
    median_ratio: float
    wins: int
    losses: int
    ties: int
    sign_test_p: float


def sign_test_p(wins: int, losses: int) -> float:
    """One-sided exact binomial p-value, ties already excluded."""
    m = wins + losses
    if m == 0:
        return 1.0
    return sum(math.comb(m, i) for i in range(wins, m + 1)) / 2.0**m


def _one_run(
    target_id: str,
    rng_seed: int,
    semantic_off: bool,
    time_budget: float,
    max_execs: Optional[int],
    stop_after_first_bug: bool,
    tau: float = 0.25,
) -> CampaignStats:
    out = tempfile.mkdtemp(prefix="semfuzz_exp_")
    try:
        cfg = CampaignConfig(
            target_id=target_id,
            mode="single_combined",
            tau=tau,
            rng_seed=rng_seed,
            time_budget=time_budget,
            max_execs=max_execs,
            stop_after_first_bug=stop_after_first_bug,
            outdir=out,
            semantic_off=semantic_off,
        )
        return run(cfg)
    finally:
        shutil.rmtree(out, ignore_errors=True)


def paired_ttfb(
    target_id: str = "miniq",
    rng_seeds: Sequence[int] = tuple(range(20)),
    time_budget: float = DEFAULT_TIME_BUDGET,
    max_execs: Optional[int] = DEFAULT_EXEC_BUDGET,
    progress: bool = False,
) -> PairedSummary:
    """Run semantic-on vs semantic-off campaign pairs sharing rng seeds.

    Each arm stops at its first unique bug or at the budget, whichever comes
    first; a run that never finds a bug is censored at its execution count.
    The sign test counts a win when the on arm's TTFB (in executions) beats
    the off arm's, and drops pairs where both arms are censored.
    """
    pairs = []
    for seed in rng_seeds:
        s_on = _one_run(target_id, seed, False, time_budget, max_execs, True)
        s_off = _one_run(target_id, seed, True, time_budget, max_execs, True)
        on_c = s_on.ttfb_execs is None
        off_c = s_off.ttfb_execs is None
        pr = PairedRun(
            rng_seed=seed,
            on_found=not on_c,
            off_found=not off_c,
            on_ttfb=float(s_on.ttfb_execs if not on_c else s_on.executions),
            off_ttfb=float(s_off.ttfb_execs if not off_c else s_off.executions),
            on_censored=on_c,
            off_censored=off_c,
        )
        pairs.append(pr)
        if progress:
            print(
                f"  pair seed={seed}: on={'%.0f' % pr.on_ttfb}{'c' if on_c else ''}"
                f" off={'%.0f' % pr.off_ttfb}{'c' if off_c else ''}",
                flush=True,
            )
    return summarize_pairs(pairs)


def summarize_pairs(pairs: list[PairedRun]) -> PairedSummary:
    n = len(pairs)
    wins = losses = ties = 0
    for p in pairs:
        if p.on_censored and p.off_censored:
            ties += 1
        elif p.on_ttfb < p.off_ttfb:
            wins += 1
        elif p.off_ttfb < p.on_ttfb:
            losses += 1
        else:
            ties += 1
    med_on = statistics.median(p.on_ttfb for p in pairs)
    med_off = statistics.median(p.off_ttfb for p in pairs)
    return PairedSummary(
        pairs=pairs,
        on_find_rate=sum(p.on_found for p in pairs) / n,
        off_find_rate=sum(p.off_found for p in pairs) / n,
        median_on=med_on,
        median_off=med_off,
        median_ratio=med_on / med_off if med_off > 0 else float("inf"),
        wins=wins,
        losses=losses,
        ties=ties,
        sign_test_p=sign_test_p(wins, losses),
    )


@dataclass
class TauSweepResult:
    taus: list[float]
    # bugs_by_tau[tau] lists unique-bug counts, one per rng seed
    bugs_by_tau: dict[float, list[int]] = field(default_factory=dict)

    def mean_bugs(self, tau: float) -> float:
        counts = self.bugs_by_tau[tau]
        return sum(counts) / len(counts)

    def argmax_tau(self) -> float:
        return max(self.taus, key=lambda t: (self.mean_bugs(t), -t))


def tau_sweep(
    target_id: str = "miniq",
    taus: Sequence[float] = (0.15, 0.20, 0.25, 0.30, 0.35),
    rng_seeds: Sequence[int] = tuple(range(5)),
    max_execs: int = 60_000,
    time_budget: float = 120.0,
    progress: bool = False,
) -> TauSweepResult:
    """Count unique bugs per campaign across an admission-threshold grid."""
    result = TauSweepResult(taus=list(taus))
    for tau in taus:
        counts = []
        for seed in rng_seeds:
            stats = _one_run(
                target_id, seed, False, time_budget, max_execs, False, tau=tau
            )
            counts.append(stats.unique_bugs)
            if progress:
                print(f"  tau={tau:.2f} seed={seed}: bugs={stats.unique_bugs}", flush=True)
        result.bugs_by_tau[tau] = counts
    return result


@dataclass
class NullCheckResult:
    edges_on: list[int]
    edges_off: list[int]
    mean_novelty_on: list[float]

    def coverage_rel_diff(self) -> float:
        diffs = []
        for a, b in zip(self.edges_on, self.edges_off):
            diffs.append(abs(a - b) / max(a, b, 1))
        return sum(diffs) / len(diffs)

    def mean_novelty(self) -> float:
        return sum(self.mean_novelty_on) / len(self.mean_novelty_on)


def _final_edges(stats: CampaignStats) -> int:
    return stats.coverage_series[-1][1] if stats.coverage_series else 0


def _mean_novelty(stats: CampaignStats) -> float:
    vals = [v for _, v in stats.mean_novelty_series]
    return sum(vals) / len(vals) if vals else 0.0


def null_check(
    target_id: str = "mathbench",
    rng_seeds: Sequence[int] = tuple(range(10)),
    time_budget: float = 60.0,
    max_execs: Optional[int] = None,
    progress: bool = False,
) -> NullCheckResult:
    """Paired runs on a signal-flat target: semantics should change nothing.

    On a target whose outputs barely vary, the novelty channel should stay
    quiet (mean novelty near zero) and coverage should match the ablated arm.
    """
    res = NullCheckResult(edges_on=[], edges_off=[], mean_novelty_on=[])
    for seed in rng_seeds:
        s_on = _one_run(target_id, seed, False, time_budget, max_execs, False)
        s_off = _one_run(target_id, seed, True, time_budget, max_execs, False)
        res.edges_on.append(_final_edges(s_on))
        res.edges_off.append(_final_edges(s_off))
        res.mean_novelty_on.append(_mean_novelty(s_on))
        if progress:
            print(
                f"  seed={seed}: edges on/off {res.edges_on[-1]}/{res.edges_off[-1]}"
                f" mean_nov={res.mean_novelty_on[-1]:.4f}",
                flush=True,
            )
    return res
