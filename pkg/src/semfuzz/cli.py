"""Command-line front end.

    semfuzz run -M|-S|--combined --target miniq --budget 60 --seed 1 --out out/

Exit codes: 0 clean, 1 configuration error, 2 fatal I/O error.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Optional, Sequence

from .campaign import CampaignConfig, emit_report, run
from .errors import ConfigError, IoError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semfuzz", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a fuzzing campaign")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("-M", dest="mode", action="store_const", const="master",
                      help="master: coverage-driven throughput fuzzing")
    mode.add_argument("-S", dest="mode", action="store_const", const="helper",
                      help="helper: semantics- and prompt-driven exploration")
    mode.add_argument("--combined", dest="mode", action="store_const",
                      const="single_combined",
                      help="deterministic single-process interleaving of both roles")
    p.add_argument("--target", required=True, help="registered target id")
    p.add_argument("--manifest", default="", help="API manifest path (default: target's own)")
    p.add_argument("--budget", type=float, default=60.0, metavar="SECS",
                   help="wall-clock budget in seconds")
    p.add_argument("--max-execs", type=int, default=None,
                   help="optional execution-count budget (stops at whichever bound hits first)")
    p.add_argument("--seed", type=int, default=0, metavar="U64", help="campaign rng seed")
    p.add_argument("--tau", type=float, default=0.25, help="novelty admission threshold")
    p.add_argument("--d-prime", type=int, default=64, help="reduced embedding dimension")
    p.add_argument("--k", type=int, default=5, help="candidates per generation request")
    p.add_argument("--temp", type=float, default=0.8, help="generation temperature")
    p.add_argument("--out", default="out", metavar="DIR", help="output directory")
    p.add_argument("--queue-root", default=None, metavar="DIR",
                   help="shared queue directory for master/helper sync")
    p.add_argument("--fuzzer-id", default=None, help="queue identity (default from mode)")
    p.add_argument("--llm-endpoint", default=None,
                   help="generation endpoint (env SEMFUZZ_LLM_ENDPOINT)")
    p.add_argument("--embed-endpoint", default=None,
                   help="embedding endpoint (env SEMFUZZ_EMBED_ENDPOINT)")
    p.add_argument("--api-table", default=None, help="API category table JSON")
    p.add_argument("--semantic-off", action="store_true",
                   help="ablation: disable the novelty channel")
    p.add_argument("--llm-off", action="store_true",
                   help="ablation: grammar mutations only, no remote generation")
    return parser


def _config_from_args(args: argparse.Namespace) -> CampaignConfig:
    llm = args.llm_endpoint or os.environ.get("SEMFUZZ_LLM_ENDPOINT")
    emb = args.embed_endpoint or os.environ.get("SEMFUZZ_EMBED_ENDPOINT")
    return CampaignConfig(
        target_id=args.target,
        manifest_path=args.manifest,
        mode=args.mode,
        tau=args.tau,
        d_prime=args.d_prime,
        k=args.k,
        temperature=args.temp,
        time_budget=args.budget,
        max_execs=args.max_execs,
        rng_seed=args.seed,
        outdir=args.out,
        llm_endpoint=None if args.llm_off else llm,
        embed_endpoint=emb,
        semantic_off=args.semantic_off,
        llm_off=args.llm_off,
        api_table_path=args.api_table,
        queue_root=args.queue_root,
        fuzzer_id=args.fuzzer_id,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        stats = run(config)
        paths = emit_report(stats, config.outdir)
    except ConfigError as exc:
        print(f"semfuzz: config error: {exc}", file=sys.stderr)
        return 1
    except IoError as exc:
        print(f"semfuzz: i/o error: {exc}", file=sys.stderr)
        return 2
    print(
        f"done: {stats.executions} execs at {stats.execs_per_sec:.0f}/s, "
        f"{stats.unique_bugs} unique bug(s)"
        + (f", first at {stats.ttfb:.2f}s" if stats.ttfb is not None else "")
    )
    for path in paths:
        print(f"  wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
