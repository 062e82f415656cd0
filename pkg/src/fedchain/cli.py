"""Command-line entry point.

Subcommands: ``run`` executes a configured experiment and writes its
artifacts, ``selftest`` runs the brute-force protocol oracles, ``chain``
dumps or verifies a persisted ledger, and ``bench`` times block deployment
and verification across node counts.

Exit codes: 0 success, 2 configuration error, 3 aborted experiment,
1 any other failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import ledger
from .config import ConfigError, load_config
from .selftest import run_all
from .simulation import run_experiment


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seeds.master = args.seed
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = Path(args.out_dir)
    summary = run_experiment(cfg, out_dir, plaintext_debug=args.plaintext_debug)

    print(f"{'field':<34}value")
    for key in sorted(summary):
        print(f"{key:<34}{summary[key]}")
    print(f"artifacts: {out_dir}/metrics.jsonl, summary.csv, verdicts.jsonl, "
          f"timings.csv, chain.bin, models/")
    return 3 if summary["aborted"] else 0


def _cmd_selftest(_args) -> int:
    results = run_all()
    failed = False
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<10}{status:<6}{r.detail}  ({r.seconds:.2f} s)")
        failed |= not r.passed
    return 1 if failed else 0


def _cmd_chain(args) -> int:
    path = Path(args.path)
    if not path.exists():
        print(f"no chain file at {path}", file=sys.stderr)
        return 1
    chain = ledger.load_chain(str(path))
    if args.action == "dump":
        print(ledger.dump_jsonl(chain))
        return 0
    bad = ledger.validate_chain(chain)
    if bad is not None:
        print(f"invalid chain: first bad block index {bad}")
        return 1
    models_dir = Path(args.models_dir) if args.models_dir else path.parent
    missing = []
    for block in chain.blocks[1:]:
        blob_path = models_dir / block.model_ref
        if not blob_path.exists():
            missing.append(block.model_ref)
            continue
        if not ledger.verify_global(blob_path.read_bytes(), chain, block.round):
            print(f"model bytes for round {block.round} do not match the committed digest")
            return 1
    note = f" ({len(missing)} model blobs not found, digests unchecked)" if missing else ""
    print(f"ok, {len(chain)} blocks{note}")
    return 0


def _cmd_bench(args) -> int:
    node_counts = [int(x) for x in args.nodes.split(",")]
    if any(n < 2 for n in node_counts):
        print("node counts must be at least 2", file=sys.stderr)
        return 2
    deploys = {n: [] for n in node_counts}
    verifies = {n: [] for n in node_counts}
    # Repeats are interleaved across node counts so load bursts on a shared
    # machine hit every node count alike instead of skewing one column.
    # Repeat 0 is an untimed warmup.
    for rep in range(args.repeats + 1):
        for n in node_counts:
            replicas = [ledger.Chain(difficulty=args.difficulty) for _ in range(n)]
            # Pre-commit an untimed backlog so the timed appends exercise
            # realistic chain lengths.
            for r in range(args.chain_len):
                digest = hashlib.sha256(f"bench/backlog/{r}".encode()).digest()
                block = ledger.mine_block(r, digest, f"models/round_{r:04d}.bin",
                                          replicas[0], seq=r)
                for chain in replicas:
                    chain.append(block)
            # Same payload sequence for every node count and repeat: the nonce
            # searches are then identical work, so timing differences isolate
            # the per-node replication cost.
            digests = [hashlib.sha256(f"bench/{r}".encode()).digest()
                       for r in range(args.blocks)]

            t0 = time.perf_counter()
            for r, digest in enumerate(digests, start=args.chain_len):
                block = ledger.mine_block(r, digest, f"models/round_{r:04d}.bin",
                                          replicas[0], seq=r)
                for chain in replicas:
                    # Every node revalidates its replica before extending it,
                    # then persists the updated ledger image.
                    if ledger.validate_chain(chain) is not None:
                        raise RuntimeError("bench chain must validate")
                    chain.append(block)
                    chain_bytes = b"".join(b.header_bytes() + b.hash for b in chain.blocks)
                    assert chain_bytes
            if rep:
                deploys[n].append((time.perf_counter() - t0) * 1000.0 / args.blocks)

            t0 = time.perf_counter()
            for r, digest in enumerate(digests):
                votes = [ledger.NodeVote(i, r, digest) for i in range(n)]
                for chain in replicas:
                    if ledger.consensus_commit(votes, n) is None:
                        raise RuntimeError("bench votes must agree")
                    if ledger.validate_chain(chain) is not None:
                        raise RuntimeError("bench chain must validate")
            if rep:
                verifies[n].append((time.perf_counter() - t0) * 1000.0 / args.blocks)
    rows = [(n, statistics.median(deploys[n]), statistics.median(verifies[n]))
            for n in node_counts]

    lines = ["nodes,deploy_ms,verify_ms"]
    lines += [f"{n},{d:.3f},{v:.3f}" for n, d, v in rows]
    csv = "\n".join(lines) + "\n"
    print(csv, end="")
    if args.out:
        Path(args.out).write_text(csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedchain",
        description="Federated learning with encrypted model verification and "
                    "blockchain-backed secure aggregation, at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a configured experiment")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override seeds.master")
    p_run.add_argument("--out-dir", default="out", help="artifact directory")
    p_run.add_argument("--plaintext-debug", action="store_true",
                       help="bypass the secure path (plaintext verification and averaging)")
    p_run.set_defaults(func=_cmd_run)

    p_self = sub.add_parser("selftest", help="run the protocol oracles")
    p_self.set_defaults(func=_cmd_selftest)

    p_chain = sub.add_parser("chain", help="inspect a persisted chain")
    p_chain.add_argument("action", choices=("dump", "verify"))
    p_chain.add_argument("path", help="chain file")
    p_chain.add_argument("--models-dir", default=None,
                         help="base directory for model references (default: chain directory)")
    p_chain.set_defaults(func=_cmd_chain)

    p_bench = sub.add_parser("bench", help="time deploy/verify across node counts")
    p_bench.add_argument("--nodes", default="5,10,15,20", help="comma-separated node counts")
    p_bench.add_argument("--repeats", type=int, default=5)
    p_bench.add_argument("--blocks", type=int, default=8, help="blocks committed per repeat")
    p_bench.add_argument("--chain-len", type=int, default=24,
                         help="untimed backlog blocks committed before timing")
    p_bench.add_argument("--difficulty", type=int, default=2)
    p_bench.add_argument("--out", default=None, help="also write the CSV here")
    p_bench.set_defaults(func=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
