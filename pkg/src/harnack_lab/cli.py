"""Command line interface: ``harnack-lab run | compare | cache``.

Exit codes: 0 all verdicts pass, 1 some check failed, 2 a solver or
configuration error (including an exceeded time budget).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="harnack-lab", description="Run Harnack and entropy experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config and write a report bundle")
    run.add_argument("config", type=Path)
    run.add_argument("--resolution", type=int)
    run.add_argument("--out", type=Path, help="output directory (overrides the config)")
    run.add_argument("--suite", action="append", choices=harness.SUITES,
                     help="restrict to this suite (repeatable)")
    run.add_argument("--seed", type=int)
    run.add_argument("--budget-seconds", type=float)
    run.add_argument("--no-cache", action="store_true", help="do not read or write the flow cache")

    cmp_ = sub.add_parser("compare", help="compare a bundle against a baseline bundle")
    cmp_.add_argument("bundle", type=Path)
    cmp_.add_argument("baseline", type=Path)
    cmp_.add_argument("--threshold", type=float, default=0.01, help="relative drift allowed (default 1%%)")
    cmp_.add_argument("--out", type=Path, help="write the per-metric diff CSV here")

    cache = sub.add_parser("cache", help="manage the flow cache")
    cache_sub = cache.add_subparsers(dest="action", required=True)
    build = cache_sub.add_parser("build", help="precompute the flow of a config")
    build.add_argument("config", type=Path)
    build.add_argument("--resolution", type=int)
    cache_sub.add_parser("clear", help="delete cached flows")
    cache_sub.add_parser("path", help="print the cache directory")
    return p


def _cmd_run(args):
    cfg = harness.ExperimentConfig.load(args.config)
    cfg = cfg.replace(resolution=args.resolution, seed=args.seed, budget_seconds=args.budget_seconds,
                      output=str(args.out) if args.out else None, suites=args.suite)
    flow = None
    if args.no_cache:
        flow = harness.get_flow(cfg, use_cache=False)
    bundle = harness.run_experiment(cfg, flow=flow)
    for suite, verdict in bundle.suite_verdicts.items():
        line = f"{suite:18s} {verdict}"
        if suite in bundle.errors:
            line += f"  ({bundle.errors[suite]})"
        print(line)
    for suite, q in bundle.failures:
        print(f"  failed: {suite}/{q}")
    print(f"verdict {bundle.verdict}  ({bundle.wall_time:.1f} s)  -> {cfg.output}")
    return {"pass": EXIT_PASS, "fail": EXIT_FAIL}.get(bundle.verdict, EXIT_ERROR)


def _cmd_compare(args):
    diff = harness.compare_baseline(args.bundle, args.baseline, threshold=args.threshold)
    if args.out:
        args.out.write_text(diff.to_csv())
    for e in diff.entries:
        if e[5] > e[6]:
            print(f"drift {e[0]}/{e[1]} {e[2]}: {e[3]:.6g} vs {e[4]:.6g} (|diff| {e[5]:.3g} > {e[6]:.3g})")
    for s, q in diff.missing:
        print(f"missing in baseline: {s}/{q}")
    for s, q, old, new in diff.verdict_changes:
        print(f"verdict changed {s}/{q}: {old} -> {new}")
    print(f"compare {diff.verdict}  max drift {diff.max_drift:.3g}  "
          f"({'same' if diff.same_resolution else 'different'} resolution)")
    return EXIT_PASS if diff.passed else EXIT_FAIL


def _cmd_cache(args):
    if args.action == "clear":
        print(f"removed {harness.cache_clear()} cached flows from {harness.cache_dir()}")
    elif args.action == "path":
        print(harness.cache_dir())
    else:
        cfg = harness.ExperimentConfig.load(args.config).replace(resolution=args.resolution)
        path = harness.cache_build(cfg)
        print(f"cached {path}" if path else "static background: nothing to cache")
    return EXIT_PASS


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": _cmd_run, "compare": _cmd_compare, "cache": _cmd_cache}[args.command](args)
    except (harness.ConfigError, OSError, KeyError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
