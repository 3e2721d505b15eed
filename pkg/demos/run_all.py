"""Run every demo config and print the per-row verdicts.

Usage: python demos/run_all.py [config ...]
"""
import sys
from pathlib import Path

from harnack_lab import harness

HERE = Path(__file__).parent


def main(paths):
    paths = [Path(p) for p in paths] or sorted((HERE / "configs").glob("*.toml"))
    status = 0
    for path in paths:
        cfg = harness.ExperimentConfig.load(path)
        cfg = cfg.replace(output=str(HERE / cfg.output))
        bundle = harness.run_experiment(cfg)
        print(f"\n{cfg.name}: {bundle.verdict} in {bundle.wall_time:.1f} s  ({cfg.output})")
        for suite, rows in bundle.rows.items():
            for r in rows:
                print(f"  {suite:17s} {r['quantity']:42s} min {r['value_min']:+.3e}  max {r['value_max']:+.3e}"
                      f"  tol {r['tolerance']:.1e}  {r['verdict']}")
        for suite, msg in bundle.errors.items():
            print(f"  {suite}: {msg}")
        status |= bundle.verdict != "pass"
    return status


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
