#!/usr/bin/env python3
"""Print a text summary of a finished run: accuracy, labels, group statistics."""

import argparse
import statistics
import sys
from collections import Counter
from pathlib import Path

from paramscope.analysis import LABELS, read_stats_csv
from paramscope.trainer import load_manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("run_dir", type=Path, help="experiment output directory")
    args = parser.parse_args(argv)

    manifest = load_manifest(args.run_dir)
    trials = manifest["trials"]
    accs = [t["final_test_acc"] for t in trials]
    print(f"{manifest['config']['spec']['family']} on "
          f"{manifest['config']['dataset']}: {len(trials)} trials, "
          f"accuracy median {statistics.median(accs):.2f}, "
          f"range [{min(accs):.2f}, {max(accs):.2f}]")
    counts = Counter(t["label"] or "unlabeled" for t in trials)
    print("labels: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))

    stats_path = args.run_dir / "analysis" / "stats.csv"
    if not stats_path.exists():
        print("no analysis artifacts; run `paramscope analyze` for group statistics")
        return 0
    rows = read_stats_csv(stats_path)
    print(f"{'group':<12} {'label':<6} {'n':>3} {'mean sigma':>11} {'mean S':>9}")
    for group in dict.fromkeys(r["group"] for r in rows):
        for label in LABELS:
            sel = [r for r in rows if r["group"] == group and r["label"] == label]
            if not sel:
                continue
            print(f"{group:<12} {label:<6} {len(sel):>3} "
                  f"{statistics.mean(r['sigma'] for r in sel):>11.4f} "
                  f"{statistics.mean(r['mean_S'] for r in sel):>9.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
