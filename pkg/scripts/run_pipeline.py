#!/usr/bin/env python3
"""Run the full pipeline (fetch, train, analyze, project, report) for a config.

Equivalent to invoking the five ``paramscope`` subcommands in order with
the same config file; stops at the first failing stage.
"""

import argparse
import sys

from paramscope.cli import main as run_stage

STAGES = ("fetch", "train", "analyze", "project", "report")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("config", help="experiment config file")
    parser.add_argument("--parallel", type=int, default=None,
                        help="worker processes for the training stage")
    parser.add_argument("--fixed-clock", action="store_true",
                        help="placeholder timestamps so reruns are byte-identical")
    parser.add_argument("--skip", nargs="*", choices=STAGES, default=(),
                        metavar="STAGE", help="stages to skip")
    args = parser.parse_args(argv)
    for stage in STAGES:
        if stage in args.skip:
            continue
        cmd = [stage, "--config", args.config]
        if args.parallel is not None and stage == "train":
            cmd += ["--parallel", str(args.parallel)]
        if args.fixed_clock:
            cmd.append("--fixed-clock")
        print(f"==> paramscope {stage}")
        rc = run_stage(cmd)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
