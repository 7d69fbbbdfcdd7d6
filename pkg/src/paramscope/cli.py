"""Command line interface: fetch -> train -> analyze -> project -> report.

Every subcommand is idempotent and driven by a config file (see
:mod:`paramscope.config`); common flags override config values.  Errors
print one structured line to stderr (``paramscope: error: <kind>:
<message>``) and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .analysis import analyze_experiment
from .config import (ConfigError, check_strict, default_config, load_config,
                     render_config, thresholds_from_config,
                     train_config_from_config)
from .data import ChecksumError, DownloadError, fetch
from .models import ANALYSIS_GROUPS
from .report import ReportError, emit_report
from .trainer import load_manifest, run_experiment
from .tsne import project_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paramscope",
        description="Train populations of small networks and characterize "
                    "optimal vs suboptimal solutions via weight statistics "
                    "and 2-D embeddings.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("fetch", "download and verify the configured dataset"),
            ("train", "run the configured population of trials"),
            ("analyze", "compute weight statistics, densities, and labels"),
            ("project", "embed per-trial weights in 2-D per cohort"),
            ("report", "render SVG figures and an index from artifacts")):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, default=None,
                         help="config file (defaults apply if omitted)")
        cmd.add_argument("--out", type=Path, default=None,
                         help="experiment output directory (overrides config)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override experiment.base_seed")
        cmd.add_argument("--subset", type=int, default=None,
                         help="train on the first N shuffled examples")
        cmd.add_argument("--parallel", type=int, default=None,
                         help="worker processes for training trials")
        cmd.add_argument("--strict-paper-mode", action="store_true",
                         help="reject configs deviating from the reference "
                              "training settings (20 epochs, batch 100, "
                              "Adam 1e-3, full training set)")
        cmd.add_argument("--fixed-clock", action="store_true",
                         help="write placeholder timestamps/durations so "
                              "reruns are byte-identical")
    return parser


def _resolve(args) -> dict:
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg["experiment"]["base_seed"] = args.seed
    if args.subset is not None:
        cfg["experiment"]["subset"] = args.subset
    if args.out is not None:
        cfg["output"]["dir"] = str(args.out)
    if args.strict_paper_mode:
        check_strict(cfg)
    return cfg


def _out_dir(cfg: dict) -> Path:
    return Path(cfg["output"]["dir"])


def cmd_fetch(args) -> int:
    cfg = _resolve(args)
    name = cfg["experiment"]["dataset"]
    paths = fetch(name, cache=cfg["data"]["cache"], sources=cfg["data"]["sources"])
    for p in paths:
        print(f"verified {p}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    parallel = args.parallel if args.parallel is not None else 1
    train_cfg = train_config_from_config(cfg, parallel=parallel,
                                         fixed_clock=args.fixed_clock)
    out = _out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(render_config(cfg))
    manifest = run_experiment(train_cfg, out)
    accs = [t["final_test_acc"] for t in manifest["trials"]]
    diverged = sum(t["diverged"] for t in manifest["trials"])
    print(f"trained {len(accs)} trials -> {out} "
          f"(best acc {max(accs):.2f}, diverged {diverged})")
    return 0


def cmd_analyze(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    paths = analyze_experiment(
        out, bins=cfg["analysis"]["bins"], bandwidth=cfg["analysis"]["bandwidth"],
        thresholds=thresholds_from_config(cfg))
    print(f"wrote {paths['stats_csv']}")
    for p in paths["density"].values():
        print(f"wrote {p}")
    return 0


def cmd_project(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    manifest = load_manifest(out)
    groups = cfg["projection"]["groups"] or \
        list(ANALYSIS_GROUPS[manifest["config"]["spec"]["family"]])
    paths = project_experiment(
        out, groups, perplexity=cfg["projection"]["perplexity"],
        iterations=cfg["projection"]["iterations"],
        seed=cfg["projection"]["seed"])
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def cmd_report(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(cfg)
    index = emit_report(out)
    print(f"wrote {out / 'report'} ({len(index['figures'])} figures)")
    return 0


_COMMANDS = {"fetch": cmd_fetch, "train": cmd_train, "analyze": cmd_analyze,
             "project": cmd_project, "report": cmd_report}

_EXPECTED_ERRORS = (ConfigError, ChecksumError, DownloadError, ReportError,
                    FileNotFoundError, ValueError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _EXPECTED_ERRORS as err:
        kind = type(err).__name__
        print(f"paramscope: error: {kind}: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
