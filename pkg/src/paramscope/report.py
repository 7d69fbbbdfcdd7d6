"""Report generation: SVG figures plus an index.json from run artifacts.

Reads the manifest, the analysis CSV/density JSONs, and (when present)
projection CSVs, and writes one figure per panel into ``report/``:
convergence curves, mean/sigma scatters, weight-density overlays, node
strength scatters (absolute and signed variants), and 2-D embeddings.
Figure files are deterministic; the index maps each file to its figure
kind and panel.
"""

from __future__ import annotations

import json
from pathlib import Path

from .analysis import read_stats_csv
from .models import ANALYSIS_GROUPS, WHOLE_NET
from .svgplot import render_density, render_lines, render_scatter
from .trainer import load_manifest
from .tsne import read_embedding_csv

# display title per analysis group, echoing the figure panel headings
PANEL_TITLES = {
    "dnn": {"ip_fc1": "I/P-FC1", "fc1_fc2": "FC1-FC2", "fc2_op": "FC2-O/P",
            WHOLE_NET: "Whole Net"},
    "cnn": {"conv1": "Conv1", "fc": "FC", WHOLE_NET: "All"},
    "vit": {"attn": "Attn", "mlp": "MLP", "norm": "Norm", WHOLE_NET: "All"},
}

# node-strength scatter pairs per family
STRENGTH_PAIRS = {
    "dnn": (("ip_fc1", "fc1_fc2"), ("ip_fc1", "fc2_op"), ("fc1_fc2", "fc2_op")),
    "cnn": (("conv1", "fc"),),
    "vit": (("attn", "mlp"), ("mlp", "norm"), ("attn", "norm")),
}

STRENGTH_COLUMNS = {"abs": "mean_S", "plus": "mean_S_plus", "minus": "mean_S_minus"}
STRENGTH_LABEL = {"abs": "S", "plus": "S+", "minus": "S-"}


class ReportError(RuntimeError):
    """Missing upstream artifacts; message says which command to run."""


def emit_report(out_dir) -> dict:
    """Write all figures + index.json for one experiment directory."""
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    family = manifest["config"]["spec"]["family"]
    groups = list(ANALYSIS_GROUPS[family]) + [WHOLE_NET]
    titles = PANEL_TITLES[family]

    stats_path = out_dir / "analysis" / "stats.csv"
    if not stats_path.exists():
        raise ReportError(
            f"{stats_path} not found; run `paramscope analyze` on this "
            f"directory before `paramscope report`")
    stats_rows = read_stats_csv(stats_path)

    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    index: dict[str, dict] = {}

    def emit(name: str, svg: str, kind: str, group: str | None, title: str):
        (report_dir / name).write_text(svg)
        entry = {"kind": kind, "title": title}
        if group is not None:
            entry["group"] = group
            entry["panel"] = titles[group]
        index[name] = entry

    # convergence curves (per-epoch training loss, colored by final accuracy)
    series = []
    for rec in manifest["trials"]:
        losses = rec["train_loss"]
        if losses:
            series.append((list(range(1, len(losses) + 1)), losses,
                           rec["final_test_acc"]))
    emit("convergence.svg",
         render_lines(series, "Training loss per epoch", "epoch", "training loss"),
         "convergence", None, "Training loss per epoch")

    # mean/sigma scatters and strength scatters come from the stats CSV
    by_group: dict[str, list[dict]] = {g: [] for g in groups}
    for row in stats_rows:
        if row["group"] in by_group:
            by_group[row["group"]].append(row)

    for group in groups:
        rows = by_group[group]
        pts = [(r["mu"], r["sigma"], r["accuracy"]) for r in rows]
        emit(f"stats_{group}.svg",
             render_scatter(pts, f"Weight mean vs std: {titles[group]}",
                            "mean of weights", "std of weights"),
             "stats_scatter", group, f"Weight mean vs std: {titles[group]}")

    for group_a, group_b in STRENGTH_PAIRS[family]:
        for sign, column in STRENGTH_COLUMNS.items():
            rows_a = {r["trial_id"]: r for r in by_group[group_a]}
            rows_b = {r["trial_id"]: r for r in by_group[group_b]}
            pts = [(rows_a[tid][column], rows_b[tid][column],
                    rows_a[tid]["accuracy"])
                   for tid in sorted(rows_a) if tid in rows_b]
            lab = STRENGTH_LABEL[sign]
            title = (f"Node strength {lab}: {titles[group_a]} vs {titles[group_b]}")
            suffix = "" if sign == "abs" else f"_{sign}"
            emit(f"strength_{group_a}_vs_{group_b}{suffix}.svg",
                 render_scatter(pts, title,
                                f"mean {lab} ({titles[group_a]})",
                                f"mean {lab} ({titles[group_b]})"),
                 f"strength_scatter_{sign}", None, title)

    # density overlays
    for group in groups:
        dens_path = out_dir / "analysis" / f"density_{group}.json"
        if not dens_path.exists():
            raise ReportError(
                f"{dens_path} not found; run `paramscope analyze` before report")
        payload = json.loads(dens_path.read_text())
        title = f"Weight density: {titles[group]}"
        emit(f"density_{group}.svg",
             render_density(payload["trials"], title),
             "density", group, title)

    # embeddings (optional: projection step may not have run)
    skipped = []
    for group in ANALYSIS_GROUPS[family]:
        emb_path = out_dir / "projection" / f"embedding_{group}.csv"
        if not emb_path.exists():
            skipped.append(group)
            continue
        rows = read_embedding_csv(emb_path)
        pts = [(r["x"], r["y"], r["accuracy"]) for r in rows]
        title = f"2-D weight embedding: {titles[group]}"
        emit(f"embedding_{group}.svg",
             render_scatter(pts, title, "dim 1", "dim 2"),
             "embedding", group, title)

    index_payload = {"family": family, "figures": index}
    if skipped:
        index_payload["embeddings_skipped"] = {
            g: "projection output missing (run `paramscope project`)"
            for g in skipped}
    (report_dir / "index.json").write_text(
        json.dumps(index_payload, indent=2, sort_keys=True) + "\n")
    return index_payload
