"""Population analysis of trained weights.

Per trial and per weight group this module computes the mean/standard
deviation of the flattened weights (population variance, 1/N), node
strength (sum of absolute incoming weights per unit, with signed S+/S-
variants), and a normalized histogram plus Gaussian KDE with Silverman
bandwidth.  Trials are labeled into accuracy bands {non, low, mid, high},
where ``non`` additionally requires the flat-loss non-convergence
signature.  Results land in one CSV row per (trial, group) and one
density JSON per group.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import Model, ANALYSIS_GROUPS, WHOLE_NET, group_params, weight_groups
from .trainer import TrialRecord, load_checkpoint, load_manifest, write_manifest

STATS_CSV_COLUMNS = ("trial_id", "group", "N", "mu", "sigma", "mean_S",
                     "mean_S_plus", "mean_S_minus", "accuracy", "label")

LABELS = ("non", "low", "mid", "high")

NONCONV_LOSS_EPS = 0.05
NONCONV_ACC_BAND = (8.0, 15.0)

DENSITY_BINS = 60
DENSITY_GRID_POINTS = 512
DENSITY_SPAN_SIGMAS = 5.0


# ---------------------------------------------------------------------------
# weight statistics
# ---------------------------------------------------------------------------

@dataclass
class WeightStats:
    n: int
    mu: float
    sigma: float


def weight_mean_std(weights: np.ndarray) -> WeightStats:
    """Mean and population standard deviation (1/N) of a flat weight vector."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("empty weight vector")
    mu = float(w.mean())
    sigma = float(np.sqrt(np.mean((w - mu) ** 2)))
    return WeightStats(n=w.size, mu=mu, sigma=sigma)


# ---------------------------------------------------------------------------
# node strength
# ---------------------------------------------------------------------------

@dataclass
class NodeStrengths:
    """Per-unit sums of |incoming weight|; s == s_plus + s_minus."""

    s: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray

    def mean(self, sign: str = "abs") -> float:
        return float({"abs": self.s, "plus": self.s_plus,
                      "minus": self.s_minus}[sign].mean())


def _param_strengths(arr: np.ndarray):
    """Positive/negative incoming-weight sums per output unit of one tensor.

    2-D (n_in, n_out): sum over the input axis, one value per output unit.
    4-D conv (C_out, C_in, kh, kw): sum per output kernel.
    1-D norm scale: the unit's |value| itself.
    """
    if arr.ndim == 2:
        pos = np.where(arr > 0, arr, 0.0).sum(axis=0)
        neg = np.where(arr < 0, -arr, 0.0).sum(axis=0)
    elif arr.ndim == 4:
        pos = np.where(arr > 0, arr, 0.0).sum(axis=(1, 2, 3))
        neg = np.where(arr < 0, -arr, 0.0).sum(axis=(1, 2, 3))
    elif arr.ndim == 1:
        pos = np.where(arr > 0, arr, 0.0)
        neg = np.where(arr < 0, -arr, 0.0)
    else:
        raise ValueError(f"unsupported tensor rank {arr.ndim} for node strength")
    return pos, neg


def node_strength(model: Model, group: str, per_matrix: bool = False):
    """Node strengths for one analysis group (or the whole-net concat).

    With ``per_matrix=True`` returns ``{param_name: NodeStrengths}`` for
    groups spanning several matrices (e.g. ViT attention).
    """
    family = model.spec.family
    if group == WHOLE_NET:
        parts = [node_strength(model, g) for g in ANALYSIS_GROUPS[family]]
        return NodeStrengths(
            s=np.concatenate([p.s for p in parts]),
            s_plus=np.concatenate([p.s_plus for p in parts]),
            s_minus=np.concatenate([p.s_minus for p in parts]))
    named = {}
    for name, arr in group_params(model, group):
        pos, neg = _param_strengths(arr)
        named[name] = NodeStrengths(s=pos + neg, s_plus=pos, s_minus=neg)
    if per_matrix:
        return named
    return NodeStrengths(
        s=np.concatenate([v.s for v in named.values()]),
        s_plus=np.concatenate([v.s_plus for v in named.values()]),
        s_minus=np.concatenate([v.s_minus for v in named.values()]))


# ---------------------------------------------------------------------------
# density estimation
# ---------------------------------------------------------------------------

@dataclass
class DensityEstimate:
    bin_edges: np.ndarray
    hist: np.ndarray          # per-bin density, integrates to exactly 1
    grid: np.ndarray | None   # ascending KDE abscissae (None if degenerate)
    kde: np.ndarray | None
    bandwidth: float
    degenerate: bool


def silverman_bandwidth(weights: np.ndarray) -> float:
    """``0.9 * min(sigma, IQR/1.34) * N**(-1/5)`` with population sigma.

    If one spread measure is zero the other is used; returns 0.0 only when
    both are (degenerate input).
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    sigma = float(np.std(w))
    q75, q25 = np.percentile(w, [75.0, 25.0])
    iqr_term = (q75 - q25) / 1.34
    candidates = [c for c in (sigma, iqr_term) if c > 0.0]
    if not candidates:
        return 0.0
    return 0.9 * min(candidates) * w.size ** (-1.0 / 5.0)


def kde_values(weights: np.ndarray, points: np.ndarray,
               bandwidth: float | None = None) -> np.ndarray:
    """Gaussian KDE of ``weights`` evaluated at ``points``."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    pts = np.atleast_1d(np.asarray(points, dtype=np.float64))
    h = silverman_bandwidth(w) if bandwidth is None else float(bandwidth)
    if h <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    out = np.empty(pts.size)
    norm = 1.0 / (math.sqrt(2.0 * math.pi) * h * w.size)
    chunk = max(1, int(4e6) // max(w.size, 1) + 1)
    for lo in range(0, pts.size, chunk):
        z = (pts[lo:lo + chunk, None] - w[None, :]) / h
        out[lo:lo + chunk] = np.exp(-0.5 * z * z).sum(axis=1) * norm
    return out


def density(weights: np.ndarray, bins: int = DENSITY_BINS,
            bandwidth: float | None = None,
            grid_points: int = DENSITY_GRID_POINTS,
            span_sigmas: float = DENSITY_SPAN_SIGMAS) -> DensityEstimate:
    """Unit-area histogram plus Gaussian KDE of a flat weight vector.

    The KDE grid spans ``mu +/- span_sigmas * sigma`` ascending.  Zero
    total spread flags the estimate degenerate (histogram only).
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("empty weight vector")
    stats = weight_mean_std(w)
    hist, edges = np.histogram(w, bins=bins, density=True)
    h = silverman_bandwidth(w) if bandwidth is None else float(bandwidth)
    if h <= 0.0 or stats.sigma == 0.0:
        return DensityEstimate(bin_edges=edges, hist=hist, grid=None, kde=None,
                               bandwidth=0.0, degenerate=True)
    grid = np.linspace(stats.mu - span_sigmas * stats.sigma,
                       stats.mu + span_sigmas * stats.sigma, grid_points)
    kde = kde_values(w, grid, bandwidth=h)
    return DensityEstimate(bin_edges=edges, hist=hist, grid=grid, kde=kde,
                           bandwidth=h, degenerate=False)


# ---------------------------------------------------------------------------
# accuracy grouping
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupThresholds:
    """Band boundaries; a boundary value always classifies upward.

    non: flat-loss signature and accuracy below ``non_below``
    low: below ``mid_min`` (and not non);  mid: [mid_min, high_min);
    high: >= high_min.
    """

    non_below: float = 15.0
    mid_min: float = 56.0
    high_min: float = 95.0

    def __post_init__(self):
        if not (0 < self.non_below <= self.mid_min <= self.high_min <= 100):
            raise ValueError(
                f"thresholds must satisfy 0 < non <= mid <= high <= 100, got "
                f"({self.non_below}, {self.mid_min}, {self.high_min})")


# inferred from reported population accuracy bands per dataset/family;
# boundaries sit midway between adjacent bands and are config-overridable
DEFAULT_THRESHOLDS = {
    ("mnist", "dnn"): GroupThresholds(15.0, 56.0, 95.0),
    ("fashion_mnist", "dnn"): GroupThresholds(15.0, 79.0, 95.0),
    ("cifar10", "dnn"): GroupThresholds(15.0, 38.0, 65.0),
    ("mnist", "cnn"): GroupThresholds(15.0, 95.5, 99.0),
    ("fashion_mnist", "cnn"): GroupThresholds(15.0, 93.0, 99.0),
    ("cifar10", "cnn"): GroupThresholds(15.0, 47.5, 77.5),
    ("mnist", "vit"): GroupThresholds(15.0, 50.0, 85.0),
    ("fashion_mnist", "vit"): GroupThresholds(15.0, 52.0, 73.0),
    ("cifar10", "vit"): GroupThresholds(15.0, 25.0, 40.0),
}


def default_thresholds(dataset: str, family: str) -> GroupThresholds:
    return DEFAULT_THRESHOLDS.get((dataset, family), GroupThresholds())


def detect_nonconvergence(record: TrialRecord,
                          eps_loss: float = NONCONV_LOSS_EPS,
                          acc_band=NONCONV_ACC_BAND) -> bool:
    """Flat training loss (range < eps) with final accuracy at chance level."""
    if not record.train_loss:
        return False
    loss_range = max(record.train_loss) - min(record.train_loss)
    return loss_range < eps_loss and acc_band[0] <= record.final_test_acc <= acc_band[1]


def classify_trial(record: TrialRecord, thresholds: GroupThresholds) -> str:
    acc = record.final_test_acc
    if acc >= thresholds.high_min:
        return "high"
    if acc >= thresholds.mid_min:
        return "mid"
    if acc < thresholds.non_below and detect_nonconvergence(record):
        return "non"
    return "low"


def classify_trials(records, thresholds: GroupThresholds) -> list:
    """Label every record in place; total over [0, 100] accuracies."""
    labels = []
    for rec in records:
        rec.label = classify_trial(rec, thresholds)
        labels.append(rec.label)
    return labels


# ---------------------------------------------------------------------------
# per-experiment extraction
# ---------------------------------------------------------------------------

def _records_from_manifest(manifest: dict) -> list:
    return [TrialRecord.from_dict(d) for d in manifest["trials"]]


def _iter_trial_models(manifest: dict, out_dir):
    out_dir = Path(out_dir)
    for rec in _records_from_manifest(manifest):
        if rec.checkpoint is None:
            continue
        model, _ = load_checkpoint(out_dir / rec.checkpoint)
        yield rec, model


def trial_stats_rows(manifest: dict, out_dir) -> list[dict]:
    """One dict per (trial, group) with the stats CSV columns."""
    rows = []
    for rec, model in _iter_trial_models(manifest, out_dir):
        groups = weight_groups(model)
        for group, vec in groups.items():
            stats = weight_mean_std(vec)
            strength = node_strength(model, group)
            rows.append({
                "trial_id": rec.trial_id, "group": group, "N": stats.n,
                "mu": stats.mu, "sigma": stats.sigma,
                "mean_S": strength.mean("abs"),
                "mean_S_plus": strength.mean("plus"),
                "mean_S_minus": strength.mean("minus"),
                "accuracy": rec.final_test_acc, "label": rec.label,
            })
    return rows


def stats_scatter(manifest: dict, out_dir, group: str):
    """(mu, sigma, accuracy, label) arrays per trial for one group."""
    mus, sigmas, accs, labels = [], [], [], []
    for rec, model in _iter_trial_models(manifest, out_dir):
        stats = weight_mean_std(weight_groups(model)[group])
        mus.append(stats.mu)
        sigmas.append(stats.sigma)
        accs.append(rec.final_test_acc)
        labels.append(rec.label)
    return np.array(mus), np.array(sigmas), np.array(accs), labels


def strength_scatter(manifest: dict, out_dir, group_a: str, group_b: str,
                     sign: str = "abs"):
    """Per-trial (mean_S[group_a], mean_S[group_b], accuracy, label).

    ``sign`` selects the strength variant: "abs" (S), "plus" (S+),
    "minus" (S-).
    """
    if sign not in ("abs", "plus", "minus"):
        raise ValueError(f"sign must be abs/plus/minus, got {sign!r}")
    xs, ys, accs, labels = [], [], [], []
    for rec, model in _iter_trial_models(manifest, out_dir):
        xs.append(node_strength(model, group_a).mean(sign))
        ys.append(node_strength(model, group_b).mean(sign))
        accs.append(rec.final_test_acc)
        labels.append(rec.label)
    return np.array(xs), np.array(ys), np.array(accs), labels


# ---------------------------------------------------------------------------
# artifact emission
# ---------------------------------------------------------------------------

def write_stats_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=STATS_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def _density_entry(rec: TrialRecord, est: DensityEstimate) -> dict:
    return {
        "trial_id": rec.trial_id,
        "accuracy": rec.final_test_acc,
        "label": rec.label,
        "bandwidth": est.bandwidth,
        "degenerate": est.degenerate,
        "hist_edges": est.bin_edges.tolist(),
        "hist": est.hist.tolist(),
        "grid": None if est.grid is None else est.grid.tolist(),
        "kde": None if est.kde is None else est.kde.tolist(),
    }


def analyze_experiment(out_dir, bins: int = DENSITY_BINS,
                       bandwidth: float | None = None,
                       thresholds: GroupThresholds | None = None) -> dict:
    """Label trials, then write stats CSV and per-group density JSONs.

    Updates the manifest in place with labels (idempotent and
    deterministic: rerunning produces byte-identical artifacts).  Returns
    ``{"stats_csv": path, "density": {group: path}}``.
    """
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    records = _records_from_manifest(manifest)
    family = manifest["config"]["spec"]["family"]
    dataset = manifest["config"]["dataset"]
    if thresholds is None:
        thresholds = default_thresholds(dataset, family)
    classify_trials(records, thresholds)
    manifest["trials"] = [rec.to_dict() for rec in records]
    manifest["thresholds"] = {"non_below": thresholds.non_below,
                              "mid_min": thresholds.mid_min,
                              "high_min": thresholds.high_min}
    write_manifest(manifest, out_dir)

    analysis_dir = out_dir / "analysis"
    analysis_dir.mkdir(parents=True, exist_ok=True)
    rows = trial_stats_rows(manifest, out_dir)
    stats_path = write_stats_csv(rows, analysis_dir / "stats.csv")

    groups = list(ANALYSIS_GROUPS[family]) + [WHOLE_NET]
    density_paths = {}
    per_group_entries = {g: [] for g in groups}
    for rec, model in _iter_trial_models(manifest, out_dir):
        vecs = weight_groups(model)
        for group in groups:
            est = density(vecs[group], bins=bins, bandwidth=bandwidth)
            per_group_entries[group].append(_density_entry(rec, est))
    for group in groups:
        payload = {"group": group, "trials": per_group_entries[group]}
        path = analysis_dir / f"density_{group}.json"
        path.write_text(json.dumps(payload) + "\n")
        density_paths[group] = path
    return {"stats_csv": stats_path, "density": density_paths}


def read_stats_csv(path) -> list[dict]:
    """Read the stats CSV back with numeric fields restored."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["trial_id"] = int(row["trial_id"])
            row["N"] = int(row["N"])
            for key in ("mu", "sigma", "mean_S", "mean_S_plus",
                        "mean_S_minus", "accuracy"):
                row[key] = float(row[key])
            rows.append(row)
    return rows
