"""Exact (O(n^2)) t-SNE for embedding per-trial weight vectors in 2-D.

Affinities: squared-euclidean Gaussian conditionals with a per-row binary
search so each row's Shannon perplexity matches the target, then
symmetrized ``p_ij = (p_j|i + p_i|j) / (2n)``.  The embedding minimizes
``KL(P || Q)`` with the Student-t kernel ``q ~ (1 + ||y_i - y_j||^2)^-1``
by gradient descent with early exaggeration, a two-phase momentum
schedule, and the standard adaptive per-coordinate gains.

Cohorts: trials may only be embedded together when their architecture
spec is identical, since weight vectors of different shapes are not
comparable; :func:`project_manifest` groups by the spec's canonical key.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelSpec, weight_groups
from .rng import RngStream
from .trainer import load_checkpoint

PERPLEXITY_TOL = 1e-3
PERPLEXITY_MAX_ITER = 200
Q_FLOOR = 1e-12

DEFAULT_PERPLEXITY = 30.0
DEFAULT_ITERATIONS = 1000
LEARNING_RATE = 200.0
EARLY_EXAGGERATION = 12.0
EXAGGERATION_ITERS = 250
MOMENTUM_START = 0.5
MOMENTUM_FINAL = 0.8
MOMENTUM_SWITCH = 250
INIT_STD = 1e-2            # Y0 ~ N(0, 1e-4)
MIN_GAIN = 0.01
MIN_COHORT = 4
MAX_STEP_HALVINGS = 32     # post-exaggeration divergence guard

EMBEDDING_CSV_COLUMNS = ("trial_id", "cohort", "x", "y", "accuracy", "label")


@dataclass
class AffinityResult:
    p: np.ndarray          # (n, n) symmetric, sums to 1, zero diagonal
    sigmas: np.ndarray     # per-row Gaussian widths
    perplexities: np.ndarray  # achieved conditional perplexity per row
    warnings: list = field(default_factory=list)


@dataclass
class EmbedResult:
    y: np.ndarray          # (n, 2)
    kl_history: np.ndarray  # KL vs the true P at every iteration
    sigmas: np.ndarray
    effective_perplexity: float
    warnings: list = field(default_factory=list)


def _squared_distances(x: np.ndarray) -> np.ndarray:
    sq = (x * x).sum(axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.maximum(d2, 0.0)


def _row_entropy_probs(d2_row: np.ndarray, beta: float):
    """Conditional probabilities and Shannon entropy (nats) for one row.

    Exponentials are shifted by the row minimum so the row sum never
    underflows to zero even at extreme beta.
    """
    dmin = d2_row.min()
    e = np.exp(-beta * (d2_row - dmin))
    s = e.sum()
    p = e / s
    mean_d = float((p * d2_row).sum())
    h = float(np.log(s) + beta * (mean_d - dmin))
    return p, h


def pairwise_affinities(x: np.ndarray, perplexity: float,
                        tol: float = PERPLEXITY_TOL,
                        max_iter: int = PERPLEXITY_MAX_ITER) -> AffinityResult:
    """Symmetrized input affinities with per-row perplexity calibration.

    Each row's precision ``beta = 1/(2 sigma^2)`` is binary-searched until
    the achieved perplexity ``exp(H)`` is within ``tol`` of the target or
    ``max_iter`` halvings/doublings pass (then the closest value is kept
    and a warning recorded).
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 points, got {n}")
    if not (1.0 <= perplexity <= n - 1):
        raise ValueError(
            f"perplexity must be in [1, n-1] = [1, {n - 1}], got {perplexity}")
    d2 = _squared_distances(x)
    mask = ~np.eye(n, dtype=bool)
    cond = np.zeros((n, n))
    sigmas = np.empty(n)
    achieved = np.empty(n)
    warnings: list[str] = []
    target = float(perplexity)
    for i in range(n):
        row = d2[i][mask[i]]
        beta, beta_lo, beta_hi = 1.0, 0.0, np.inf
        p, h = _row_entropy_probs(row, beta)
        for _ in range(max_iter):
            if abs(np.exp(h) - target) <= tol:
                break
            if np.exp(h) > target:      # too spread out: sharpen
                beta_lo = beta
                beta = beta * 2.0 if beta_hi == np.inf else (beta + beta_hi) / 2.0
            else:
                beta_hi = beta
                beta = beta / 2.0 if beta_lo == 0.0 else (beta + beta_lo) / 2.0
            p, h = _row_entropy_probs(row, beta)
        else:
            warnings.append(
                f"row {i}: perplexity {np.exp(h):.6f} not within {tol} of "
                f"{target} after {max_iter} iterations; clamped")
        cond[i][mask[i]] = p
        sigmas[i] = np.sqrt(1.0 / (2.0 * beta))
        achieved[i] = np.exp(h)
    p_sym = (cond + cond.T) / (2.0 * n)
    return AffinityResult(p=p_sym, sigmas=sigmas, perplexities=achieved,
                          warnings=warnings)


def _q_matrix(y: np.ndarray):
    """Student-t kernel numerators and normalized Q with zero diagonal."""
    num = 1.0 / (1.0 + _squared_distances(y))
    np.fill_diagonal(num, 0.0)
    q = num / num.sum()
    return num, q


def kl_divergence(p: np.ndarray, y: np.ndarray) -> float:
    """KL(P || Q(y)) with Q floored at 1e-12 inside the log."""
    _, q = _q_matrix(y)
    nz = p > 0.0
    return float(np.sum(p[nz] * np.log(p[nz] / np.maximum(q[nz], Q_FLOOR))))


def kl_and_grad(p: np.ndarray, y: np.ndarray):
    """KL divergence and its exact gradient for the t-SNE objective.

    grad_i = 4 sum_j (p_ij - q_ij) (y_i - y_j) / (1 + ||y_i - y_j||^2)
    """
    num, q = _q_matrix(y)
    pq = (p - q) * num
    grad = 4.0 * (np.diag(pq.sum(axis=1)) @ y - pq @ y)
    nz = p > 0.0
    kl = float(np.sum(p[nz] * np.log(p[nz] / np.maximum(q[nz], Q_FLOOR))))
    return kl, grad


def tsne_embed(x: np.ndarray, perplexity: float = DEFAULT_PERPLEXITY,
               iterations: int = DEFAULT_ITERATIONS, seed: int = 0,
               learning_rate: float = LEARNING_RATE,
               early_exaggeration: float = EARLY_EXAGGERATION,
               exaggeration_iters: int = EXAGGERATION_ITERS,
               momentum_start: float = MOMENTUM_START,
               momentum_final: float = MOMENTUM_FINAL,
               momentum_switch: int = MOMENTUM_SWITCH) -> EmbedResult:
    """Embed rows of ``x`` into 2-D; deterministic for a given seed.

    The requested perplexity is clamped to ``(n-1)/3`` for small inputs
    (with a warning) so the affinity search stays feasible.  Every update
    passes a divergence guard: a step that would increase the current
    objective (the exaggerated KL during the first phase, the true KL
    after) has its velocity halved until it does not, and is skipped
    outright after 32 halvings.  The guard is what keeps KL non-increasing
    after exaggeration ends; without it, learning rate 200 on a
    1e-2-scale init catapults small cohorts to huge coordinates.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 4:
        raise ValueError(f"need at least 4 points to embed, got {n}")
    warnings: list[str] = []
    eff_perp = float(perplexity)
    cap = (n - 1) / 3.0
    if eff_perp > cap:
        eff_perp = cap
        warnings.append(
            f"perplexity {perplexity} clamped to (n-1)/3 = {cap:.4f} for n={n}")
    if eff_perp < 1.0:
        eff_perp = 1.0
        warnings.append(f"perplexity raised to 1.0 for n={n}")

    aff = pairwise_affinities(x, eff_perp)
    warnings.extend(aff.warnings)
    p = aff.p

    stream = RngStream(seed)
    y = stream.normal((n, 2), std=INIT_STD)
    velocity = np.zeros_like(y)
    gains = np.ones_like(y)
    kl_history = np.empty(iterations)
    guard_ref = None  # objective value at the accepted iterate

    for it in range(iterations):
        exaggerated = it < exaggeration_iters
        p_eff = p * early_exaggeration if exaggerated else p
        if guard_ref is None or it == exaggeration_iters:
            guard_ref = kl_divergence(p_eff, y)   # objective (re)baseline
        _, grad = kl_and_grad(p_eff, y)
        momentum = momentum_start if it < momentum_switch else momentum_final
        flip = np.sign(grad) != np.sign(velocity)
        gains[flip] += 0.2
        gains[~flip] *= 0.8
        np.clip(gains, MIN_GAIN, None, out=gains)
        velocity = momentum * velocity - learning_rate * (gains * grad)
        for _ in range(MAX_STEP_HALVINGS):
            cand = y + velocity
            cand = cand - cand.mean(axis=0)
            cand_obj = kl_divergence(p_eff, cand)
            if cand_obj <= guard_ref:
                y, guard_ref = cand, cand_obj
                break
            velocity *= 0.5
        else:
            velocity[:] = 0.0   # step skipped; objective unchanged
        kl_history[it] = guard_ref if not exaggerated else kl_divergence(p, y)

    return EmbedResult(y=y, kl_history=kl_history, sigmas=aff.sigmas,
                       effective_perplexity=eff_perp, warnings=warnings)


# ---------------------------------------------------------------------------
# manifest projection
# ---------------------------------------------------------------------------

def cohort_id(spec_dict: dict) -> str:
    """Short stable identifier for a cohort (identical-spec trials)."""
    key = ModelSpec.from_dict(spec_dict).canonical_key()
    return hashlib.sha256(key.encode()).hexdigest()[:12]


def project_manifest(manifest: dict, out_dir, group: str,
                     perplexity: float = DEFAULT_PERPLEXITY,
                     iterations: int = DEFAULT_ITERATIONS,
                     seed: int = 0):
    """Embed each cohort's per-trial weight vectors for one group.

    Returns ``(rows, info)`` where rows are dicts with the embedding CSV
    columns and info records cohort membership, warnings, and skipped
    cohorts (fewer than 4 trials cannot be embedded meaningfully).
    """
    out_dir = Path(out_dir)
    cohorts: dict[str, dict] = {}
    for rec in manifest["trials"]:
        if rec.get("checkpoint") is None:
            continue
        model, _ = load_checkpoint(out_dir / rec["checkpoint"])
        cid = cohort_id(model.spec.to_dict())
        bucket = cohorts.setdefault(
            cid, {"spec": model.spec.to_dict(), "trials": [], "vectors": []})
        vec = weight_groups(model)[group]
        if bucket["vectors"] and bucket["vectors"][0].shape != vec.shape:
            raise ValueError(
                f"cohort {cid}: inconsistent weight vector shapes for group {group!r}")
        bucket["trials"].append(rec)
        bucket["vectors"].append(vec)

    rows: list[dict] = []
    info: dict = {"group": group, "perplexity": perplexity,
                  "iterations": iterations, "seed": seed,
                  "cohorts": {}, "skipped": {}, "warnings": []}
    for cid in sorted(cohorts):
        bucket = cohorts[cid]
        n = len(bucket["trials"])
        if n < MIN_COHORT:
            info["skipped"][cid] = f"{n} trials < minimum {MIN_COHORT}"
            continue
        xmat = np.stack(bucket["vectors"])
        result = tsne_embed(xmat, perplexity=perplexity,
                            iterations=iterations, seed=seed)
        info["cohorts"][cid] = {"spec": bucket["spec"], "trials": n,
                                "effective_perplexity": result.effective_perplexity,
                                "final_kl": float(result.kl_history[-1])}
        info["warnings"].extend(f"cohort {cid}: {w}" for w in result.warnings)
        for rec, (ex, ey) in zip(bucket["trials"], result.y):
            rows.append({"trial_id": rec["trial_id"], "cohort": cid,
                         "x": float(ex), "y": float(ey),
                         "accuracy": rec["final_test_acc"],
                         "label": rec.get("label")})
    return rows, info


def write_embedding_csv(rows: list[dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=EMBEDDING_CSV_COLUMNS,
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def read_embedding_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            row["trial_id"] = int(row["trial_id"])
            for key in ("x", "y", "accuracy"):
                row[key] = float(row[key])
            rows.append(row)
    return rows


def project_experiment(out_dir, groups, perplexity: float = DEFAULT_PERPLEXITY,
                       iterations: int = DEFAULT_ITERATIONS, seed: int = 0) -> dict:
    """Run projection for several groups, writing CSVs + info JSON."""
    from .trainer import load_manifest
    out_dir = Path(out_dir)
    manifest = load_manifest(out_dir)
    proj_dir = out_dir / "projection"
    proj_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for group in groups:
        rows, info = project_manifest(manifest, out_dir, group,
                                      perplexity=perplexity,
                                      iterations=iterations, seed=seed)
        csv_path = write_embedding_csv(rows, proj_dir / f"embedding_{group}.csv")
        info_path = proj_dir / f"embedding_{group}.json"
        info_path.write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
        paths[group] = csv_path
    return paths
