"""Population training: N independent trials of one architecture.

Each trial derives its own seed from the experiment base seed
(``split(base_seed, trial_id)``) and from that seed derives separate
streams for weight init and per-epoch shuffling, so trials are
reproducible in isolation and identical whether the population runs
serially or across worker processes.

Artifacts per experiment: one binary checkpoint per trial (magic
``PSCP``) holding the spec and final float64 weights bit-exactly, and a
JSON manifest recording the resolved config, its hash, optimizer
constants, per-epoch curves, and divergence flags.
"""

from __future__ import annotations

import hashlib
import json
import struct
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import multiprocessing as mp
from pathlib import Path

import numpy as np

from . import __version__, nn
from .data import Dataset, batches, load_dataset, take_subset
from .models import Model, ModelSpec, build_model, forward
from .rng import RngStream, split

CHECKPOINT_MAGIC = b"PSCP"
CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.json"

# stream keys (arbitrary distinct tags, spelled in ASCII for legibility)
STREAM_INIT = 0x494E4954     # "INIT": weight initialization
STREAM_SHUFFLE = 0x53485546  # "SHUF": root of per-epoch shuffle streams
STREAM_SUBSET = 0x53554253   # "SUBS": experiment-level subset selection

EVAL_CHUNK = 1000
FIXED_CLOCK_TIMESTAMP = "1970-01-01T00:00:00Z"


@dataclass
class TrainConfig:
    spec: ModelSpec
    dataset: str = "mnist"
    trials: int = 1
    epochs: int = 20
    batch_size: int = 100
    lr: float = nn.ADAM_LR
    beta1: float = nn.ADAM_BETA1
    beta2: float = nn.ADAM_BETA2
    eps: float = nn.ADAM_EPS
    base_seed: int = 0
    subset: int | None = None
    # execution-only knobs: never part of experiment identity or manifests
    parallel: int = 1
    fixed_clock: bool = False
    cache: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.subset is not None and self.subset < 1:
            raise ValueError(f"subset must be >= 1, got {self.subset}")
        if self.parallel < 1:
            raise ValueError(f"parallel must be >= 1, got {self.parallel}")

    def identity_dict(self) -> dict:
        """Everything that defines the experiment's outputs (no exec knobs)."""
        return {
            "spec": self.spec.to_dict(),
            "dataset": self.dataset,
            "trials": self.trials,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "optimizer": {"name": "adam", "lr": self.lr, "beta1": self.beta1,
                          "beta2": self.beta2, "eps": self.eps},
            "base_seed": self.base_seed,
            "subset": self.subset,
        }

    def config_hash(self) -> str:
        blob = json.dumps(self.identity_dict(), sort_keys=True,
                          separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrialRecord:
    trial_id: int
    seed: int
    train_loss: list = field(default_factory=list)   # mean batch loss per epoch
    test_acc: list = field(default_factory=list)     # percent per epoch
    final_test_acc: float = 0.0
    diverged: bool = False
    failed: str | None = None
    checkpoint: str | None = None                    # path relative to out dir
    wall_time: float = 0.0
    label: str | None = None                         # filled by analysis

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(**d)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model: Model, path, trial_id: int, seed: int) -> None:
    """Write magic, version, JSON header, then raw little-endian float64."""
    header = {
        "spec": model.spec.to_dict(),
        "trial_id": trial_id,
        "seed": seed,
        "params": [{"name": n, "shape": list(a.shape)}
                   for n, a in model.params.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for arr in model.params.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint back bit-exactly; returns (model, meta dict)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, hdr_len = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hdr_len).decode())
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * n)
            if len(raw) != 8 * n:
                raise ValueError(f"{path}: truncated tensor {entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise ValueError(f"{path}: trailing bytes after last tensor")
    spec = ModelSpec.from_dict(header["spec"])
    meta = {"trial_id": header["trial_id"], "seed": header["seed"]}
    return Model(spec=spec, params=params), meta


# ---------------------------------------------------------------------------
# evaluation / single trial
# ---------------------------------------------------------------------------

def evaluate(model: Model, dataset: Dataset, chunk: int = EVAL_CHUNK) -> float:
    """Top-1 accuracy as a percentage, reported to 2 decimals."""
    correct = 0
    for lo in range(0, len(dataset), chunk):
        logits = forward(model, dataset.images[lo:lo + chunk])
        correct += int(np.sum(np.argmax(logits, axis=1) == dataset.labels[lo:lo + chunk]))
    return round(100.0 * correct / len(dataset), 2)


def trial_seed(base_seed: int, trial_id: int) -> int:
    return split(base_seed, trial_id)


def run_trial(cfg: TrainConfig, trial_id: int, train_ds: Dataset,
              test_ds: Dataset, checkpoint_path=None) -> TrialRecord:
    """Train one trial to completion; never raises on divergence."""
    t0 = time.perf_counter()
    seed = trial_seed(cfg.base_seed, trial_id)
    rec = TrialRecord(trial_id=trial_id, seed=seed)
    init_stream = RngStream(split(seed, STREAM_INIT))
    shuffle_root = split(seed, STREAM_SHUFFLE)

    model = build_model(cfg.spec, init_stream)
    adam = {name: nn.AdamState.for_param(p) for name, p in model.params.items()}

    for epoch in range(cfg.epochs):
        epoch_stream = RngStream(split(shuffle_root, epoch))
        losses = []
        try:
            for xb, yb in batches(train_ds, cfg.batch_size, epoch_stream):
                loss, grads, _ = loss_and_grads_checked(model, xb, yb)
                losses.append(loss)
                for name in model.params:
                    model.params[name], adam[name] = nn.adam_step(
                        model.params[name], grads[name], adam[name],
                        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
        except nn.NonFiniteGradientError:
            rec.diverged = True
        if losses:
            rec.train_loss.append(float(np.mean(losses)))
        acc = evaluate(model, test_ds)
        rec.test_acc.append(acc)
        loss_str = f"{rec.train_loss[-1]:.4f}" if rec.train_loss else "nan"
        print(f"trial={trial_id} epoch={epoch} loss={loss_str} acc={acc:.2f}",
              file=sys.stderr, flush=True)
        if rec.diverged:
            break

    rec.final_test_acc = rec.test_acc[-1] if rec.test_acc else evaluate(model, test_ds)
    if checkpoint_path is not None:
        save_checkpoint(model, checkpoint_path, trial_id, seed)
    rec.wall_time = 0.0 if cfg.fixed_clock else time.perf_counter() - t0
    return rec


def loss_and_grads_checked(model: Model, xb, yb):
    """loss_and_grads plus divergence detection on the loss value."""
    from .models import loss_and_grads
    loss, grads, probs = loss_and_grads(model, xb, yb)
    if not np.isfinite(loss):
        raise nn.NonFiniteGradientError(f"non-finite loss {loss}")
    return loss, grads, probs


# ---------------------------------------------------------------------------
# experiment orchestration
# ---------------------------------------------------------------------------

_WORKER_CTX: dict = {}


def _trial_by_id(trial_id: int) -> TrialRecord:
    cfg = _WORKER_CTX["cfg"]
    ckpt = Path(_WORKER_CTX["out_dir"]) / "checkpoints" / f"trial_{trial_id:04d}.pscp"
    rec = run_trial(cfg, trial_id, _WORKER_CTX["train"], _WORKER_CTX["test"], ckpt)
    rec.checkpoint = str(Path("checkpoints") / ckpt.name)
    return rec


def load_experiment_data(cfg: TrainConfig):
    """Load (train, test) datasets for a config, applying the subset."""
    train_ds = load_dataset(cfg.dataset, "train", cache=cfg.cache)
    test_ds = load_dataset(cfg.dataset, "test", cache=cfg.cache)
    if cfg.subset is not None:
        subset_stream = RngStream(split(cfg.base_seed, STREAM_SUBSET))
        train_ds = take_subset(train_ds, cfg.subset, subset_stream)
    return train_ds, test_ds


def run_experiment(cfg: TrainConfig, out_dir, train_ds: Dataset | None = None,
                   test_ds: Dataset | None = None) -> dict:
    """Run all trials, write checkpoints + manifest, return the manifest."""
    out_dir = Path(out_dir)
    (out_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    if train_ds is None or test_ds is None:
        train_ds, test_ds = load_experiment_data(cfg)

    global _WORKER_CTX
    _WORKER_CTX = {"cfg": cfg, "train": train_ds, "test": test_ds,
                   "out_dir": str(out_dir)}
    trial_ids = list(range(cfg.trials))
    records: list[TrialRecord] = []
    if cfg.parallel > 1:
        # fork workers inherit _WORKER_CTX; identical float paths => results
        # match the serial run bit for bit
        ctx = mp.get_context("fork")
        with ProcessPoolExecutor(max_workers=cfg.parallel, mp_context=ctx) as pool:
            for rec in pool.map(_trial_by_id, trial_ids):
                records.append(rec)
    else:
        for tid in trial_ids:
            records.append(_trial_by_id(tid))

    manifest = {
        "format": "paramscope-manifest",
        "version": 1,
        "toolkit_version": __version__,
        "created_at": FIXED_CLOCK_TIMESTAMP if cfg.fixed_clock else
        time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "config": cfg.identity_dict(),
        "config_hash": cfg.config_hash(),
        "dataset": {
            "name": cfg.dataset,
            "train_examples": len(train_ds),
            "test_examples": len(test_ds),
            "batches_per_epoch": len(train_ds) // cfg.batch_size,
            "dropped_remainder": len(train_ds) % cfg.batch_size,
        },
        "trials": [rec.to_dict() for rec in records],
    }
    write_manifest(manifest, out_dir)
    return manifest


def write_manifest(manifest: dict, out_dir) -> Path:
    path = Path(out_dir) / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(out_dir) -> dict:
    path = Path(out_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found; run `paramscope train` into this directory first")
    return json.loads(path.read_text())
