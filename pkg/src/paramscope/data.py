"""Dataset acquisition and loading: IDX (MNIST family) and CIFAR-10 binary.

Images load as float64 in [0, 1] (raw uint8 / 255), shaped (N, C, H, W);
labels as int64.  :func:`fetch` downloads canonical archives into a local
cache, verifying a pinned SHA-256 per file.  Checksums are taken over the
*decompressed* payload so they stay stable when a mirror re-gzips the same
bytes; the digest observed at download time is recorded in a ``.sha256``
sidecar and re-verified on every later use.  Sources with a ``null`` pin
are trust-on-first-use: the sidecar written on first download becomes the
pin.
"""

from __future__ import annotations

import gzip
import hashlib
import os
import struct
import tarfile
import time
import urllib.request
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import RngStream

CACHE_ENV_VAR = "PARAMSCOPE_CACHE"
DEFAULT_CACHE = "~/.cache/paramscope"

IDX_IMAGES_MAGIC = 2051  # 0x00000803
IDX_LABELS_MAGIC = 2049  # 0x00000801

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3*32*32 pixels

# canonical download sources; sha256 pins are over decompressed payloads.
# fashion_mnist and cifar10 pins are trust-on-first-use (null): no authentic
# copy was reachable to pin them at packaging time.
DEFAULT_SOURCES = {
    "mnist": [
        {"filename": "train-images-idx3-ubyte.gz",
         "url": "https://ossci-datasets.s3.amazonaws.com/mnist/train-images-idx3-ubyte.gz",
         "sha256": "ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"},
        {"filename": "train-labels-idx1-ubyte.gz",
         "url": "https://ossci-datasets.s3.amazonaws.com/mnist/train-labels-idx1-ubyte.gz",
         "sha256": "65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"},
        {"filename": "t10k-images-idx3-ubyte.gz",
         "url": "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-images-idx3-ubyte.gz",
         "sha256": "0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"},
        {"filename": "t10k-labels-idx1-ubyte.gz",
         "url": "https://ossci-datasets.s3.amazonaws.com/mnist/t10k-labels-idx1-ubyte.gz",
         "sha256": "ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"},
    ],
    "fashion_mnist": [
        {"filename": f, "sha256": None,
         "url": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/" + f}
        for f in ("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz",
                  "t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz")
    ],
    "cifar10": [
        {"filename": "cifar-10-binary.tar.gz",
         "url": "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz",
         "sha256": None},
    ],
}

DATASET_SHAPES = {
    "mnist": (1, 28, 28),
    "fashion_mnist": (1, 28, 28),
    "cifar10": (3, 32, 32),
}


class ChecksumError(RuntimeError):
    """Downloaded or cached payload does not match its pinned digest."""


class DownloadError(RuntimeError):
    """A source could not be retrieved after retries."""


@dataclass
class Dataset:
    name: str
    split: str                 # "train" or "test"
    images: np.ndarray         # (N, C, H, W) float64 in [0, 1]
    labels: np.ndarray         # (N,) int64

    def __len__(self) -> int:
        return self.images.shape[0]


def cache_dir(override: str | None = None) -> Path:
    """Cache root: explicit argument, else $PARAMSCOPE_CACHE, else default."""
    root = override or os.environ.get(CACHE_ENV_VAR) or DEFAULT_CACHE
    return Path(root).expanduser()


# ---------------------------------------------------------------------------
# fetch
# ---------------------------------------------------------------------------

def _payload_sha256(path: Path) -> str:
    """SHA-256 of the file's decompressed payload (gzip detected by magic)."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    h = hashlib.sha256()
    opener = gzip.open if magic == b"\x1f\x8b" else open
    with opener(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _download(url: str, dest: Path, retries: int = 3, backoff: float = 1.0) -> None:
    last_err: Exception | None = None
    for attempt in range(retries):
        if attempt:
            time.sleep(backoff * attempt)
        try:
            tmp = dest.with_suffix(dest.suffix + ".part")
            with urllib.request.urlopen(url, timeout=60) as resp, open(tmp, "wb") as out:
                while True:
                    chunk = resp.read(1 << 20)
                    if not chunk:
                        break
                    out.write(chunk)
            tmp.replace(dest)
            return
        except Exception as err:  # noqa: BLE001 - propagate after retries
            last_err = err
    raise DownloadError(f"failed to download {url}: {last_err}")


def fetch(name: str, cache: str | None = None, sources: list | None = None,
          force: bool = False) -> list[Path]:
    """Ensure every source file for ``name`` is cached and verified.

    Returns the local paths.  A file already present whose sidecar digest
    matches is skipped (idempotent); ``force`` re-downloads.  A pinned
    sha256 mismatch raises :class:`ChecksumError`; ``sha256: null`` pins
    the digest observed on first download via the sidecar.
    """
    sources = sources if sources is not None else DEFAULT_SOURCES[name]
    root = cache_dir(cache) / name
    root.mkdir(parents=True, exist_ok=True)
    paths = []
    for src in sources:
        dest = root / src["filename"]
        sidecar = Path(str(dest) + ".sha256")
        pin = src.get("sha256")
        if dest.exists() and not force:
            digest = _payload_sha256(dest)
            expected = pin or (sidecar.read_text().strip() if sidecar.exists() else None)
            if expected is not None and digest != expected:
                raise ChecksumError(
                    f"{dest}: cached payload sha256 {digest} != expected {expected}")
            sidecar.write_text(digest + "\n")
            paths.append(dest)
            continue
        _download(src["url"], dest)
        digest = _payload_sha256(dest)
        if pin is not None and digest != pin:
            dest.unlink()
            raise ChecksumError(
                f"{src['url']}: payload sha256 {digest} != pinned {pin}")
        sidecar.write_text(digest + "\n")
        paths.append(dest)
    return paths


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def _open_maybe_gzip(path):
    with open(path, "rb") as fh:
        magic = fh.read(2)
    return gzip.open(path, "rb") if magic == b"\x1f\x8b" else open(path, "rb")


def _read_idx_images(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError(f"{path}: truncated IDX image header")
        magic, count, rows, cols = struct.unpack(">iiii", header)
        if magic != IDX_IMAGES_MAGIC:
            raise ValueError(f"{path}: bad IDX image magic {magic}, expected {IDX_IMAGES_MAGIC}")
        raw = fh.read(count * rows * cols)
    if len(raw) != count * rows * cols:
        raise ValueError(f"{path}: expected {count * rows * cols} pixels, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path) -> np.ndarray:
    with _open_maybe_gzip(path) as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated IDX label header")
        magic, count = struct.unpack(">ii", header)
        if magic != IDX_LABELS_MAGIC:
            raise ValueError(f"{path}: bad IDX label magic {magic}, expected {IDX_LABELS_MAGIC}")
        raw = fh.read(count)
    if len(raw) != count:
        raise ValueError(f"{path}: expected {count} labels, got {len(raw)}")
    return np.frombuffer(raw, dtype=np.uint8).astype(np.int64)


def load_idx(images_path, labels_path, name: str = "mnist", split: str = "train") -> Dataset:
    """Load an IDX image/label pair (plain or gzipped) into a Dataset."""
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {images.shape[0]} vs {labels.shape[0]}")
    imgs = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(name=name, split=split, images=imgs, labels=labels)


def load_cifar10(batch_files, name: str = "cifar10", split: str = "train") -> Dataset:
    """Load CIFAR-10 binary batch files (3073-byte records, channel-major)."""
    images, labels = [], []
    for path in batch_files:
        with _open_maybe_gzip(path) as fh:
            raw = fh.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES:
            raise ValueError(
                f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD_BYTES}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    imgs = np.concatenate(images).astype(np.float64) / 255.0
    return Dataset(name=name, split=split,
                   images=imgs, labels=np.concatenate(labels))


def _cifar_members(split: str) -> list[str]:
    if split == "train":
        return [f"data_batch_{i}.bin" for i in range(1, 6)]
    return ["test_batch.bin"]


def _load_cifar_archive(archive_path, split: str) -> Dataset:
    wanted = _cifar_members(split)
    blobs: dict[str, bytes] = {}
    with tarfile.open(archive_path, "r:*") as tf:
        for member in tf.getmembers():
            base = os.path.basename(member.name)
            if base in wanted:
                blobs[base] = tf.extractfile(member).read()
    missing = [m for m in wanted if m not in blobs]
    if missing:
        raise ValueError(f"{archive_path}: missing members {missing}")
    images, labels = [], []
    for m in wanted:
        rec = np.frombuffer(blobs[m], dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, 3, 32, 32))
    imgs = np.concatenate(images).astype(np.float64) / 255.0
    return Dataset(name="cifar10", split=split,
                   images=imgs, labels=np.concatenate(labels))


def load_dataset(name: str, split: str, cache: str | None = None) -> Dataset:
    """Load a cached dataset by name ("mnist", "fashion_mnist", "cifar10")."""
    root = cache_dir(cache) / name
    if name in ("mnist", "fashion_mnist"):
        prefix = "train" if split == "train" else "t10k"
        images = _find_cached(root, f"{prefix}-images-idx3-ubyte")
        labels = _find_cached(root, f"{prefix}-labels-idx1-ubyte")
        return load_idx(images, labels, name=name, split=split)
    if name == "cifar10":
        archive = _find_cached(root, "cifar-10-binary.tar")
        return _load_cifar_archive(archive, split)
    raise ValueError(f"unknown dataset {name!r}")


def _find_cached(root: Path, stem: str) -> Path:
    for suffix in (".gz", ""):
        cand = root / (stem + suffix)
        if cand.exists():
            return cand
    raise FileNotFoundError(
        f"{root / stem}[.gz] not found; run `paramscope fetch` first "
        f"(cache root override: ${CACHE_ENV_VAR})")


# ---------------------------------------------------------------------------
# batching / subsetting
# ---------------------------------------------------------------------------

def batches(dataset: Dataset, batch_size: int, stream: RngStream):
    """Yield shuffled (images, labels) minibatches for one epoch.

    The permutation comes from ``stream``; a final batch shorter than
    ``batch_size`` is dropped so every step sees a full batch.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    perm = stream.permutation(len(dataset))
    n_full = len(dataset) // batch_size
    for i in range(n_full):
        idx = perm[i * batch_size:(i + 1) * batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def take_subset(dataset: Dataset, n: int, stream: RngStream) -> Dataset:
    """First ``n`` examples of a ``stream``-shuffled view of the dataset."""
    if n > len(dataset):
        raise ValueError(f"subset {n} exceeds dataset size {len(dataset)}")
    idx = stream.permutation(len(dataset))[:n]
    return Dataset(name=dataset.name, split=dataset.split,
                   images=dataset.images[idx], labels=dataset.labels[idx])
