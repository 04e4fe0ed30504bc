"""Datasets: CIFAR-10 binary batches and seeded synthetic substitutes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, IngestionError

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    num_classes: int
    mean: np.ndarray
    std: np.ndarray
    augment: bool = False

    def __post_init__(self):
        for split, x, y in (("train", self.x_train, self.y_train), ("eval", self.x_eval, self.y_eval)):
            if x.ndim != 4 or len(x) != len(y):
                raise ConfigError(f"{split} split: inputs {x.shape} vs labels {y.shape}")
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise ConfigError(f"{split} labels outside [0, {self.num_classes})")
        if self.x_train.shape[1:] != self.x_eval.shape[1:]:
            raise ConfigError("train and eval inputs differ in shape")

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return tuple(self.x_train.shape[1:])

    def hold_out(self, batch_size: int, seed: int) -> Tuple["Dataset", Tuple[np.ndarray, np.ndarray]]:
        """Remove one random batch from the training split and return it apart."""
        n = len(self.y_train)
        if batch_size >= n:
            raise ConfigError(f"cannot hold out {batch_size} of {n} training examples")
        idx = np.random.default_rng([seed, 7]).permutation(n)
        held, kept = np.sort(idx[:batch_size]), np.sort(idx[batch_size:])
        rest = Dataset(
            self.x_train[kept], self.y_train[kept], self.x_eval, self.y_eval,
            self.num_classes, self.mean, self.std, self.augment,
        )
        return rest, (self.x_train[held], self.y_train[held])


def augment_batch(x: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random horizontal flip plus zero-padded random crop, per example."""
    N, _, H, W = x.shape
    flips = rng.random(N) < 0.5
    offsets = rng.integers(0, 2 * pad + 1, size=(N, 2))
    padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(x)
    for i in range(N):
        dy, dx = offsets[i]
        crop = padded[i, :, dy:dy + H, dx:dx + W]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


def _standardize(x_train: np.ndarray, x_eval: np.ndarray):
    mean = x_train.mean(axis=(0, 2, 3))
    std = x_train.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    shape = (1, -1, 1, 1)
    return (x_train - mean.reshape(shape)) / std.reshape(shape), (x_eval - mean.reshape(shape)) / std.reshape(shape), mean, std


def _class_counts(n: int, num_classes: int) -> np.ndarray:
    counts = np.full(num_classes, n // num_classes)
    counts[: n % num_classes] += 1
    return counts


# ---------------------------------------------------------------------------
# synthetic
# ---------------------------------------------------------------------------

def _blobs(rng, counts, centers, noise):
    xs, ys = [], []
    for c, m in enumerate(counts):
        xs.append(centers[c] + noise * rng.standard_normal((m, centers.shape[1])))
        ys.append(np.full(m, c))
    return np.concatenate(xs), np.concatenate(ys)


def _spirals(rng, counts, noise, turns=1.5):
    xs, ys = [], []
    C = len(counts)
    for c, m in enumerate(counts):
        t = np.sort(rng.uniform(0.05, 1.0, size=m))
        angle = 2 * math.pi * (turns * t + c / C)
        pts = np.stack([t * np.cos(angle), t * np.sin(angle)], axis=1)
        xs.append(pts + noise * rng.standard_normal((m, 2)))
        ys.append(np.full(m, c))
    return np.concatenate(xs), np.concatenate(ys)


def make_synthetic(
    kind: str,
    n: int,
    num_classes: int,
    noise: float,
    seed: int,
    input_shape: Sequence[int] = (2, 1, 1),
    n_eval: Optional[int] = None,
) -> Dataset:
    """Seeded Gaussian blobs or interleaved spirals.

    ``n`` training examples split as evenly as possible across classes, plus
    an eval split of ``n_eval`` (default ``n // 5``) drawn from an independent
    stream. Spiral points are 2-D; for larger ``input_shape`` they are lifted
    by a fixed seeded orthonormal projection.
    """
    if kind not in ("blobs", "spirals"):
        raise ConfigError(f"unknown synthetic kind {kind!r}")
    if num_classes < 2 or n < num_classes:
        raise ConfigError(f"need n >= num_classes >= 2, got n={n}, num_classes={num_classes}")
    if noise < 0:
        raise ConfigError(f"noise must be non-negative, got {noise}")
    input_shape = tuple(int(v) for v in input_shape)
    D = int(np.prod(input_shape))
    n_eval = max(n // 5, num_classes) if n_eval is None else n_eval
    if n_eval < 1:
        raise ConfigError("n_eval must be positive")
    train_rng = np.random.default_rng([seed, 0])
    eval_rng = np.random.default_rng([seed, 1])
    if kind == "blobs":
        centers = np.random.default_rng([seed, 2]).uniform(-5.0, 5.0, size=(num_classes, D))
        xt, yt = _blobs(train_rng, _class_counts(n, num_classes), centers, noise)
        xe, ye = _blobs(eval_rng, _class_counts(n_eval, num_classes), centers, noise)
    else:
        if D < 2:
            raise ConfigError("spirals need at least 2 input features")
        xt, yt = _spirals(train_rng, _class_counts(n, num_classes), noise)
        xe, ye = _spirals(eval_rng, _class_counts(n_eval, num_classes), noise)
        if D > 2:
            q, _ = np.linalg.qr(np.random.default_rng([seed, 2]).standard_normal((D, 2)))
            xt, xe = xt @ q.T, xe @ q.T
    xt = xt.reshape((-1,) + input_shape)
    xe = xe.reshape((-1,) + input_shape)
    xt, xe, mean, std = _standardize(xt, xe)
    return Dataset(xt, yt.astype(np.int64), xe, ye.astype(np.int64), num_classes, mean, std)


# ---------------------------------------------------------------------------
# CIFAR-10
# ---------------------------------------------------------------------------

def read_cifar_batch(path) -> Tuple[np.ndarray, np.ndarray]:
    """Parse one binary batch into (uint8 images N x 3 x 32 x 32, labels)."""
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"missing CIFAR batch file {path}", path=path, offset=0)
    raw = path.read_bytes()
    whole = len(raw) // CIFAR_RECORD
    if len(raw) % CIFAR_RECORD or whole == 0:
        offset = whole * CIFAR_RECORD
        raise IngestionError(
            f"{path}: short record at byte offset {offset} (file is {len(raw)} bytes, "
            f"records are {CIFAR_RECORD})",
            path=path,
            offset=offset,
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(whole, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        offset = int(bad[0]) * CIFAR_RECORD
        raise IngestionError(f"{path}: label {labels[bad[0]]} > 9 at byte offset {offset}", path=path, offset=offset)
    return rec[:, 1:].reshape(whole, 3, 32, 32), labels


def stratified_indices(labels: np.ndarray, n: int, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` indices split evenly across classes (remainder to low classes), sorted."""
    picks = []
    for c, m in enumerate(_class_counts(n, num_classes)):
        pool = np.flatnonzero(labels == c)
        if len(pool) < m:
            raise ConfigError(f"class {c} has {len(pool)} examples, {m} requested")
        picks.append(rng.permutation(pool)[:m])
    return np.sort(np.concatenate(picks))


def _find_cifar_dir(directory: Path) -> Path:
    for cand in (directory, directory / "cifar-10-batches-bin"):
        if (cand / CIFAR_TEST_FILE).exists() or (cand / CIFAR_TRAIN_FILES[0]).exists():
            return cand
    return directory


def load_cifar10_subset(directory, train_n: int, eval_n: int, seed: int, augment: bool = False) -> Dataset:
    """Seeded class-stratified CIFAR-10 subset, scaled to [0, 1] then
    standardized per channel with training-subset statistics."""
    root = _find_cifar_dir(Path(directory))
    imgs, labels = zip(*(read_cifar_batch(root / f) for f in CIFAR_TRAIN_FILES))
    x_all, y_all = np.concatenate(imgs), np.concatenate(labels)
    xe_all, ye_all = read_cifar_batch(root / CIFAR_TEST_FILE)
    train_idx = stratified_indices(y_all, train_n, 10, np.random.default_rng([seed, 0]))
    eval_idx = stratified_indices(ye_all, eval_n, 10, np.random.default_rng([seed, 1]))
    xt = x_all[train_idx].astype(np.float64) / 255.0
    xe = xe_all[eval_idx].astype(np.float64) / 255.0
    xt, xe, mean, std = _standardize(xt, xe)
    return Dataset(xt, y_all[train_idx], xe, ye_all[eval_idx], 10, mean, std, augment)
