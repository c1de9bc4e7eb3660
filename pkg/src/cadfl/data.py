"""Synthetic Gaussian-blob data and Dirichlet non-IID client partitioning."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .errors import ConfigError, DecodeError, TruncatedStreamError


@dataclass
class SyntheticDataset:
    features: np.ndarray  # M x d
    labels: np.ndarray  # M
    means: np.ndarray  # C x d
    spread: float
    seed: int

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    def subset(self, idx):
        return self.features[idx], self.labels[idx]


@dataclass
class Partition:
    clients: List[np.ndarray]
    train: List[np.ndarray] = None
    test: List[np.ndarray] = None

    @property
    def num_clients(self) -> int:
        return len(self.clients)


def class_means(num_classes: int, dim: int, scale: float = 1.0) -> np.ndarray:
    """Class centres on a scaled simplex (scaled one-hot axes, centred).

    When there are more classes than dimensions the centres go on a circle in
    the first two coordinates instead.
    """
    if num_classes <= dim:
        means = np.eye(num_classes, dim)
        means -= means.mean(axis=0, keepdims=True)
        means /= np.linalg.norm(means[0])
    else:
        angles = 2 * np.pi * np.arange(num_classes) / num_classes
        means = np.zeros((num_classes, dim))
        means[:, 0], means[:, 1] = np.cos(angles), np.sin(angles)
    return scale * means


def gen_synthetic(num_classes: int = 4, dim: int = 16, num_samples: int = 4000, spread: float = 1.0,
                  seed: int = 0, scale: float = 2.0) -> SyntheticDataset:
    """Isotropic Gaussian blobs with std ``spread`` around each class centre.

    Labels are drawn uniformly after seeding one sample per class, so every
    class is present.
    """
    if num_classes < 2 or num_samples < num_classes or dim < 2:
        raise ConfigError("need C >= 2, d >= 2 and M >= C")
    rng = np.random.default_rng(seed)
    labels = np.concatenate([np.arange(num_classes), rng.integers(0, num_classes, size=num_samples - num_classes)])
    labels = rng.permutation(labels)
    means = class_means(num_classes, dim, scale)
    features = means[labels] + spread * rng.standard_normal((num_samples, dim))
    return SyntheticDataset(features, labels, means, spread, seed)


def dirichlet_partition(labels, num_clients: int, alpha: float, rng: np.random.Generator) -> Partition:
    """Route each class's samples to clients with Dir(alpha) proportions."""
    if num_clients < 1 or alpha <= 0:
        raise ConfigError("need num_clients >= 1 and alpha > 0")
    labels = np.asarray(labels)
    shards: List[list] = [[] for _ in range(num_clients)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        props = rng.dirichlet(np.full(num_clients, alpha))
        counts = rng.multinomial(idx.size, props)
        for client, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            shards[client].extend(chunk.tolist())
    # every client needs data: steal one sample from the currently largest shard
    for client in range(num_clients):
        if not shards[client]:
            donor = max(range(num_clients), key=lambda j: (len(shards[j]), -j))
            if len(shards[donor]) < 2:
                raise ConfigError("not enough samples to give every client one")
            shards[client].append(shards[donor].pop())
    return Partition([np.sort(np.asarray(s, dtype=np.int64)) for s in shards])


def split_train_test(partition: Partition, labels, test_fraction: float, rng: np.random.Generator) -> Partition:
    """Per-client stratified train/test split.

    The shard's test size is ``round(len(shard) * test_fraction)``; it is
    apportioned over classes by largest remainder, so every class's test
    count is within one sample of its exact share. A shard of two or more
    samples always gets a nonempty side of each kind; a single-sample shard
    is all-train.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    train, test = [], []
    for shard in partition.clients:
        n = shard.size
        n_test = int(np.floor(n * test_fraction + 0.5))
        if n >= 2:
            n_test = min(max(n_test, 1), n - 1)
        else:
            n_test = 0
        classes, counts = np.unique(labels[shard], return_counts=True)
        quota = counts * (n_test / n) if n else counts * 0.0
        take = np.floor(quota).astype(int)
        order = np.argsort(-(quota - take), kind="stable")
        take[order[: n_test - take.sum()]] += 1
        tr, te = [], []
        for c, k in zip(classes, take):
            idx = shard[labels[shard] == c].copy()
            rng.shuffle(idx)
            te.extend(idx[:k].tolist())
            tr.extend(idx[k:].tolist())
        train.append(np.sort(np.asarray(tr, dtype=np.int64)))
        test.append(np.sort(np.asarray(te, dtype=np.int64)))
    return Partition(partition.clients, train, test)


def label_entropy(labels, num_classes: int) -> float:
    p = np.bincount(labels, minlength=num_classes) / max(len(labels), 1)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


_DS_HEADER = struct.Struct("<III")


def dump_dataset(ds: SyntheticDataset, path) -> None:
    m, d = ds.features.shape
    with open(path, "wb") as fh:
        fh.write(_DS_HEADER.pack(m, d, ds.num_classes))
        fh.write(ds.features.astype("<f4").tobytes())
        fh.write(ds.labels.astype("<u2").tobytes())


def load_dataset(path):
    """Read ``(features, labels, num_classes)`` from a flat binary dump."""
    raw = Path(path).read_bytes()
    if len(raw) < _DS_HEADER.size:
        raise TruncatedStreamError("dataset header truncated")
    m, d, c = _DS_HEADER.unpack_from(raw)
    need = _DS_HEADER.size + 4 * m * d + 2 * m
    if len(raw) != need:
        raise DecodeError(f"dataset file has {len(raw)} bytes, expected {need}")
    off = _DS_HEADER.size
    feats = np.frombuffer(raw, dtype="<f4", count=m * d, offset=off).astype(np.float64).reshape(m, d)
    labels = np.frombuffer(raw, dtype="<u2", count=m, offset=off + 4 * m * d).astype(np.int64)
    return feats, labels, c
