"""Datasets, synthetic data, IDX ingestion and client partitioning."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from fracfed.errors import FormatError, UsageError
from fracfed.numerics import derive_stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise UsageError(f"features must be a non-empty (n, p) matrix, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise UsageError(f"labels shape {y.shape} does not match n={X.shape[0]}")
        if self.num_classes < 1:
            raise UsageError("num_classes must be positive")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise UsageError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(X)):
            raise UsageError("features contain non-finite entries")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, indices, name: Optional[str] = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, name or self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise UsageError(f"client {self.client_id} has no data")
        if np.any(np.diff(idx) <= 0):
            raise UsageError(f"client {self.client_id} indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @property
    def n_k(self) -> int:
        return int(self.indices.size)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str
    K: int
    dirichlet_alpha: Optional[float] = None
    shards_per_client: Optional[int] = None
    classes_per_shard: Optional[int] = None
    seed_label: str = "partition"

    def __post_init__(self):
        if self.scheme not in ("iid", "dirichlet", "shard"):
            raise UsageError(f"unknown partition scheme {self.scheme!r}")
        if self.K < 1:
            raise UsageError(f"K must be >= 1, got {self.K}")
        needs_dir = self.scheme == "dirichlet"
        needs_shard = self.scheme == "shard"
        if needs_dir != (self.dirichlet_alpha is not None):
            raise UsageError("dirichlet_alpha is required for, and only for, the dirichlet scheme")
        if needs_dir and not self.dirichlet_alpha > 0:
            raise UsageError("dirichlet_alpha must be positive")
        for name in ("shards_per_client", "classes_per_shard"):
            value = getattr(self, name)
            if needs_shard != (value is not None):
                raise UsageError(f"{name} is required for, and only for, the shard scheme")
            if needs_shard and value < 1:
                raise UsageError(f"{name} must be >= 1")


def severity_preset(name: str, K: int, num_classes: int) -> PartitionSpec:
    """Named heterogeneity levels.

    mild: shards drawn from the whole label pool, 2 per client.
    moderate: shards dominated by 4 classes, 2 per client.
    severe: label-sorted shards covering at most 2 classes, 1 per client.
    severe-dirichlet: Dirichlet(0.1) label proportions.
    """
    if name == "iid":
        return PartitionSpec("iid", K)
    if name == "mild":
        return PartitionSpec("shard", K, shards_per_client=2, classes_per_shard=num_classes)
    if name == "moderate":
        return PartitionSpec("shard", K, shards_per_client=2, classes_per_shard=min(4, num_classes))
    if name == "severe":
        return PartitionSpec("shard", K, shards_per_client=1, classes_per_shard=min(2, num_classes))
    if name == "severe-dirichlet":
        return PartitionSpec("dirichlet", K, dirichlet_alpha=0.1)
    raise UsageError(f"unknown severity preset {name!r}")


PRESETS = ("iid", "mild", "moderate", "severe", "severe-dirichlet")


# --------------------------------------------------------------------------- data


def synth_classification(n: int, p: int, num_classes: int, class_sep: float, seed: int) -> Dataset:
    """Unit-variance Gaussian blobs, one per class.

    When ``num_classes <= p`` the class means sit on an orthonormal frame
    scaled so every pair of means is exactly ``class_sep`` apart; otherwise
    they lie on random directions at radius ``class_sep / sqrt(2)``.
    """
    if num_classes < 1 or n < num_classes or p < 2:
        raise UsageError(f"need n >= num_classes >= 1 and p >= 2, got n={n}, p={p}, classes={num_classes}")
    rng = derive_stream(seed, "synth").generator()
    raw = rng.standard_normal((p, max(num_classes, 1)))
    if num_classes <= p:
        q, _ = np.linalg.qr(raw)
        dirs = q[:, :num_classes].T
    else:
        dirs = (raw / np.linalg.norm(raw, axis=0)).T
    means = dirs * (class_sep / np.sqrt(2.0))
    labels = rng.permutation(np.arange(n) % num_classes)
    features = means[labels] + rng.standard_normal((n, p))
    return Dataset(features, labels, num_classes, name=f"synth-{n}x{p}-c{num_classes}")


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out a global test set before any client partitioning."""
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(ds.n * test_fraction))
    if n_test < 1 or n_test >= ds.n:
        raise UsageError(f"test_fraction {test_fraction} leaves an empty split for n={ds.n}")
    perm = derive_stream(seed, "split").generator().permutation(ds.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return ds.subset(train_idx, ds.name + "-train"), ds.subset(test_idx, ds.name + "-test")


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_idx(images_path, labels_path, num_classes: int = 10) -> Dataset:
    """Read an MNIST-style IDX image/label pair (optionally gzipped).

    Pixels are scaled from bytes to [0, 1].
    """
    with _open(images_path) as fh:
        img_raw = fh.read()
    with _open(labels_path) as fh:
        lbl_raw = fh.read()

    if len(img_raw) < 16:
        raise FormatError("images.header", f"file holds {len(img_raw)} bytes, header needs 16")
    magic, count, rows, cols = struct.unpack(">IIII", img_raw[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError("images.magic", f"expected {IDX_IMAGES_MAGIC:#010x}, got {magic:#010x}")
    expected = 16 + count * rows * cols
    if len(img_raw) != expected:
        raise FormatError("images.count", f"header promises {count} images ({expected} bytes), file has {len(img_raw)}")

    if len(lbl_raw) < 8:
        raise FormatError("labels.header", f"file holds {len(lbl_raw)} bytes, header needs 8")
    magic, n_labels = struct.unpack(">II", lbl_raw[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError("labels.magic", f"expected {IDX_LABELS_MAGIC:#010x}, got {magic:#010x}")
    if len(lbl_raw) != 8 + n_labels:
        raise FormatError("labels.count", f"header promises {n_labels} labels, file has {len(lbl_raw) - 8}")
    if n_labels != count:
        raise FormatError("labels.count", f"{n_labels} labels for {count} images")

    pixels = np.frombuffer(img_raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    labels = np.frombuffer(lbl_raw, dtype=np.uint8, offset=8).astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise FormatError("labels.value", f"label {labels.max()} >= num_classes={num_classes}")
    return Dataset(pixels.astype(np.float64) / 255.0, labels, num_classes, name=Path(images_path).name)


def write_idx(ds: Dataset, images_path, labels_path, rows: int, cols: int) -> None:
    """Write ``ds`` as an IDX pair; features must be in [0, 1]."""
    if rows * cols != ds.p:
        raise UsageError(f"rows*cols={rows * cols} does not match p={ds.p}")
    pixels = np.clip(np.rint(ds.features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, ds.n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, ds.n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


# Binary container: little-endian u32 n, p, num_classes; f32 features
# row-major; u16 labels.
_CONTAINER_HEADER = struct.Struct("<III")


def save_dataset(ds: Dataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_CONTAINER_HEADER.pack(ds.n, ds.p, ds.num_classes))
        fh.write(ds.features.astype("<f4").tobytes())
        fh.write(ds.labels.astype("<u2").tobytes())


def read_dataset(path, name: Optional[str] = None) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _CONTAINER_HEADER.size:
        raise FormatError("container.header", "file shorter than header")
    n, p, k = _CONTAINER_HEADER.unpack_from(raw)
    expected = _CONTAINER_HEADER.size + 4 * n * p + 2 * n
    if len(raw) != expected:
        raise FormatError("container.size", f"expected {expected} bytes for n={n}, p={p}, got {len(raw)}")
    off = _CONTAINER_HEADER.size
    X = np.frombuffer(raw, dtype="<f4", count=n * p, offset=off).reshape(n, p)
    y = np.frombuffer(raw, dtype="<u2", count=n, offset=off + 4 * n * p)
    return Dataset(X.astype(np.float64), y.astype(np.int64), k, name or Path(path).stem)


# ---------------------------------------------------------------------- partitioning


def _iid(ds: Dataset, K: int, rng: np.random.Generator) -> list[np.ndarray]:
    # Stratified deal: shuffle within each class, concatenate, deal round-robin.
    # Client sizes and per-class counts then differ by at most one.
    order = np.concatenate([rng.permutation(np.flatnonzero(ds.labels == c)) for c in range(ds.num_classes)])
    start = int(rng.integers(K))
    owners = (np.arange(order.size) + start) % K
    return [order[owners == k] for k in range(K)]


def _dirichlet(ds: Dataset, K: int, conc: float, rng: np.random.Generator) -> list[np.ndarray]:
    buckets: list[list[np.ndarray]] = [[] for _ in range(K)]
    for c in range(ds.num_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        if idx.size == 0:
            continue
        props = rng.dirichlet(np.full(K, conc))
        counts = rng.multinomial(idx.size, props)
        cuts = np.cumsum(counts)[:-1]
        for k, part in enumerate(np.split(idx, cuts)):
            buckets[k].append(part)
    parts = [np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64) for b in buckets]
    # Empty-client repair: the largest client (lowest id on ties) donates its
    # highest index until nobody is empty.
    while True:
        empty = [k for k in range(K) if parts[k].size == 0]
        if not empty:
            return parts
        donor = max(range(K), key=lambda k: (parts[k].size, -k))
        if parts[donor].size < 2:
            raise UsageError("dirichlet repair failed: not enough examples to give every client one")
        moved, parts[donor] = parts[donor][-1:], parts[donor][:-1]
        parts[empty[0]] = moved


def _shard(ds: Dataset, K: int, spc: int, cps: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Label-sorted shards, each drawn from a block of ``cps`` consecutive classes."""
    n_shards = K * spc
    groups = []
    for g0 in range(0, ds.num_classes, cps):
        members = np.flatnonzero((ds.labels >= g0) & (ds.labels < g0 + cps))
        if members.size:
            groups.append(rng.permutation(members))
    if n_shards < len(groups):
        raise UsageError(
            f"K*shards_per_client={n_shards} is smaller than the {len(groups)} class blocks "
            f"of size classes_per_shard={cps}; coverage is impossible"
        )
    sizes = np.array([g.size for g in groups], dtype=float)
    # Largest-remainder allocation of shards to blocks, at least one each.
    quota = 1 + (n_shards - len(groups)) * sizes / sizes.sum()
    alloc = np.floor(quota).astype(int)
    remainder = quota - alloc
    for i in np.argsort(-remainder, kind="stable")[: n_shards - alloc.sum()]:
        alloc[i] += 1
    shards = []
    for members, count in zip(groups, alloc):
        if count > members.size:
            raise UsageError(f"class block of {members.size} examples cannot fill {count} shards")
        shards.extend(np.array_split(members, count))
    order = rng.permutation(len(shards))
    return [np.concatenate([shards[j] for j in order[k * spc:(k + 1) * spc]]) for k in range(K)]


def partition(ds: Dataset, spec: PartitionSpec, seed: int) -> list[ClientShard]:
    """Split ``ds`` across ``spec.K`` clients; every index lands on exactly one client."""
    if spec.K > ds.n:
        raise UsageError(f"K={spec.K} exceeds n={ds.n}")
    rng = derive_stream(seed, spec.seed_label).generator()
    if spec.scheme == "iid":
        parts = _iid(ds, spec.K, rng)
    elif spec.scheme == "dirichlet":
        parts = _dirichlet(ds, spec.K, spec.dirichlet_alpha, rng)
    else:
        parts = _shard(ds, spec.K, spec.shards_per_client, spec.classes_per_shard, rng)
    shards = [ClientShard(k, np.sort(part)) for k, part in enumerate(parts)]
    _assert_partition(shards, ds.n)
    return shards


def _assert_partition(shards, n):
    total = sum(s.n_k for s in shards)
    joined = np.concatenate([s.indices for s in shards])
    if total != n or np.unique(joined).size != n or joined.min() < 0 or joined.max() >= n:
        raise AssertionError("partition is not a disjoint cover of the dataset")


@dataclass
class HeterogeneityReport:
    histograms: np.ndarray  # (K, num_classes) counts
    tv_distances: dict = field(default_factory=dict)  # (i, j) -> TV, i < j

    @property
    def proportions(self) -> np.ndarray:
        return self.histograms / self.histograms.sum(axis=1, keepdims=True)

    @property
    def mean_tv(self) -> Optional[float]:
        if not self.tv_distances:
            return None
        return float(np.mean(list(self.tv_distances.values())))

    @property
    def classes_per_client(self) -> np.ndarray:
        return (self.histograms > 0).sum(axis=1)


def heterogeneity_report(shards: list[ClientShard], ds: Dataset) -> HeterogeneityReport:
    hist = np.stack([np.bincount(ds.labels[s.indices], minlength=ds.num_classes) for s in shards])
    props = hist / hist.sum(axis=1, keepdims=True)
    tv = {}
    for i in range(len(shards)):
        for j in range(i + 1, len(shards)):
            tv[(i, j)] = 0.5 * float(np.abs(props[i] - props[j]).sum())
    return HeterogeneityReport(hist, tv)
