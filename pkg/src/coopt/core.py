"""Domain types, dataset partitioning and deterministic merging.

Samples are stored column-stacked in a float32 matrix (the on-disk precision)
with a parallel vector of global ids; the :class:`Sample` view exists for
callers that want per-sample records.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_seed
from .exceptions import DimensionError, MergeError, PartitionError

SHARED_SET_ID = 0xFFFFFFFF
MERGED_SET_ID = 0xFFFFFFFE


@dataclass(frozen=True)
class Sample:
    id: int
    x: np.ndarray


def _as_ids(ids, n):
    ids = np.asarray(ids, dtype=np.uint64) if ids is not None else np.arange(n, dtype=np.uint64)
    if ids.shape != (n,):
        raise DimensionError(f"expected {n} sample ids, got shape {ids.shape}")
    return ids


@dataclass
class Dataset:
    """An unlabeled sample matrix with optional evaluation labels.

    Labels ride along for probes and the oracle prior; nothing on the
    optimization path reads them.
    """

    X: np.ndarray
    ids: np.ndarray = None
    labels: np.ndarray = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float32)
        if X.ndim != 2 or X.shape[0] == 0:
            raise DimensionError(f"dataset needs a non-empty 2-D sample matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DimensionError("dataset contains non-finite coordinates")
        self.X = X
        self.ids = _as_ids(self.ids, X.shape[0])
        if len(np.unique(self.ids)) != len(self.ids):
            raise DimensionError("sample ids must be unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (X.shape[0],):
                raise DimensionError("labels need exactly one entry per sample")

    @property
    def m(self):
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    @property
    def samples(self):
        return [Sample(int(i), x) for i, x in zip(self.ids, self.X)]

    def subset(self, positions):
        positions = np.asarray(positions, dtype=np.int64)
        labels = None if self.labels is None else self.labels[positions]
        return Dataset(self.X[positions], self.ids[positions], labels)

    def label_lookup(self):
        if self.labels is None:
            return None
        return dict(zip(self.ids.tolist(), self.labels.tolist()))

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.X, dtype="<f4").tobytes())
        h.update(np.ascontiguousarray(self.ids, dtype="<u8").tobytes())
        return h.hexdigest()


@dataclass
class Shard:
    shard_id: int
    sample_ids: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.uint64)
        self.X = np.asarray(self.X, dtype=np.float32)
        if self.X.ndim != 2 or self.X.shape[0] != len(self.sample_ids):
            raise DimensionError("shard matrix rows must match its sample ids")
        if len(self.sample_ids) > 1 and not np.all(np.diff(self.sample_ids.astype(np.int64)) > 0):
            raise DimensionError("shard sample ids must be strictly increasing")

    def __len__(self):
        return len(self.sample_ids)

    @property
    def samples(self):
        return [Sample(int(i), x) for i, x in zip(self.sample_ids, self.X)]


@dataclass
class TargetSet:
    """Optimized targets for one shard, stored at wire precision (float32)."""

    shard_id: int
    targets: np.ndarray
    aligned: bool = False

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.float32)
        if self.targets.ndim != 2:
            raise DimensionError("targets must be a 2-D matrix")
        if not np.all(np.isfinite(self.targets)):
            raise DimensionError(f"targets of shard {self.shard_id} contain non-finite entries")

    @property
    def n(self):
        return self.targets.shape[1]

    def __len__(self):
        return self.targets.shape[0]


@dataclass
class OptimizedDataset:
    """Samples paired with their targets, ordered by global sample id."""

    ids: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    n: int = field(init=False)

    def __post_init__(self):
        self.n = self.Y.shape[1]

    def __len__(self):
        return len(self.ids)

    @property
    def pairs(self):
        return [(Sample(int(i), x), y) for i, x, y in zip(self.ids, self.X, self.Y)]

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.ids, dtype="<u8").tobytes())
        h.update(np.ascontiguousarray(self.Y, dtype="<f4").tobytes())
        return h.hexdigest()


def partition(dataset, K, seed):
    """Split ``dataset`` into ``K`` disjoint, size-balanced shards.

    A seeded permutation of the positions is cut into contiguous runs whose
    sizes differ by at most one; ids inside each shard are re-sorted.

    Raises
    ------
    PartitionError
        If ``K`` is not in ``1..len(dataset)``.
    """
    seed = check_seed(seed)
    N = len(dataset)
    if isinstance(K, bool) or not isinstance(K, (int, np.integer)) or not 1 <= K <= N:
        raise PartitionError(f"K must be an integer in 1..{N}, got {K!r}")
    # Generator.permutation is a Fisher-Yates shuffle
    perm = np.random.default_rng(seed).permutation(N)
    shards = []
    for shard_id, chunk in enumerate(np.array_split(perm, K)):
        ids = dataset.ids[chunk]
        order = np.argsort(ids, kind="stable")
        positions = chunk[order]
        shards.append(Shard(shard_id, dataset.ids[positions], dataset.X[positions]))
    return shards


def merge(target_sets, dataset, shards):
    """Aggregate per-shard targets into one id-ordered :class:`OptimizedDataset`.

    The result depends on ``target_sets`` as a set keyed by ``shard_id``; the
    supplied order never matters.
    """
    by_id = {}
    for ts in target_sets:
        if ts.shard_id in by_id:
            raise MergeError(f"duplicate target set for shard {ts.shard_id}", ts.shard_id)
        by_id[ts.shard_id] = ts
    shard_map = {s.shard_id: s for s in shards}
    for shard_id in sorted(shard_map):
        if shard_id not in by_id:
            raise MergeError(f"missing target set for shard {shard_id}", shard_id)
    for shard_id, ts in sorted(by_id.items()):
        if shard_id not in shard_map:
            raise MergeError(f"target set for unknown shard {shard_id}", shard_id)
        if not ts.aligned:
            raise MergeError(f"target set for shard {shard_id} is not aligned", shard_id)
        if len(ts) != len(shard_map[shard_id]):
            raise MergeError(
                f"shard {shard_id} has {len(shard_map[shard_id])} samples but {len(ts)} target rows", shard_id
            )
    dims = {ts.n for ts in by_id.values()}
    if len(dims) > 1:
        first = min(by_id)
        odd = next(s for s in sorted(by_id) if by_id[s].n != by_id[first].n)
        raise MergeError(f"target dimension of shard {odd} differs from shard {first}", odd)

    all_ids = np.concatenate([shard_map[s].sample_ids for s in sorted(shard_map)])
    if len(all_ids) != len(dataset) or not np.array_equal(np.sort(all_ids), np.sort(dataset.ids)):
        raise MergeError("shards do not form a partition of the dataset")

    Y = np.concatenate([by_id[s].targets for s in sorted(shard_map)])
    X = np.concatenate([shard_map[s].X for s in sorted(shard_map)])
    order = np.argsort(all_ids, kind="stable")
    return OptimizedDataset(all_ids[order], X[order], Y[order])


def sample_shared_set(dataset, fraction, seed):
    """Draw the platform's shared subset: ``ceil(fraction * N)`` rows, at least 2."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"shared fraction must lie in (0, 1), got {fraction}")
    size = min(len(dataset), max(2, int(np.ceil(fraction * len(dataset)))))
    positions = np.sort(np.random.default_rng(check_seed(seed)).choice(len(dataset), size=size, replace=False))
    return dataset.subset(positions)
