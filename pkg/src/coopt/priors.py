"""Deterministic synthetic prior models (feature extractors).

Every extractor is a pure function of its spec: the weights come from the
spec seed, and the per-sample "noise" of degraded priors is derived from a
hash of the sample itself, so a row's features never depend on which batch it
was extracted in.
"""

import hashlib
from dataclasses import asdict, dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_seed, rowwise_matmul
from .exceptions import ExtractionError, MissingLabelsError

KINDS = ("linear", "mlp", "weak-mlp", "oracle")

DEGRADE_MODES = ("bottleneck", "noise")

# "noise" mode: degraded priors drift toward a fixed direction (feature collapse)
# and pick up per-sample noise, both weighted by (1 - quality).
COLLAPSE_SCALE = 3.0
NOISE_SCALE = 1.5


@dataclass(frozen=True)
class PriorModelSpec:
    kind: str = "mlp"
    seed: int = 0
    out_dim: int = 32
    quality: float = 1.0
    label_noise: float = 0.0
    in_dim: int = None
    hidden: int = 64
    identity: bool = False
    train_steps: int = 0
    degrade: str = "bottleneck"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown prior kind {self.kind!r}; expected one of {KINDS}")
        if self.degrade not in DEGRADE_MODES:
            raise ValueError(f"unknown degrade mode {self.degrade!r}; expected one of {DEGRADE_MODES}")
        check_seed(self.seed)
        if int(self.out_dim) < 1:
            raise ValueError("out_dim must be >= 1")
        if not 0.0 <= float(self.quality) <= 1.0:
            raise ValueError(f"quality must lie in [0, 1], got {self.quality}")
        if not 0.0 <= float(self.label_noise) <= 1.0:
            raise ValueError(f"label_noise must lie in [0, 1], got {self.label_noise}")
        if self.in_dim is not None and int(self.in_dim) < 1:
            raise ValueError("in_dim must be >= 1")
        if not float(self.scale) > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown prior spec fields: {sorted(unknown)}")
        return cls(**known)


def _sample_hash_seed(seed, row, tag):
    h = hashlib.blake2b(digest_size=8, key=tag)
    h.update(int(seed).to_bytes(8, "little"))
    h.update(np.ascontiguousarray(row, dtype="<f4").tobytes())
    return int.from_bytes(h.digest(), "little")


class PriorModel(TransformerMixin, BaseEstimator):
    """A seeded stand-in for a pre-trained feature extractor ``R^m -> R^l``.

    Parameters
    ----------
    kind : {"linear", "mlp", "weak-mlp", "oracle"}
        ``linear`` multiplies by a Gaussian matrix, ``mlp`` is a two-layer
        tanh network, ``weak-mlp`` is an mlp that may be briefly trained as a
        classifier (``train_steps``), ``oracle`` emits one-hot class labels.
    seed : int
    out_dim : int
        Feature dimension ``l``.
    quality : float in [0, 1]
        Fidelity. How it degrades the extractor depends on ``degrade``.
    label_noise : float in [0, 1]
        Oracle only: probability of emitting a uniformly random wrong class.
    in_dim : int or None
        Input dimension ``m``; inferred at ``fit`` when None.
    hidden : int
        Hidden width of the mlp kinds.
    identity : bool
        Linear kind only: use the identity matrix (requires ``out_dim == in_dim``).
    train_steps : int
        weak-mlp only: full-batch gradient steps of classifier pre-training on
        the labeled data passed to ``fit``.
    degrade : {"bottleneck", "noise"}
        ``bottleneck`` lets the extractor see only a seeded random subspace of
        ``max(1, round(quality * m))`` input directions. ``noise`` blends the
        features with a collapse direction and per-sample noise in proportion
        ``1 - quality``; MSE training averages that noise away, so it barely
        changes what a downstream model learns.
    scale : float
        Output gain. Different extractors emit features of very different
        magnitude; uniform values normalize rows and do not see it.
    """

    def __init__(self, kind="mlp", seed=0, out_dim=32, quality=1.0, label_noise=0.0, in_dim=None,
                 hidden=64, identity=False, train_steps=0, degrade="bottleneck",
                 scale=1.0):
        self.kind = kind
        self.seed = seed
        self.out_dim = out_dim
        self.quality = quality
        self.label_noise = label_noise
        self.in_dim = in_dim
        self.hidden = hidden
        self.identity = identity
        self.train_steps = train_steps
        self.degrade = degrade
        self.scale = scale

    @property
    def spec(self):
        return PriorModelSpec(**self.get_params())

    def fit(self, X=None, y=None, ids=None):
        """Materialize the extractor.

        ``X`` is only consulted for its width (and, for ``oracle`` and trained
        ``weak-mlp``, together with labels ``y``); ids are needed by the oracle.
        """
        spec = self.spec
        m = spec.in_dim
        if X is not None:
            X = check_matrix(X, error=ExtractionError)
            if m is not None and X.shape[1] != m:
                raise ExtractionError(f"data has dimension {X.shape[1]}, prior expects {m}")
            m = X.shape[1]
        if m is None:
            raise ExtractionError("input dimension unknown: pass in_dim or data")
        self.n_features_in_ = m
        l = spec.out_dim
        rng = np.random.default_rng([spec.seed, 0])

        if spec.kind == "oracle":
            if y is None:
                raise MissingLabelsError("oracle prior needs a labeled dataset")
            y = np.asarray(y, dtype=np.int64)
            ids = np.arange(len(y)) if ids is None else np.asarray(ids)
            self.n_classes_ = int(y.max()) + 1
            if l < self.n_classes_:
                raise ExtractionError(f"oracle out_dim {l} cannot hold {self.n_classes_} classes")
            self.labels_ = dict(zip(np.asarray(ids, dtype=np.int64).tolist(), y.tolist()))
            return self

        if spec.kind == "linear":
            if spec.identity:
                if l != m:
                    raise ExtractionError("identity linear prior needs out_dim == in_dim")
                self.weights_ = [np.eye(m)]
            else:
                self.weights_ = [rng.standard_normal((l, m)) / np.sqrt(m)]
        else:
            A = rng.standard_normal((spec.hidden, m)) / np.sqrt(m)
            a = 0.5 * rng.standard_normal(spec.hidden)
            B = rng.standard_normal((l, spec.hidden)) / np.sqrt(spec.hidden)
            if spec.kind == "weak-mlp" and spec.train_steps > 0:
                if X is None or y is None:
                    raise MissingLabelsError("trained weak-mlp prior needs labeled data")
                A, a = _pretrain_classifier(X, np.asarray(y, dtype=np.int64), A, a, spec.train_steps, rng)
            self.weights_ = [A, a, B]
        self.collapse_ = rng.standard_normal(l)
        self.basis_ = None
        rank = max(1, int(round(float(spec.quality) * m)))
        if spec.degrade == "bottleneck" and rank < m:
            Q, _ = np.linalg.qr(np.random.default_rng([spec.seed, 1]).standard_normal((m, rank)))
            self.basis_ = Q
        return self

    def _base(self, X):
        if self.kind == "linear":
            return rowwise_matmul(X, self.weights_[0])
        A, a, B = self.weights_
        return rowwise_matmul(np.tanh(rowwise_matmul(X, A) + a), B)

    def _noise(self, X):
        key = b"prior-noise"
        out = np.empty((X.shape[0], self.out_dim))
        for i, row in enumerate(X):
            out[i] = np.random.default_rng(_sample_hash_seed(self.seed, row, key)).standard_normal(self.out_dim)
        return out

    def _oracle(self, ids):
        if ids is None:
            raise ExtractionError("oracle extraction needs sample ids")
        out = np.zeros((len(ids), self.out_dim))
        C = self.n_classes_
        for i, sid in enumerate(np.asarray(ids, dtype=np.int64).tolist()):
            if sid not in self.labels_:
                raise MissingLabelsError(f"no label for sample {sid}")
            label = self.labels_[sid]
            if self.label_noise > 0:
                rng = np.random.default_rng([self.seed, sid, 1])
                if rng.random() < self.label_noise:
                    label = (label + 1 + int(rng.integers(C - 1))) % C
            out[i, label] = 1.0
        return out

    def transform(self, X, ids=None):
        """Return the ``count x l`` feature matrix; row order follows ``X``."""
        check_is_fitted(self, "n_features_in_")
        X = check_matrix(X, n_cols=self.n_features_in_, error=ExtractionError)
        if X.shape[0] == 0:
            return np.zeros((0, self.out_dim))
        if self.kind == "oracle":
            return self.scale * self._oracle(ids)
        q = float(self.quality)
        if self.basis_ is not None:
            X = rowwise_matmul(rowwise_matmul(X, self.basis_.T), self.basis_)
        F = self._base(X)
        if self.degrade == "noise" and q < 1.0:
            F = q * F + (1.0 - q) * (COLLAPSE_SCALE * self.collapse_ + NOISE_SCALE * self._noise(X))
        return self.scale * F


def _pretrain_classifier(X, y, A, a, steps, rng, lr=0.5):
    """Full-batch softmax training of the hidden layer; returns updated (A, a)."""
    C = int(y.max()) + 1
    V = rng.standard_normal((C, A.shape[0])) / np.sqrt(A.shape[0])
    onehot = np.eye(C)[y]
    n = X.shape[0]
    for _ in range(steps):
        H = np.tanh(X @ A.T + a)
        logits = H @ V.T
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - onehot) / n
        dH = (G @ V) * (1.0 - H ** 2)
        V -= lr * G.T @ H
        A = A - lr * dH.T @ X
        a = a - lr * dH.sum(axis=0)
    return A, a


def build_prior(spec, dataset=None):
    """Instantiate the extractor described by ``spec``.

    ``dataset`` supplies labels for the oracle and trained weak-mlp kinds.
    """
    params = spec.to_dict()
    model = PriorModel(**params)
    if spec.kind == "oracle" or (spec.kind == "weak-mlp" and spec.train_steps > 0):
        if dataset is None or dataset.labels is None:
            raise MissingLabelsError(f"{spec.kind} prior needs a dataset with labels")
        return model.fit(dataset.X, dataset.labels, ids=dataset.ids)
    if dataset is not None:
        return model.fit(dataset.X)
    return model.fit()


def extract(model, X, ids=None):
    """Features of a batch; ``X`` may be a matrix, a Shard, a Dataset or a list of Samples."""
    if hasattr(X, "sample_ids"):
        X, ids = X.X, X.sample_ids
    elif hasattr(X, "ids") and hasattr(X, "X"):
        X, ids = X.X, X.ids
    elif isinstance(X, list):
        ids = np.array([s.id for s in X], dtype=np.uint64)
        X = np.array([s.x for s in X]) if X else np.zeros((0, model.n_features_in_))
    X = np.asarray(X)
    if X.ndim != 2 or X.shape[1] != model.n_features_in_:
        raise ExtractionError(f"batch of shape {X.shape} does not match prior input dimension {model.n_features_in_}")
    return model.transform(X, ids=ids)


def grade_roster(base_spec, quality_levels):
    """One spec per quality level, differing only in quality and seed offset."""
    levels = [float(q) for q in quality_levels]
    for q in levels:
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quality level {q} outside [0, 1]")
    return [replace(base_spec, quality=q, seed=base_spec.seed + i) for i, q in enumerate(levels)]
