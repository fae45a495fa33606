"""Training on optimized data, linear-probe evaluation and rank correlation."""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.stats import rankdata
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_seed
from .core import Dataset
from .exceptions import DegenerateRankingError, DimensionError, InvalidEvalError


@dataclass
class EvalSet:
    X: np.ndarray
    labels: np.ndarray
    ids: np.ndarray = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.labels), dtype=np.uint64)
        if self.X.shape[0] != len(self.labels):
            raise InvalidEvalError("eval set needs one label per sample")
        if len(np.unique(self.labels)) < 2:
            raise InvalidEvalError("eval set needs at least 2 classes")

    @property
    def C(self):
        return int(self.labels.max()) + 1

    def __len__(self):
        return len(self.labels)


@dataclass
class ProbeResult:
    accuracy: float
    per_class: dict
    loss_curve: list = field(default_factory=list)


def make_synthetic_benchmark(C=10, N=2000, m=32, seed=0, margin=2.5, n_eval=None):
    """Seeded Gaussian class clusters: a labeled training set and a disjoint eval set.

    Class centers are random directions scaled to norm ``margin``; each sample
    adds unit-variance isotropic noise. Labels are stratified, so every class
    count is within one of ``N / C``. Eval ids start at ``N``.
    """
    seed = check_seed(seed)
    if C < 2:
        raise ValueError("need at least 2 classes")
    if N < 10 * C:
        raise ValueError(f"need N >= 10 * C samples, got N={N}, C={C}")
    if m < 1:
        raise ValueError("m must be >= 1")
    n_eval = N // 2 if n_eval is None else n_eval
    if n_eval < 2 * C:
        raise ValueError("eval set too small for a stratified split")
    rng = np.random.default_rng([seed, 7])
    centers = rng.standard_normal((C, m))
    centers *= margin / np.linalg.norm(centers, axis=1, keepdims=True)

    def draw(count):
        labels = rng.permutation(np.arange(count) % C)
        X = centers[labels] + rng.standard_normal((count, m))
        return X.astype(np.float32), labels

    X, y = draw(N)
    Xe, ye = draw(n_eval)
    train = Dataset(X, np.arange(N, dtype=np.uint64), y)
    evalset = EvalSet(Xe, ye, np.arange(N, N + n_eval, dtype=np.uint64))
    return train, evalset


# -- downstream model ---------------------------------------------------------

def init_params(m, hidden, n, seed):
    """Seeded parameters ``[(W, b), ...]`` of an ``m -> hidden... -> n`` tanh MLP.

    The input layer starts at zero so the untrained network carries no
    input-dependent representation; deeper layers use Glorot-normal weights.
    """
    rng = np.random.default_rng([check_seed(seed), 11])
    sizes = [m, *hidden, n]
    params = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        if k == 0:
            W = np.zeros((fan_out, fan_in))
        else:
            W = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / (fan_in + fan_out))
        params.append((W, np.zeros(fan_out)))
    return params


def forward(params, X):
    """Return the list of layer activations; the last entry is the linear output."""
    acts = [X]
    for k, (W, b) in enumerate(params):
        z = acts[-1] @ W.T + b
        acts.append(z if k == len(params) - 1 else np.tanh(z))
    return acts


def loss_and_grad(params, X, Y, loss="mse"):
    """Loss over the batch and its gradient with respect to every parameter.

    ``mse`` is the mean over all entries of ``(out - Y)^2``; ``cosine`` is the
    mean of ``1 - cos(out_i, Y_i)``.
    """
    acts = forward(params, X)
    out = acts[-1]
    B = X.shape[0]
    if loss == "mse":
        diff = out - Y
        value = float((diff ** 2).mean())
        delta = 2.0 * diff / diff.size
    elif loss == "cosine":
        eps = 1e-12
        on = np.linalg.norm(out, axis=1, keepdims=True) + eps
        yn = np.linalg.norm(Y, axis=1, keepdims=True) + eps
        cos = (out * Y).sum(axis=1, keepdims=True) / (on * yn)
        value = float((1.0 - cos).mean())
        delta = -(Y / (on * yn) - cos * out / on ** 2) / B
    else:
        raise ValueError(f"unknown loss {loss!r}")
    grads = [None] * len(params)
    for k in range(len(params) - 1, -1, -1):
        W, _ = params[k]
        grads[k] = (delta.T @ acts[k], delta.sum(axis=0))
        if k:
            delta = (delta @ W) * (1.0 - acts[k] ** 2)
    return value, grads


class TargetRegressor(RegressorMixin, TransformerMixin, BaseEstimator):
    """Small tanh MLP regressed onto optimized targets.

    ``predict`` returns the ``n``-dimensional output, ``transform`` the
    penultimate (last hidden) activations used for probing.

    Parameters
    ----------
    hidden : tuple of int
    epochs : int
        ``0`` keeps the seeded initialization.
    lr : float
    batch_size : int
    momentum : float
        Heavy-ball momentum; ``0`` gives plain mini-batch gradient descent.
    loss : {"mse", "cosine"}
    seed : int
        Drives initialization and per-epoch shuffling.
    """

    def __init__(self, hidden=(64,), epochs=30, lr=0.5, batch_size=64, momentum=0.0, loss="mse", seed=0):
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.momentum = momentum
        self.loss = loss
        self.seed = seed

    def fit(self, X, Y):
        X = check_matrix(X, min_rows=1)
        Y = check_matrix(Y, name="Y", min_rows=1)
        if X.shape[0] != Y.shape[0]:
            raise DimensionError("X and Y need the same number of rows")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        self.n_features_in_ = X.shape[1]
        self.n_outputs_ = Y.shape[1]
        params = init_params(X.shape[1], tuple(self.hidden), Y.shape[1], self.seed)
        velocity = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
        rng = np.random.default_rng([check_seed(self.seed), 13])
        curve = [loss_and_grad(params, X, Y, self.loss)[0]]
        for _ in range(self.epochs):
            order = rng.permutation(X.shape[0])
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                _, grads = loss_and_grad(params, X[idx], Y[idx], self.loss)
                new_params, new_velocity = [], []
                for (W, b), (gW, gb), (vW, vb) in zip(params, grads, velocity):
                    vW = self.momentum * vW - self.lr * gW
                    vb = self.momentum * vb - self.lr * gb
                    new_params.append((W + vW, b + vb))
                    new_velocity.append((vW, vb))
                params, velocity = new_params, new_velocity
            curve.append(loss_and_grad(params, X, Y, self.loss)[0])
        self.params_ = params
        self.loss_curve_ = curve
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_matrix(X, n_cols=self.n_features_in_)
        return forward(self.params_, X)[-1]

    def transform(self, X):
        check_is_fitted(self, "params_")
        X = check_matrix(X, n_cols=self.n_features_in_)
        return forward(self.params_, X)[-2]

    def score(self, X, Y, sample_weight=None):
        # negative MSE; R^2 is meaningless for multi-output soft targets
        return -float(((self.predict(X) - np.asarray(Y)) ** 2).mean())


def train_on_optimized(D_prime, model_cfg=None, epochs=30, seed=0):
    """Fit a :class:`TargetRegressor` on an OptimizedDataset."""
    cfg = dict(model_cfg or {})
    cfg.setdefault("epochs", epochs)
    cfg.setdefault("seed", seed)
    if len(D_prime) == 0:
        raise DimensionError("optimized dataset is empty")
    n = cfg.pop("n", None)
    if n is not None and n != D_prime.n:
        raise DimensionError(f"model output dimension {n} does not match target dimension {D_prime.n}")
    return TargetRegressor(**cfg).fit(D_prime.X, D_prime.Y)


# -- linear probe -------------------------------------------------------------

def _softmax_objective(theta, Z, onehot, alpha):
    d, C = Z.shape[1], onehot.shape[1]
    W = theta[: d * C].reshape(d, C)
    b = theta[d * C:]
    logits = Z @ W + b
    logits -= logits.max(axis=1, keepdims=True)
    logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    n = Z.shape[0]
    value = -(onehot * logp).sum() / n + 0.5 * alpha * (W ** 2).sum()
    G = (np.exp(logp) - onehot) / n
    grad = np.concatenate([(Z.T @ G + alpha * W).ravel(), G.sum(axis=0)])
    return value, grad


def probe_representations(R, labels, probe_seed=0, alpha=1e-3, max_iter=500):
    """Multinomial logistic probe on a seeded, stratified 50/50 split of ``(R, labels)``."""
    R = check_matrix(R, name="representations")
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise InvalidEvalError("probe needs at least 2 classes")
    train_idx, test_idx = train_test_split(
        np.arange(len(labels)), test_size=0.5, stratify=labels, random_state=check_seed(probe_seed)
    )
    mean = R[train_idx].mean(axis=0)
    std = R[train_idx].std(axis=0)
    std[std < 1e-12] = 1.0
    Z = (R - mean) / std
    C = int(labels.max()) + 1
    onehot = np.eye(C)[labels[train_idx]]
    theta0 = np.zeros(Z.shape[1] * C + C)
    curve = []
    res = minimize(
        _softmax_objective, theta0, args=(Z[train_idx], onehot, alpha), jac=True, method="L-BFGS-B",
        options={"maxiter": max_iter},
        callback=lambda th: curve.append(float(_softmax_objective(th, Z[train_idx], onehot, alpha)[0])),
    )
    W = res.x[: Z.shape[1] * C].reshape(Z.shape[1], C)
    b = res.x[Z.shape[1] * C:]
    pred = np.argmax(Z[test_idx] @ W + b, axis=1)
    truth = labels[test_idx]
    per_class = {int(c): float(np.mean(pred[truth == c] == c)) for c in np.unique(truth)}
    return ProbeResult(float(np.mean(pred == truth)), per_class, curve)


def linear_probe(model, eval_set, probe_seed=0):
    """Freeze ``model``, take its penultimate representations of the eval set and probe them."""
    if len(np.unique(eval_set.labels)) < 2:
        raise InvalidEvalError("single-class eval set")
    return probe_representations(model.transform(eval_set.X), eval_set.labels, probe_seed)


def chance_interval(C, n_test, z=2.5758):
    """Normal-approximation 99% binomial interval around chance accuracy ``1/C``."""
    p = 1.0 / C
    half = z * np.sqrt(p * (1 - p) / n_test)
    return p - half, p + half


# -- rank correlation ---------------------------------------------------------

def spearman(xs, ys):
    """Spearman's rank correlation with average ranks for ties.

    Computed as the Pearson correlation of the rank vectors, which equals
    ``1 - 6 sum d_i^2 / (n (n^2 - 1))`` whenever there are no ties.

    Raises
    ------
    DegenerateRankingError
        When either input is constant, so no ranking exists.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise ValueError(f"spearman needs two 1-D lists of equal length, got {xs.shape} and {ys.shape}")
    if len(xs) < 2:
        raise ValueError("spearman needs at least 2 observations")
    rx, ry = rankdata(xs), rankdata(ys)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx ** 2).sum() * (ry ** 2).sum())
    if denom == 0:
        raise DegenerateRankingError("one of the inputs is constant; its ranking is fully tied")
    return float(np.clip((rx * ry).sum() / denom, -1.0, 1.0))
