"""Random projection of heterogeneous feature spaces to a common dimension."""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_seed, rowwise_matmul
from .exceptions import ProjectionError


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    l: int
    n: int
    seed: int
    values: np.ndarray
    identity: bool = False

    def __eq__(self, other):
        return (isinstance(other, ProjectionMatrix) and (self.l, self.n) == (other.l, other.n)
                and np.array_equal(self.values, other.values))

    __hash__ = None


def sample_projection(l, n, seed, identity=False):
    """Draw an ``n x l`` matrix with i.i.d. N(0, 1/n) entries.

    ``identity=True`` returns the identity instead (only when ``l == n``).
    """
    seed = check_seed(seed)
    if int(l) < 1 or int(n) < 1:
        raise ProjectionError(f"projection dimensions must be >= 1, got l={l}, n={n}")
    l, n = int(l), int(n)
    if identity:
        if l != n:
            raise ProjectionError(f"identity projection needs l == n, got {l} and {n}")
        return ProjectionMatrix(l, n, seed, np.eye(n), identity=True)
    values = np.random.default_rng([seed, l, n]).standard_normal((n, l)) / np.sqrt(n)
    return ProjectionMatrix(l, n, seed, values)


def project(W, F):
    """Map each feature row ``f`` to ``W f``."""
    F = check_matrix(F, name="features", error=ProjectionError)
    if F.shape[1] != W.l:
        raise ProjectionError(f"features have dimension {F.shape[1]}, projection expects {W.l}")
    if F.shape[0] == 0:
        return np.zeros((0, W.n))
    return rowwise_matmul(F, W.values)


class GaussianTargetProjection(TransformerMixin, BaseEstimator):
    """Estimator wrapper around :func:`sample_projection` / :func:`project`.

    ``fit`` only reads the feature width; the matrix depends on
    ``(l, n_components, seed)`` alone.
    """

    def __init__(self, n_components=32, seed=0, identity=False):
        self.n_components = n_components
        self.seed = seed
        self.identity = identity

    def fit(self, F, y=None):
        F = check_matrix(F, name="features", error=ProjectionError)
        self.n_features_in_ = F.shape[1]
        self.projection_ = sample_projection(F.shape[1], self.n_components, self.seed, self.identity)
        return self

    def transform(self, F):
        check_is_fitted(self, "projection_")
        return project(self.projection_, F)
