"""Linear alignment of a participant's target space onto a reference space.

Given projected shared-set features ``F`` (rows ``f_s``) and the reference
targets ``Y`` on the same samples, the transformation is the ridge solution

    T = argmin ||T F^T - Y^T||_F^2 + lam ||T||_F^2

computed through a least-squares solve of the augmented system
``[F; sqrt(lam) I] T^T = [Y; 0]``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, rowwise_matmul
from .core import Dataset, TargetSet
from .exceptions import AlignmentError, DimensionError, IllPosedError
from .uniformity import shared_set_hash


@dataclass
class SharedSet:
    """The small unlabeled set every participant downloads."""

    dataset: Dataset

    def __post_init__(self):
        if len(self.dataset) == 0:
            raise DimensionError("shared set must not be empty")
        self.hash = shared_set_hash(self.dataset.X, self.dataset.ids)

    @property
    def X(self):
        return self.dataset.X

    @property
    def ids(self):
        return self.dataset.ids

    def __len__(self):
        return len(self.dataset)


@dataclass
class SharedTargets:
    n: int
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] != self.n:
            raise DimensionError(f"shared targets must have {self.n} columns")
        if not np.all(np.isfinite(self.values)):
            raise DimensionError("shared targets contain non-finite entries")


@dataclass
class TransformationMatrix:
    participant_id: int
    n: int
    values: np.ndarray
    ridge_lambda: float = 0.0
    residual: float = 0.0
    bias: np.ndarray = None

    @property
    def is_identity(self):
        return self.bias is None and np.array_equal(self.values, np.eye(self.n))


def fit_transformation(F, Ystar, ridge_lambda=0.0, participant_id=None, affine=False):
    """Solve for the ``n x n`` map sending projected features onto ``Ystar``.

    Parameters
    ----------
    F : array, shape (s, n)
        The participant's projected features on the shared set.
    Ystar : SharedTargets or array, shape (s, n)
        Reference targets on the same shared samples.
    ridge_lambda : float
        Absolute ridge penalty (>= 0).
    affine : bool
        Also fit an unpenalized bias term.

    Raises
    ------
    IllPosedError
        ``ridge_lambda == 0`` with rank-deficient ``F``.
    AlignmentError
        Shapes disagree or ``ridge_lambda < 0``.
    """
    Y = Ystar.values if isinstance(Ystar, SharedTargets) else Ystar
    F = check_matrix(F, name="F", min_rows=1, error=AlignmentError)
    Y = check_matrix(Y, name="Ystar", min_rows=1, error=AlignmentError)
    if F.shape[0] != Y.shape[0]:
        raise AlignmentError(f"F has {F.shape[0]} rows but Ystar has {Y.shape[0]}")
    if F.shape[1] != Y.shape[1]:
        raise AlignmentError(f"F has dimension {F.shape[1]} but Ystar has {Y.shape[1]}")
    if not ridge_lambda >= 0:
        raise AlignmentError(f"ridge_lambda must be >= 0, got {ridge_lambda}")
    s, n = F.shape

    design = np.hstack([F, np.ones((s, 1))]) if affine else F
    penalized = n
    if ridge_lambda == 0 and np.linalg.matrix_rank(design) < design.shape[1]:
        raise IllPosedError("shared features are rank deficient; use a positive ridge_lambda")
    reg = np.zeros((penalized, design.shape[1]))
    reg[:, :penalized] = np.sqrt(ridge_lambda) * np.eye(penalized)
    A = np.vstack([design, reg])
    b = np.vstack([Y, np.zeros((penalized, n))])
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    T = sol[:n].T
    bias = sol[n] if affine else None

    pred = F @ T.T + (bias if affine else 0.0)
    residual = float(((pred - Y) ** 2).sum())
    return TransformationMatrix(participant_id, n, T, float(ridge_lambda), residual, bias)


def relative_ridge(F, ridge_lambda):
    """Scale a relative penalty by the mean squared row norm of ``F`` (mean diag of F F^T)."""
    F = np.asarray(F, dtype=np.float64)
    scale = float((F ** 2).sum(axis=1).mean()) if F.size else 0.0
    return ridge_lambda * (scale if scale > 0 else 1.0)


def transform_rows(T, F):
    """Apply ``T`` row-wise; each output row depends only on its input row."""
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[1] != T.n:
        raise DimensionError(f"rows of dimension {F.shape[-1]} cannot pass through a {T.n}x{T.n} transformation")
    if T.is_identity:
        return F.copy()
    out = rowwise_matmul(F, T.values)
    if T.bias is not None:
        out = out + T.bias
    return out


def apply_transformation(T, targets):
    """Replace each target row ``y`` with ``T y`` and mark the set aligned."""
    if targets.n != T.n:
        raise DimensionError(f"target dimension {targets.n} does not match transformation dimension {T.n}")
    return TargetSet(targets.shard_id, transform_rows(T, targets.targets), aligned=True)


def alignment_for_best(n, participant_id=None):
    """Identity transformation used by the reference participant itself."""
    if int(n) < 1:
        raise DimensionError("n must be >= 1")
    return TransformationMatrix(participant_id, int(n), np.eye(int(n)), 0.0, 0.0)


def optimality_gap(T, F, Y):
    """Frobenius norm of the ridge objective's gradient at ``T`` (up to a factor 2)."""
    F = np.asarray(F, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    return float(np.linalg.norm((T.values @ F.T - Y.T) @ F + T.ridge_lambda * T.values))


class TargetAligner(TransformerMixin, BaseEstimator):
    """Estimator form of :func:`fit_transformation`.

    ``fit(F, Ystar)`` learns the map, ``transform(F)`` applies it.

    Parameters
    ----------
    ridge_lambda : float
        Penalty; interpreted relative to the mean squared row norm of ``F``
        when ``relative`` is true.
    relative : bool
    affine : bool
    """

    def __init__(self, ridge_lambda=1e-6, relative=True, affine=False):
        self.ridge_lambda = ridge_lambda
        self.relative = relative
        self.affine = affine

    def fit(self, F, Ystar):
        lam = relative_ridge(F, self.ridge_lambda) if self.relative else self.ridge_lambda
        self.transformation_ = fit_transformation(F, Ystar, lam, affine=self.affine)
        self.n_features_in_ = self.transformation_.n
        return self

    def transform(self, F):
        check_is_fitted(self, "transformation_")
        return transform_rows(self.transformation_, F)

    @property
    def residual_(self):
        check_is_fitted(self, "transformation_")
        return self.transformation_.residual
