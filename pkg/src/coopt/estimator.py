"""Estimator facade over one collaborative optimization round."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .config import ExperimentConfig
from .core import Dataset
from .priors import build_prior, extract
from .projection import project, sample_projection
from .protocol import run_round


class CollaborativeTargetOptimizer(TransformerMixin, BaseEstimator):
    """Assign aligned soft targets to unlabeled rows with K simulated participants.

    ``fit(X)`` runs partitioning, per-participant optimization, uniform-value
    ranking, alignment and merging; ``targets_`` holds the merged targets in
    the row order of ``X``. ``transform`` labels new rows with the reference
    participant's pipeline (its targets need no alignment).

    Parameters
    ----------
    roster : list of dict or PriorModelSpec
        One entry per participant, or a single entry replicated K times.
    K : int
    shared_fraction : float in (0, 1)
    tau : float
    strategy : {"best", "median", "worst", "none"}
    ridge_lambda : float
        Relative ridge penalty for the alignment solve.
    n : int or None
        Common target dimension; defaults to the best prior's width.
    seed : int
    """

    def __init__(self, roster=None, K=4, shared_fraction=0.1, tau=2.0, strategy="best", ridge_lambda=1e-6,
                 n=None, seed=0):
        self.roster = roster
        self.K = K
        self.shared_fraction = shared_fraction
        self.tau = tau
        self.strategy = strategy
        self.ridge_lambda = ridge_lambda
        self.n = n
        self.seed = seed

    def _config(self):
        flat = {
            "K": self.K, "seed": self.seed, "shared_fraction": self.shared_fraction, "n": self.n,
            "uniformity.tau": self.tau, "alignment.strategy": self.strategy,
            "alignment.ridge_lambda": self.ridge_lambda,
        }
        if self.roster is not None:
            flat["roster"] = [r.to_dict() if hasattr(r, "to_dict") else dict(r) for r in self.roster]
        return ExperimentConfig().with_overrides(**flat)

    def fit(self, X, y=None):
        """``y`` is only consulted by oracle priors (simulated annotators)."""
        X = check_matrix(X, min_rows=2)
        self.config_ = self._config()
        dataset = Dataset(X, labels=y)
        optimized, metrics = run_round(self.config_, dataset)
        self.n_features_in_ = X.shape[1]
        self.metrics_ = metrics
        self.best_prior_id_ = metrics.best_prior_id
        self.reference_id_ = metrics.reference_id
        # dataset ids are row positions, and merge orders by id
        self.targets_ = optimized.Y
        self.optimized_ = optimized
        spec = self.config_.prior_specs()[metrics.reference_id]
        self._reference = (build_prior(spec.__class__(**{**spec.to_dict(), "in_dim": X.shape[1]}),
                                       dataset if spec.kind == "oracle" else None),
                           sample_projection(spec.out_dim, metrics.n,
                                             self.config_.participant_projection_seeds()[metrics.reference_id]))
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X, y).targets_.astype(np.float64)

    def transform(self, X):
        check_is_fitted(self, "targets_")
        X = check_matrix(X, n_cols=self.n_features_in_)
        prior, W = self._reference
        if prior.kind == "oracle":
            raise ValueError("an oracle reference cannot label unseen rows")
        return project(W, extract(prior, X))
