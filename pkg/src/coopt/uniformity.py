"""Uniform value of a feature set and best-prior selection.

The uniform value is ``log mean_{i != j} exp(sign * tau * ||f_i - f_j||^2)``
over ordered pairs of (optionally l2-normalized) rows. With the default
``sign=-1`` lower values mean features spread more evenly over the sphere,
which is read as a better prior.
"""

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._validation import check_seed
from .exceptions import InsufficientDataError, NumericError, SelectionError

DEFAULT_TAU = 2.0


@dataclass(frozen=True)
class UniformValueReport:
    participant_id: int
    value: float
    shared_set_hash: str
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise NumericError(f"uniform value of participant {self.participant_id} is not finite")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def _prepare(F, tau, normalize):
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] < 2:
        raise InsufficientDataError(f"uniform value needs at least 2 feature rows, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise NumericError("features contain non-finite values")
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if normalize:
        norms = np.linalg.norm(F, axis=1, keepdims=True)
        F = np.divide(F, norms, out=np.zeros_like(F), where=norms > 0)
    return F


def _log_mean_exp(a):
    peak = a.max()
    return float(peak + np.log(np.exp(a - peak).sum()) - np.log(a.size))


def _check_sign(sign):
    if sign not in (-1, 1):
        raise ValueError(f"sign must be -1 or +1, got {sign}")


def uniform_value(F, tau=DEFAULT_TAU, normalize=True, sign=-1):
    """Exact uniform value over all ordered pairs ``i != j``.

    ``sign=+1`` evaluates the exponent with a positive sign instead.
    """
    _check_sign(sign)
    F = _prepare(F, tau, normalize)
    D = cdist(F, F, "sqeuclidean")
    count = F.shape[0]
    off = D[~np.eye(count, dtype=bool)]
    return _log_mean_exp(sign * tau * off)


def uniform_value_subsampled(F, tau=DEFAULT_TAU, max_pairs=100_000, seed=0, normalize=True, sign=-1):
    """Estimate :func:`uniform_value` from a seeded sample of ordered pairs.

    Falls back to the exact value when ``max_pairs`` covers every pair.
    """
    _check_sign(sign)
    if int(max_pairs) < 1:
        raise ValueError("max_pairs must be >= 1")
    F = _prepare(F, tau, normalize)
    count = F.shape[0]
    if max_pairs >= count * (count - 1):
        return uniform_value(F, tau=tau, normalize=False, sign=sign)
    rng = np.random.default_rng(check_seed(seed))
    i = rng.integers(count, size=max_pairs)
    j = rng.integers(count - 1, size=max_pairs)
    j = j + (j >= i)
    d = ((F[i] - F[j]) ** 2).sum(axis=1)
    return _log_mean_exp(sign * tau * d)


def select_best_prior(reports):
    """Participant id with the minimal value; ties go to the smallest id."""
    reports = list(reports)
    if not reports:
        raise SelectionError("no uniform value reports to select from")
    hashes = {r.shared_set_hash for r in reports}
    taus = {float(r.tau) for r in reports}
    if len(hashes) > 1:
        raise SelectionError(f"reports were computed on different shared sets: {sorted(hashes)}")
    if len(taus) > 1:
        raise SelectionError(f"reports use different tau values: {sorted(taus)}")
    return min(reports, key=lambda r: (r.value, r.participant_id)).participant_id


def rank_reports(reports):
    """Reports sorted best-first with the same tie-break as :func:`select_best_prior`."""
    return sorted(reports, key=lambda r: (r.value, r.participant_id))


def shared_set_hash(X, ids=None):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X, dtype="<f4").tobytes())
    if ids is not None:
        h.update(np.ascontiguousarray(ids, dtype="<u8").tobytes())
    return h.hexdigest()
