"""Least-squares factor scores and their exact covariance.

With unit loading scales the block structure collapses the OLS score to the
community mean of each observation, and the GLS / feasible-GLS weightings
give the identical value because the weights are constant within a
community.  Scoring is O(nK) after one reduction pass over the data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonPositiveVariance
from .estimation import DataMatrix, Membership, ScfaFit
from .ubmatrix import PartitionVector

# Tolerance of the debug-mode OLS == GLS cross-check, relative to the score scale.
_EQUIVALENCE_RTOL = 1e-12


@dataclass(frozen=True)
class FactorScoreMatrix:
    """n x K estimated factor scores; row i is the score vector of observation i.

    ``covariance`` is the exact K x K covariance of a score row (diagonal
    error correction plus the factor covariance) when the caller supplied
    the model parameters, else None.
    """

    scores: np.ndarray
    partition: PartitionVector
    covariance: np.ndarray | None = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=float)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    @property
    def K(self) -> int:
        return self.scores.shape[1]


def _community_sums(data: DataMatrix, membership: Membership) -> np.ndarray:
    if membership.p != data.p:
        raise DimensionMismatch(
            f"membership covers {membership.p} variables, data has {data.p}"
        )
    x = data.values
    out = np.empty((data.n, membership.K))
    for k, idx in enumerate(membership.indices):
        out[:, k] = x[:, idx].sum(axis=1)
    return out


def score_ols(data: DataMatrix, membership: Membership) -> FactorScoreMatrix:
    """OLS scores: the mean of each observation over each community's variables."""
    sums = _community_sums(data, membership)
    sizes = membership.partition.sizes_array()
    return FactorScoreMatrix(scores=sums / sizes, partition=membership.partition)


def score_gls(
    data: DataMatrix, membership: Membership, sigma_u_diag
) -> FactorScoreMatrix:
    """GLS scores under per-community error variances (length K, all positive).

    Because the weights are constant within a community they cancel, and the
    result equals the OLS score; in debug mode that equality is asserted to
    1e-12.  A per-variable variance vector is rejected: the model's error
    covariance is constant within each community by construction.
    """
    sigma = np.asarray(sigma_u_diag, dtype=float).reshape(-1)
    if sigma.shape != (membership.K,):
        raise DimensionMismatch(
            f"need one error variance per community ({membership.K}), got {sigma.shape}"
        )
    if np.any(sigma <= 0.0) or not np.isfinite(sigma).all():
        raise NonPositiveVariance("error variances must be positive and finite")
    sums = _community_sums(data, membership)
    sizes = membership.partition.sizes_array()
    # (L' W L)^{-1} L' W x with W = 1/sigma per community
    scores = (sums / sigma) / (sizes / sigma)
    if __debug__:
        ols = sums / sizes
        gap = float(np.max(np.abs(scores - ols)))
        scale = max(1.0, float(np.max(np.abs(ols))))
        assert gap <= _EQUIVALENCE_RTOL * scale, (
            f"GLS and OLS scores differ by {gap:.3e}"
        )
    return FactorScoreMatrix(scores=scores, partition=membership.partition)


def score_fgls(
    data: DataMatrix, membership: Membership, fit: ScfaFit
) -> FactorScoreMatrix:
    """Feasible GLS: plug the estimated error variances into the GLS weighting."""
    return score_gls(data, membership, fit.a_hat)


def score_covariance(a, b, partition: PartitionVector) -> np.ndarray:
    """Exact covariance of a score row: diag(a_kk / p_k) + b.

    The diagonal correction shrinks to zero as community sizes grow, so the
    score covariance converges to the factor covariance itself.
    """
    if not isinstance(partition, PartitionVector):
        partition = PartitionVector(partition)
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float)
    if a.shape != (partition.K,) or b.shape != (partition.K, partition.K):
        raise DimensionMismatch("a/b shapes do not match the partition")
    return np.diag(a / partition.sizes_array()) + b
