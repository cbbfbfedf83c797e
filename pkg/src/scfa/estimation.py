"""Closed-form parameter estimation for the interconnected-community factor model.

The model for a p-vector X with K communities is X = L f + u with block
loading matrix L, factor covariance Sigma_f and per-community error
variances, which makes cov(X) a uniform-block matrix with coordinates
(a, b).  Both coordinates have closed-form maximum-likelihood estimators
built from block traces and block sums of the sample covariance, so no
iteration is ever needed and p can be large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CommunityTooSmall,
    DegenerateSample,
    DimensionMismatch,
    SampleTooSmall,
    SingularMatrix,
)
from .ubmatrix import BlockSummaries, PartitionVector, UniformBlockMatrix, block_summaries


class Membership:
    """Assignment of each variable to one of K communities.

    Labels are compacted to 1..K in first-appearance order.  The derived
    permutation lists variable indices contiguously by community (stable
    within a community), and ``inverse_permutation`` undoes it.  Every
    community needs at least 2 variables here; estimation and membership
    files require at least 3, where the loading-scale identification
    argument lives, and enforce it themselves.
    """

    __slots__ = ("labels", "names", "partition", "indices", "permutation",
                 "inverse_permutation", "_label_names")

    def __init__(self, labels, names=None):
        labels = list(labels)
        if not labels:
            raise ValueError("membership must cover at least one variable")
        seen: dict = {}
        compact = np.empty(len(labels), dtype=np.intp)
        for j, lab in enumerate(labels):
            if lab not in seen:
                seen[lab] = len(seen) + 1
            compact[j] = seen[lab]
        self.labels = compact
        self.labels.setflags(write=False)
        self._label_names = tuple(seen)
        if names is not None:
            names = tuple(str(n) for n in names)
            if len(names) != len(labels):
                raise DimensionMismatch("names and labels must have the same length")
        self.names = names
        K = len(seen)
        indices = [np.flatnonzero(compact == k + 1) for k in range(K)]
        counts = [idx.size for idx in indices]
        for k, c in enumerate(counts):
            if c < 2:
                raise CommunityTooSmall(
                    f"community {self._label_names[k]!r} has {c} variable(s); "
                    "at least 2 are required",
                    community=k + 1,
                )
        self.partition = PartitionVector(counts)
        self.indices = tuple(idx for idx in indices)
        perm = np.concatenate(indices)
        self.permutation = perm
        self.permutation.setflags(write=False)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(perm.size)
        self.inverse_permutation = inv
        self.inverse_permutation.setflags(write=False)

    def require_factor_sizes(self):
        """Raise unless every community has the > 2 variables estimation needs."""
        for k, idx in enumerate(self.indices):
            if idx.size <= 2:
                raise CommunityTooSmall(
                    f"community {self._label_names[k]!r} has {idx.size} variables; "
                    "estimation requires more than 2",
                    community=k + 1,
                )

    @classmethod
    def from_partition(cls, partition: PartitionVector) -> "Membership":
        """Contiguous membership: the first p_1 variables in community 1, etc."""
        if not isinstance(partition, PartitionVector):
            partition = PartitionVector(partition)
        labels = np.repeat(np.arange(1, partition.K + 1), partition.sizes)
        return cls(labels)

    @property
    def K(self) -> int:
        return self.partition.K

    @property
    def p(self) -> int:
        return self.labels.size

    def label_of(self, name_or_index) -> int:
        if isinstance(name_or_index, str):
            if self.names is None:
                raise KeyError("membership carries no variable names")
            name_or_index = self.names.index(name_or_index)
        return int(self.labels[name_or_index])

    def __repr__(self):
        return f"Membership(K={self.K}, sizes={list(self.partition.sizes)})"


@dataclass(frozen=True)
class DataMatrix:
    """n x p data, rows are observations.  Entries must be finite, n >= 2, p >= 2."""

    values: np.ndarray
    columns: tuple | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=float)
        if values.ndim != 2:
            raise DimensionMismatch(f"data must be 2-d, got shape {values.shape}")
        if values.shape[0] < 2:
            raise DegenerateSample(f"need at least 2 observations, got {values.shape[0]}")
        if values.shape[1] < 2:
            raise DimensionMismatch(f"need at least 2 variables, got {values.shape[1]}")
        if not np.isfinite(values).all():
            raise ValueError("data contains non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.columns is not None:
            cols = tuple(str(c) for c in self.columns)
            if len(cols) != values.shape[1]:
                raise DimensionMismatch("column names do not match data width")
            object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def sample_covariance(data, center: bool = False) -> np.ndarray:
    """Sample covariance of the rows.

    Default is the zero-mean convention S = X'X / n.  With ``center=True``
    column means are removed and the divisor becomes n - 1; real data are
    rarely mean zero, so centering is an explicit choice, never a guess.
    """
    x = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise DimensionMismatch(f"data must be 2-d, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise DegenerateSample(f"need at least 2 observations, got {n}")
    if center:
        xc = x - x.mean(axis=0)
        return (xc.T @ xc) / (n - 1)
    return (x.T @ x) / n


@dataclass(frozen=True)
class FitDiagnostics:
    """Non-fatal findings recorded while fitting."""

    a_nonpositive: tuple = ()      # 1-based communities with a_hat <= 0
    b_not_positive_definite: bool = False
    repaired: bool = False
    notes: tuple = ()


@dataclass(frozen=True)
class ScfaFit:
    """Closed-form fit: coordinates (a_hat, b_hat), loading scales tau and
    the derived factor-model matrices.

    The derived views are exact functions of the stored fields: the loading
    matrix has block k equal to tau_k * 1, the factor covariance is
    b_hat_kk' / (tau_k tau_k'), and the error covariance is block-diagonal
    with a_hat_kk on block k.
    """

    a_hat: np.ndarray
    b_hat: np.ndarray
    partition: PartitionVector
    tau: np.ndarray | None = None
    log_likelihood: float = math.nan
    diagnostics: FitDiagnostics = field(default_factory=FitDiagnostics)

    def __post_init__(self):
        part = self.partition
        if not isinstance(part, PartitionVector):
            part = PartitionVector(part)
            object.__setattr__(self, "partition", part)
        K = part.K
        a = np.asarray(self.a_hat, dtype=float).reshape(-1)
        b = np.asarray(self.b_hat, dtype=float)
        if a.shape != (K,) or b.shape != (K, K):
            raise DimensionMismatch("a_hat/b_hat shapes do not match the partition")
        tau = self.tau
        tau = np.ones(K) if tau is None else np.asarray(tau, dtype=float).reshape(-1)
        if tau.shape != (K,):
            raise DimensionMismatch(f"tau must have length {K}")
        if np.any(tau == 0.0):
            raise ValueError("loading scales tau must be non-zero")
        for arr in (a, b, tau):
            arr.setflags(write=False)
        object.__setattr__(self, "a_hat", a)
        object.__setattr__(self, "b_hat", b)
        object.__setattr__(self, "tau", tau)

    @property
    def K(self) -> int:
        return self.partition.K

    @property
    def p(self) -> int:
        return self.partition.p

    def loading_matrix(self) -> np.ndarray:
        """p x K block loading matrix with tau_k on community k's column."""
        L = np.zeros((self.p, self.K))
        for k in range(self.K):
            L[self.partition.block_slice(k), k] = self.tau[k]
        return L

    def sigma_f(self) -> np.ndarray:
        """K x K factor covariance b_hat_kk' / (tau_k tau_k')."""
        return self.b_hat / np.outer(self.tau, self.tau)

    def sigma_u_diag(self) -> np.ndarray:
        """Length-p diagonal of the error covariance: a_hat_kk repeated."""
        return np.repeat(self.a_hat, np.asarray(self.partition.sizes))

    def sigma_u_dense(self) -> np.ndarray:
        return np.diag(self.sigma_u_diag())

    def implied_covariance(self) -> UniformBlockMatrix:
        """The model covariance L Sigma_f L' + Sigma_u as a UB matrix.

        Its coordinates are (a_hat, b_hat) for any tau: the tau factors
        cancel against the 1/(tau tau') in Sigma_f by construction.
        """
        return UniformBlockMatrix(self.a_hat, self.b_hat, self.partition)


def implied_covariance(fit: ScfaFit) -> UniformBlockMatrix:
    return fit.implied_covariance()


def _summaries_from_data(
    x: np.ndarray, indices, center: bool
) -> tuple[BlockSummaries, int]:
    """Block traces and sums of the sample covariance, straight from X.

    Never materializes the p x p covariance: per community we only need the
    row sums and the squared column sums, an O(np + nK^2) pass.  Addends
    within a community are sorted before summing so the result is invariant,
    bit for bit, under any permutation of variables inside a community.
    """
    n = x.shape[0]
    if center:
        x = x - x.mean(axis=0)
        divisor = n - 1
    else:
        divisor = n
    K = len(indices)
    row_sums = np.empty((n, K))
    sq_traces = np.empty(K)
    for k, idx in enumerate(indices):
        block = x[:, idx]
        row_sums[:, k] = np.sort(block, axis=1).sum(axis=1)
        sq_traces[k] = np.sort((block * block).sum(axis=0)).sum()
    sums = (row_sums.T @ row_sums) / divisor
    traces = sq_traces / divisor
    return BlockSummaries(traces=traces, sums=sums), n


def _closed_form_estimates(summ: BlockSummaries, partition: PartitionVector):
    sizes = partition.sizes_array()
    traces, sums = summ.traces, summ.sums
    denom_diag = sizes * (sizes - 1.0)
    a_hat = (sizes * traces - np.diag(sums)) / denom_diag
    b_hat = sums / np.outer(sizes, sizes)
    np.fill_diagonal(b_hat, (np.diag(sums) - traces) / denom_diag)
    # b_hat inherits exact symmetry from the block sums
    return a_hat, b_hat


def _check_sample_size(n: int, K: int):
    q = K + K * (K + 1) // 2
    if n <= q:
        raise SampleTooSmall(
            f"n = {n} observations cannot identify {q} covariance parameters; "
            f"need n > {q}"
        )


def estimate(
    data: DataMatrix,
    membership: Membership,
    center: bool = False,
    repair: bool = False,
) -> ScfaFit:
    """Closed-form fit of (a, b) from data and a community membership.

    a_hat_kk = (p_k tr(S_kk) - sum(S_kk)) / (p_k (p_k - 1)); b_hat is the
    block mean off the diagonal and (sum - tr) / (p_k (p_k - 1)) on it.
    Negative a_hat or a non-PD b_hat are recorded as diagnostics rather than
    errors; ``repair=True`` additionally floors a_hat at 1e-8 and clips the
    eigenvalues of b_hat at 1e-8.
    """
    if membership.p != data.p:
        raise DimensionMismatch(
            f"membership covers {membership.p} variables, data has {data.p}"
        )
    membership.require_factor_sizes()
    _check_sample_size(data.n, membership.K)
    summ, n = _summaries_from_data(data.values, membership.indices, center)
    return _fit_from_summaries(summ, n, membership.partition, repair)


def estimate_from_covariance(
    s_dense, n: int, partition: PartitionVector, repair: bool = False
) -> ScfaFit:
    """Dense-covariance twin of ``estimate`` for testing and precomputed S.

    Accepts any valid partition (sizes >= 2); the closed forms only divide
    by p_k (p_k - 1).  The factor-model reading of the output needs sizes
    above 2, which ``estimate`` itself enforces through Membership.
    """
    if not isinstance(partition, PartitionVector):
        partition = PartitionVector(partition)
    _check_sample_size(n, partition.K)
    summ = block_summaries(s_dense, partition)
    return _fit_from_summaries(summ, n, partition, repair)


def _fit_from_summaries(summ, n, partition, repair) -> ScfaFit:
    a_hat, b_hat = _closed_form_estimates(summ, partition)
    notes = []
    nonpos = tuple(int(k + 1) for k in np.flatnonzero(a_hat <= 0.0))
    if nonpos:
        notes.append(f"a_hat non-positive for communities {nonpos}")
    b_eigs = np.linalg.eigvalsh(0.5 * (b_hat + b_hat.T))
    b_not_pd = bool(b_eigs[0] <= 0.0)
    if b_not_pd:
        notes.append(f"b_hat not positive definite (min eigenvalue {b_eigs[0]:.3e})")
    repaired = False
    if repair and (nonpos or b_not_pd):
        a_hat = np.maximum(a_hat, 1e-8)
        if b_not_pd:
            w, v = np.linalg.eigh(0.5 * (b_hat + b_hat.T))
            b_hat = (v * np.maximum(w, 1e-8)) @ v.T
            b_hat = 0.5 * (b_hat + b_hat.T)
        repaired = True
        notes.append("repair applied: a_hat floored and b_hat eigenvalues clipped at 1e-8")
    try:
        loglik = _log_likelihood_from_summaries(
            a_hat, b_hat, summ.traces, summ.sums, n, partition
        )
    except (SingularMatrix, ValueError):
        loglik = math.nan
        notes.append("log-likelihood not evaluable: implied covariance not PD")
    diagnostics = FitDiagnostics(
        a_nonpositive=nonpos,
        b_not_positive_definite=b_not_pd,
        repaired=repaired,
        notes=tuple(notes),
    )
    return ScfaFit(
        a_hat=a_hat,
        b_hat=b_hat,
        partition=partition,
        log_likelihood=loglik,
        diagnostics=diagnostics,
    )


def _log_likelihood_from_summaries(a, b, traces, sums, n, partition) -> float:
    sigma = UniformBlockMatrix(a, b, partition)
    if not sigma.is_positive_definite():
        raise SingularMatrix("covariance parameters do not give a PD matrix")
    _, logdet = sigma.log_determinant()
    inv = sigma.inverse()
    trace_term = float(np.dot(inv.a, traces) + np.sum(inv.b * sums))
    return -0.5 * n * (logdet + trace_term)


def log_likelihood(a, b, s_dense, n: int, partition: PartitionVector) -> float:
    """Gaussian log-likelihood -(n/2)[log det Sigma + tr(S Sigma^{-1})].

    Evaluated entirely through the K x K coordinates: the determinant comes
    from the UB log-determinant and the trace term contracts the inverse's
    coordinates against block traces and sums of S, so no p x p inverse is
    ever formed.
    """
    if not isinstance(partition, PartitionVector):
        partition = PartitionVector(partition)
    summ = block_summaries(s_dense, partition)
    return _log_likelihood_from_summaries(a, b, summ.traces, summ.sums, n, partition)
