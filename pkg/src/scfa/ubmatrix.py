"""Exact O(K^3) linear algebra on uniform-block matrices.

A uniform-block (UB) matrix is a p x p matrix whose partitioned blocks are
``a_kk I + b_kk J`` on the diagonal and ``b_kk' 1`` off the diagonal.  It is
fully described by a K-vector ``a``, a K x K matrix ``b`` and the partition
sizes, and every operation here works on those coordinates; the dense p x p
realization exists only for conversion and oracle testing.

All types are immutable after construction and all operations are pure, so
values can be shared freely across threads.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .errors import (
    ConsistencyError,
    DimensionMismatch,
    PartitionMismatch,
    SingularMatrix,
    StructureViolation,
)

# Relative threshold below which a matrix is treated as singular.
_SINGULAR_RTOL = 1e-12
# Asymmetry (relative to the largest coordinate) silently mirrored away at
# construction; anything larger is rejected unless explicitly allowed.
_MIRROR_RTOL = 1e-12
# Asymmetry of the inverse's B coordinate beyond this is numerical breakdown.
_INVERSE_ASYM_RTOL = 1e-8


class PartitionVector:
    """Community sizes (p_1, ..., p_K); every size must exceed 1.

    Carries the cumulative offsets so block slices are O(1).  Singleton
    communities are rejected outright rather than special-cased.
    """

    __slots__ = ("sizes", "offsets", "_sizes_f", "_mult_f", "_odd_mult")

    def __init__(self, sizes):
        sizes = tuple(int(s) for s in sizes)
        if not sizes:
            raise ValueError("partition must contain at least one community")
        if any(s <= 1 for s in sizes):
            raise ValueError(f"every community size must exceed 1, got {sizes}")
        self.sizes = sizes
        offsets = [0]
        for s in sizes:
            offsets.append(offsets[-1] + s)
        self.offsets = tuple(offsets)
        # derived constants on the determinant/inverse hot path
        self._sizes_f = _as_readonly(sizes)
        self._mult_f = _as_readonly([s - 1 for s in sizes])
        odd = np.array([(s - 1) % 2 == 1 for s in sizes], dtype=bool)
        odd.setflags(write=False)
        self._odd_mult = odd

    @property
    def K(self) -> int:
        return len(self.sizes)

    @property
    def p(self) -> int:
        return self.offsets[-1]

    def block_slice(self, k: int) -> slice:
        return slice(self.offsets[k], self.offsets[k + 1])

    def sizes_array(self) -> np.ndarray:
        return self._sizes_f

    def __eq__(self, other):
        return isinstance(other, PartitionVector) and self.sizes == other.sizes

    def __hash__(self):
        return hash(self.sizes)

    def __len__(self):
        return len(self.sizes)

    def __repr__(self):
        return f"PartitionVector({list(self.sizes)})"


class SignedLogDet(NamedTuple):
    sign: float
    logabsdet: float


def _as_readonly(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


class UniformBlockMatrix:
    """A UB matrix stored as its coordinates ``(a, b, partition)``.

    ``b`` is kept exactly symmetric (lower triangle mirrored bit-exactly);
    products of UB matrices can legitimately have an asymmetric ``b``
    coordinate, which ``multiply`` constructs through an internal escape
    hatch.  Operations that rely on symmetry (eigenvalues, definiteness)
    refuse such values.
    """

    __slots__ = ("a", "b", "partition", "b_is_symmetric")

    def __init__(self, a, b, partition: PartitionVector, *, _allow_asymmetric=False):
        if not isinstance(partition, PartitionVector):
            partition = PartitionVector(partition)
        K = partition.K
        a = np.asarray(a, dtype=float).reshape(-1)
        b = np.asarray(b, dtype=float)
        if a.shape != (K,):
            raise DimensionMismatch(f"a must have length {K}, got {a.shape}")
        if b.shape != (K, K):
            raise DimensionMismatch(f"b must be {K}x{K}, got {b.shape}")
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise ValueError("coordinates must be finite")
        asym = float(np.max(np.abs(b - b.T))) if K > 1 else 0.0
        if asym == 0.0:
            symmetric = True
        elif asym <= _MIRROR_RTOL * max(1.0, float(np.max(np.abs(b)))):
            b = np.tril(b) + np.tril(b, -1).T
            symmetric = True
        elif _allow_asymmetric:
            symmetric = False
        else:
            raise ValueError(f"b must be symmetric (max asymmetry {asym:.3e})")
        self.a = _as_readonly(a)
        self.b = _as_readonly(b)
        self.partition = partition
        self.b_is_symmetric = symmetric

    # ------------------------------------------------------------------
    # construction helpers

    @classmethod
    def identity(cls, partition: PartitionVector) -> "UniformBlockMatrix":
        K = partition.K if isinstance(partition, PartitionVector) else len(partition)
        return cls(np.ones(K), np.zeros((K, K)), partition)

    @classmethod
    def zeros(cls, partition: PartitionVector) -> "UniformBlockMatrix":
        K = partition.K if isinstance(partition, PartitionVector) else len(partition)
        return cls(np.zeros(K), np.zeros((K, K)), partition)

    @property
    def K(self) -> int:
        return self.partition.K

    @property
    def p(self) -> int:
        return self.partition.p

    def __eq__(self, other):
        return (
            isinstance(other, UniformBlockMatrix)
            and self.partition == other.partition
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.b, other.b)
        )

    def __repr__(self):
        return (
            f"UniformBlockMatrix(a={self.a.tolist()}, b={self.b.tolist()}, "
            f"partition={self.partition!r})"
        )

    # ------------------------------------------------------------------
    # conversion

    def to_dense(self) -> np.ndarray:
        """Realize the p x p matrix: blocks ``b_kk' 1`` plus ``a_kk`` on the diagonal."""
        sizes = np.asarray(self.partition.sizes)
        dense = np.repeat(np.repeat(self.b, sizes, axis=0), sizes, axis=1)
        idx = np.arange(self.p)
        dense[idx, idx] += np.repeat(self.a, sizes)
        return dense

    def delta(self) -> np.ndarray:
        """The K x K matrix ``diag(a) + b @ diag(sizes)`` driving determinant and inverse."""
        return np.diag(self.a) + self.b * self.partition.sizes_array()

    # ------------------------------------------------------------------
    # algebra

    def _check_partition(self, other):
        if self.partition != other.partition:
            raise PartitionMismatch(
                f"partitions differ: {self.partition!r} vs {other.partition!r}"
            )

    def add(self, other: "UniformBlockMatrix") -> "UniformBlockMatrix":
        self._check_partition(other)
        allow = not (self.b_is_symmetric and other.b_is_symmetric)
        return UniformBlockMatrix(
            self.a + other.a, self.b + other.b, self.partition, _allow_asymmetric=allow
        )

    def subtract(self, other: "UniformBlockMatrix") -> "UniformBlockMatrix":
        self._check_partition(other)
        allow = not (self.b_is_symmetric and other.b_is_symmetric)
        return UniformBlockMatrix(
            self.a - other.a, self.b - other.b, self.partition, _allow_asymmetric=allow
        )

    __add__ = add
    __sub__ = subtract

    def __neg__(self):
        return UniformBlockMatrix(
            -self.a, -self.b, self.partition, _allow_asymmetric=not self.b_is_symmetric
        )

    def multiply(self, other: "UniformBlockMatrix") -> "UniformBlockMatrix":
        """Coordinate product: ``a1 a2`` and ``a1 b2 + b1 a2 + b1 P b2``.

        The dense realization of the result equals the dense matrix product.
        Even for symmetric operands the ``b`` coordinate of a product is
        generally asymmetric, so the result may carry one.
        """
        self._check_partition(other)
        sizes = self.partition.sizes_array()
        a_star = self.a * other.a
        b_star = (
            self.a[:, None] * other.b
            + self.b * other.a[None, :]
            + (self.b * sizes[None, :]) @ other.b
        )
        return UniformBlockMatrix(a_star, b_star, self.partition, _allow_asymmetric=True)

    def square(self) -> "UniformBlockMatrix":
        """The matrix square; coordinates ``a^2`` and ``a b + b a + b P b``."""
        return self.multiply(self)

    __matmul__ = multiply

    def eigenvalues(self) -> np.ndarray:
        """All p eigenvalues: each ``a_kk`` with multiplicity ``p_k - 1`` plus
        the K eigenvalues of delta, returned sorted ascending.

        Delta is similar to the symmetric ``diag(a) + P^{1/2} b P^{1/2}``,
        which is what actually gets factorized so the output is guaranteed
        real and numerically stable.
        """
        if not self.b_is_symmetric:
            raise ValueError("eigenvalues require a symmetric b coordinate")
        sizes = self.partition.sizes_array()
        root = np.sqrt(sizes)
        sym = np.diag(self.a) + self.b * np.outer(root, root)
        delta_eigs = np.linalg.eigvalsh(sym)
        bulk = np.repeat(self.a, np.asarray(self.partition.sizes) - 1)
        return np.sort(np.concatenate([bulk, delta_eigs]))

    def is_positive_definite(self) -> bool:
        """True iff all ``a_kk > 0`` and every eigenvalue of delta is positive."""
        if not self.b_is_symmetric:
            raise ValueError("definiteness requires a symmetric b coordinate")
        if not np.all(self.a > 0.0):
            return False
        sizes = self.partition.sizes_array()
        root = np.sqrt(sizes)
        sym = np.diag(self.a) + self.b * np.outer(root, root)
        return bool(np.linalg.eigvalsh(sym)[0] > 0.0)

    def log_determinant(self) -> SignedLogDet:
        """Sign and log |det| via ``sum (p_k - 1) log a_kk + log det(delta)``.

        Raises SingularMatrix when some ``a_kk`` or delta is zero to within
        1e-12 of the largest coordinate scale.  Kept lean: this is the fast
        path that replaces a dense Cholesky.
        """
        a = self.a
        part = self.partition
        K = len(part.sizes)
        delta = self.b * part._sizes_f
        delta.flat[:: K + 1] += a
        abs_a = np.abs(a)
        scale = max(float(abs_a.max()), float(np.abs(delta).max()))
        if scale == 0.0 or float(abs_a.min()) <= _SINGULAR_RTOL * scale:
            raise SingularMatrix("a uniform-block matrix with a zero a_kk is singular")
        sign_d, logdet_d = np.linalg.slogdet(delta)
        # geometric-mean eigenvalue magnitude as the relative singularity gauge
        if sign_d == 0.0 or logdet_d <= K * math.log(_SINGULAR_RTOL * scale):
            raise SingularMatrix("delta = diag(a) + b P is singular")
        log_a = float(np.log(abs_a) @ part._mult_f)
        if bool((a > 0.0).all()):
            sign = float(sign_d)
        else:
            neg_odd = int(np.count_nonzero((a < 0.0) & part._odd_mult))
            sign = float(sign_d) * (-1.0 if neg_odd % 2 else 1.0)
        return SignedLogDet(sign, log_a + float(logdet_d))

    def inverse(self) -> "UniformBlockMatrix":
        """Coordinate inverse ``(a^{-1}, -delta^{-1} b a^{-1})``.

        For symmetric input the b coordinate of the inverse is symmetric in
        exact arithmetic; the numerical result is symmetrized by averaging,
        and asymmetry beyond 1e-8 (relative) trips ConsistencyError.
        """
        a = self.a
        delta = self.delta()
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(delta))))
        if scale == 0.0 or float(np.min(np.abs(a))) <= _SINGULAR_RTOL * scale:
            raise SingularMatrix("a uniform-block matrix with a zero a_kk is singular")
        svals = np.linalg.svd(delta, compute_uv=False)
        if svals[-1] <= _SINGULAR_RTOL * svals[0]:
            raise SingularMatrix("delta = diag(a) + b P is numerically singular")
        b_star = -np.linalg.solve(delta, self.b) / a[None, :]
        if self.b_is_symmetric:
            asym = float(np.max(np.abs(b_star - b_star.T)))
            if asym > _INVERSE_ASYM_RTOL * max(1.0, float(np.max(np.abs(b_star)))):
                raise ConsistencyError(
                    f"inverse b coordinate asymmetric by {asym:.3e}; "
                    "matrix is too ill-conditioned"
                )
            b_star = 0.5 * (b_star + b_star.T)
            return UniformBlockMatrix(1.0 / a, b_star, self.partition)
        return UniformBlockMatrix(1.0 / a, b_star, self.partition, _allow_asymmetric=True)

    # ------------------------------------------------------------------
    # serialization

    def to_json_dict(self) -> dict:
        return {
            "sizes": list(self.partition.sizes),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "UniformBlockMatrix":
        return cls(payload["a"], payload["b"], PartitionVector(payload["sizes"]))


class BlockSummaries(NamedTuple):
    """Block traces (diagonal blocks only) and block element sums of a dense matrix."""

    traces: np.ndarray  # (K,)
    sums: np.ndarray    # (K, K)


def from_dense(
    dense, partition: PartitionVector, tol: float = 0.0, mode: str = "strict"
) -> UniformBlockMatrix:
    """Project a dense symmetric matrix onto uniform-block coordinates.

    ``strict`` (default) reads each coordinate off a representative entry and
    raises StructureViolation if any entry of a block deviates from the
    implied constant by more than ``tol``; ``project`` averages within blocks
    instead, which is what finite-sample covariance matrices need.
    """
    if not isinstance(partition, PartitionVector):
        partition = PartitionVector(partition)
    dense = np.asarray(dense, dtype=float)
    p = partition.p
    if dense.shape != (p, p):
        raise DimensionMismatch(f"matrix is {dense.shape}, partition implies {(p, p)}")
    if mode not in ("strict", "project"):
        raise ValueError(f"mode must be 'strict' or 'project', got {mode!r}")
    if tol < 0:
        raise ValueError("tol must be non-negative")
    sym_dev = float(np.max(np.abs(dense - dense.T)))
    if mode == "strict" and sym_dev > tol:
        raise StructureViolation(
            f"matrix asymmetric by {sym_dev:.3e} (tol {tol:.3e})",
            max_deviation=sym_dev,
            block=None,
        )

    K = partition.K
    a = np.empty(K)
    b = np.empty((K, K))
    for k in range(K):
        sk = partition.block_slice(k)
        block = dense[sk, sk]
        m = block.shape[0]
        off_mask = ~np.eye(m, dtype=bool)
        if mode == "strict":
            b_kk = float(block[0, 1])
            a_kk = float(block[0, 0]) - b_kk
            dev = max(
                float(np.max(np.abs(block[off_mask] - b_kk))),
                float(np.max(np.abs(np.diag(block) - (a_kk + b_kk)))),
            )
            if dev > tol:
                raise StructureViolation(
                    f"diagonal block {k} deviates from a I + b J by {dev:.3e} "
                    f"(tol {tol:.3e})",
                    max_deviation=dev,
                    block=(k, k),
                )
        else:
            b_kk = float(np.mean(block[off_mask]))
            a_kk = float(np.mean(np.diag(block))) - b_kk
        a[k] = a_kk
        b[k, k] = b_kk
        for kp in range(k + 1, K):
            skp = partition.block_slice(kp)
            upper = dense[sk, skp]
            if mode == "strict":
                b_kkp = float(upper[0, 0])
                dev = float(np.max(np.abs(upper - b_kkp)))
                dev = max(dev, float(np.max(np.abs(dense[skp, sk] - b_kkp))))
                if dev > tol:
                    raise StructureViolation(
                        f"off-diagonal block ({k},{kp}) deviates from b 1 by "
                        f"{dev:.3e} (tol {tol:.3e})",
                        max_deviation=dev,
                        block=(k, kp),
                    )
            else:
                # average both rectangles so b stays symmetric for asymmetric input
                b_kkp = 0.5 * (float(np.mean(upper)) + float(np.mean(dense[skp, sk])))
            b[k, kp] = b_kkp
            b[kp, k] = b_kkp
    return UniformBlockMatrix(a, b, partition)


def block_summaries(dense, partition: PartitionVector) -> BlockSummaries:
    """Exact block traces and block element sums of a dense p x p matrix.

    Accumulation uses compensated (exact) summation, so the result is the
    correctly rounded value of each block sum regardless of element order.
    """
    if not isinstance(partition, PartitionVector):
        partition = PartitionVector(partition)
    dense = np.asarray(dense, dtype=float)
    p = partition.p
    if dense.shape != (p, p):
        raise DimensionMismatch(f"matrix is {dense.shape}, partition implies {(p, p)}")
    K = partition.K
    traces = np.empty(K)
    sums = np.empty((K, K))
    for k in range(K):
        sk = partition.block_slice(k)
        traces[k] = math.fsum(dense[sk, sk].diagonal())
        sums[k, k] = math.fsum(dense[sk, sk].ravel())
        for kp in range(k + 1, K):
            skp = partition.block_slice(kp)
            sums[k, kp] = math.fsum(dense[sk, skp].ravel())
            sums[kp, k] = math.fsum(dense[skp, sk].ravel())
    return BlockSummaries(traces=traces, sums=sums)
