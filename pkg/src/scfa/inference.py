"""Exact variances, Wald intervals and tests for the model parameters.

The estimator variances below are exact in finite samples, so the standard
errors are plug-in evaluations of closed forms rather than asymptotic
approximations; p-values and intervals still use the normal reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .estimation import ScfaFit
from .ubmatrix import PartitionVector

# Negative plug-in values of the b-variance difference below this magnitude
# are rounding noise and get clamped to zero.
_CLAMP_TOL = 1e-12


def var_a(a_kk: float, n: int, p_k: int) -> float:
    """Exact variance of the error-variance estimator: 2 a_kk^2 / ((n-1)(p_k-1))."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if p_k < 2:
        raise ValueError(f"need p_k >= 2, got {p_k}")
    return 2.0 * a_kk * a_kk / ((n - 1.0) * (p_k - 1.0))


def var_b(a, b, n: int, partition: PartitionVector, k: int, kp: int) -> float:
    """Exact variance of b_hat[k, kp] (zero-based community indices).

    Diagonal (k == kp):
        2 / ((n-1) p_k (p_k-1)) * {(a_kk + p_k b_kk)^2 - (2 a_kk + p_k b_kk) b_kk}
    Off-diagonal:
        1 / (2 (n-1) p_k p_k') * {p_k p_k' (b_kk'^2 + b_k'k^2)
                                   + 2 (a_kk + p_k b_kk)(a_k'k' + p_k' b_k'k')}
    The off-diagonal sum of two squares is written out as stated even though
    b is symmetric, to keep the transcription literal.
    """
    if not isinstance(partition, PartitionVector):
        partition = PartitionVector(partition)
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float)
    sizes = partition.sizes
    if k == kp:
        pk = float(sizes[k])
        akk, bkk = float(a[k]), float(b[k, k])
        centered = (akk + pk * bkk) ** 2 - (2.0 * akk + pk * bkk) * bkk
        value = 2.0 / ((n - 1.0) * pk * (pk - 1.0)) * centered
    else:
        pk, pkp = float(sizes[k]), float(sizes[kp])
        akk, akpkp = float(a[k]), float(a[kp])
        bkk, bkpkp = float(b[k, k]), float(b[kp, kp])
        cross = pk * pkp * (float(b[k, kp]) ** 2 + float(b[kp, k]) ** 2)
        cross += 2.0 * (akk + pk * bkk) * (akpkp + pkp * bkpkp)
        value = cross / (2.0 * (n - 1.0) * pk * pkp)
    return value


@dataclass(frozen=True)
class ParameterInference:
    """One parameter's estimate with its exact variance and Wald summary."""

    name: str
    kind: str          # "a" or "b"
    k: int             # zero-based community indices
    kp: int
    estimate: float
    exact_variance: float
    standard_error: float
    ci_low: float
    ci_high: float
    z: float
    p_value: float
    significant: bool


@dataclass(frozen=True)
class InferenceReport:
    parameters: tuple
    alpha: float
    n: int
    diagnostics: tuple = ()

    def by_name(self) -> dict:
        return {rec.name: rec for rec in self.parameters}

    def a_parameters(self) -> tuple:
        return tuple(r for r in self.parameters if r.kind == "a")

    def b_parameters(self) -> tuple:
        return tuple(r for r in self.parameters if r.kind == "b")


def parameter_name(kind: str, k: int, kp: int, K: int) -> str:
    """Display name, 1-based like the usual a_11 / b_12 convention."""
    if K < 10:
        return f"{kind}_{k + 1}{kp + 1}"
    return f"{kind}_{k + 1}.{kp + 1}"


def parameter_order(K: int):
    """(kind, k, kp) tuples in canonical order: a_11..a_KK then b upper triangle."""
    order = [("a", k, k) for k in range(K)]
    order += [("b", k, kp) for k in range(K) for kp in range(k, K)]
    return order


def wald_report(fit: ScfaFit, n: int, alpha: float = 0.05) -> InferenceReport:
    """Plug-in standard errors, two-sided CIs and p-values for every a_kk and b_kk'.

    Standard errors substitute the estimates themselves into the exact
    variance formulas.  A parameter is significant exactly when 0 falls
    outside its interval.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    K = fit.K
    z_crit = float(norm.ppf(1.0 - alpha / 2.0))
    a, b = fit.a_hat, fit.b_hat
    diagnostics = []
    records = []
    for kind, k, kp in parameter_order(K):
        if kind == "a":
            est = float(a[k])
            variance = var_a(est, n, fit.partition.sizes[k])
        else:
            est = float(b[k, kp])
            variance = var_b(a, b, n, fit.partition, k, kp)
        name = parameter_name(kind, k, kp, K)
        if variance < 0.0:
            note = (
                f"plug-in variance of {name} negative ({variance:.3e}); clamped to 0"
                if abs(variance) < _CLAMP_TOL
                else f"plug-in variance of {name} materially negative "
                f"({variance:.3e}); clamped to 0, interval degenerate"
            )
            diagnostics.append(note)
            variance = 0.0
        se = float(np.sqrt(variance))
        if se > 0.0:
            z = est / se
            p_value = 2.0 * float(norm.sf(abs(z)))
        else:
            z = 0.0 if est == 0.0 else float(np.copysign(np.inf, est))
            p_value = 1.0 if est == 0.0 else 0.0
        half = z_crit * se
        ci_low, ci_high = est - half, est + half
        records.append(
            ParameterInference(
                name=name,
                kind=kind,
                k=k,
                kp=kp,
                estimate=est,
                exact_variance=variance,
                standard_error=se,
                ci_low=ci_low,
                ci_high=ci_high,
                z=z,
                p_value=p_value,
                significant=bool(ci_low > 0.0 or ci_high < 0.0),
            )
        )
    return InferenceReport(
        parameters=tuple(records), alpha=alpha, n=n, diagnostics=tuple(diagnostics)
    )


@dataclass(frozen=True)
class EdgeLabel:
    """Significance label of one factor-factor edge (self-loop when k == kp)."""

    k: int
    kp: int
    sign: str          # "positive" or "negative"
    significant: bool
    estimate: float


def edge_labels(report: InferenceReport) -> tuple:
    """Edge styling inputs for the path diagram, one per b parameter."""
    labels = []
    for rec in report.b_parameters():
        labels.append(
            EdgeLabel(
                k=rec.k,
                kp=rec.kp,
                sign="negative" if rec.estimate < 0.0 else "positive",
                significant=rec.significant,
                estimate=rec.estimate,
            )
        )
    return tuple(labels)
