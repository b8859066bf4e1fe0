"""Spectral analysis of two-grid error propagation.

The cycle acts on the error as T = S^nu2 C S^nu1 with C the exact
coarse-grid correction; the asymptotic contraction factor is rho(T).
Because T is far from normal, ||T^alpha||_F for moderate alpha is the
robust smooth surrogate: it upper-bounds rho(T)^alpha and its alpha-th
root converges to rho(T) from above.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve

from .cycles import SolveReport
from .problem import StencilOperator
from .smoothers import SmootherSpec, build_smoother_matrix
from .transfer import ProlongationOperator


class SingularCoarseError(np.linalg.LinAlgError):
    """Exact coarse inversion needs delta > 0; the shifted assembly
    provides it."""


class UndefinedImprovementError(ValueError):
    """Improvement factors need contraction rates strictly inside (0, 1)."""


@dataclass(frozen=True)
class ErrorPropagator:
    """Dense two-grid error propagation matrix with its provenance."""

    matrix: np.ndarray
    m: int
    smoother: SmootherSpec
    nu1: int
    nu2: int
    prolongation_kind: str


@dataclass(frozen=True)
class RateWindow:
    """Cycle index range used for measured-rate fits; both ends inclusive."""

    first: int = 15
    last: int = 40

    def __post_init__(self):
        if not 0 <= self.first < self.last:
            raise ValueError(f"bad rate window [{self.first}, {self.last}]")


def build_two_grid_propagator(
    A: StencilOperator,
    P: ProlongationOperator,
    smoother: SmootherSpec,
    nu: int | tuple = 1,
) -> ErrorPropagator:
    """Materialize T = S^nu2 (I - P (P^T A P)^-1 P^T A) S^nu1 densely.

    nu may be a single pre-smoothing count or a (nu1, nu2) pair. The
    coarse block is inverted exactly, so the fine operator must be
    nonsingular; assemble with delta > 0 for that.
    """
    nu1, nu2 = (nu, 0) if np.isscalar(nu) else nu
    dense = A.to_dense()
    Pd = P.to_dense()
    coarse = Pd.T @ dense @ Pd
    ones = np.ones(coarse.shape[0])
    scale = float(np.abs(coarse).max())
    if float(np.abs(coarse @ ones).max()) <= 1e-10 * scale:
        raise SingularCoarseError(
            "coarse operator is singular (delta = 0 assembly); build the "
            "propagator from a delta > 0 operator"
        )
    correction = np.eye(A.n) - Pd @ solve(coarse, Pd.T @ dense, assume_a="sym")
    T = correction
    if nu1:
        T = T @ build_smoother_matrix(A, smoother, nu1)
    if nu2:
        T = build_smoother_matrix(A, smoother, nu2) @ T
    return ErrorPropagator(T, A.m, smoother, nu1, nu2, P.kind)


def gelfand_loss(T, alpha: int = 40) -> float:
    """||T^alpha||_F, computed by binary powering; inf on overflow."""
    if alpha < 1:
        raise ValueError(f"power must be >= 1, got {alpha}")
    M = np.asarray(T.matrix if isinstance(T, ErrorPropagator) else T)
    with np.errstate(over="ignore", invalid="ignore"):
        powered = np.linalg.matrix_power(M, alpha)
        value = float(np.linalg.norm(powered))
    return value if np.isfinite(value) else float("inf")


def gelfand_estimate(T, alpha: int = 40) -> float:
    """The rate-scale root ||T^alpha||_F^(1/alpha) >= rho(T)."""
    return gelfand_loss(T, alpha) ** (1.0 / alpha)


@dataclass
class PowerIterationResult:
    rho: float
    converged: bool
    iterations: int


def power_iteration(T, tol: float = 1e-8, max_iter: int = 5000, seed: int = 0,
                    block: int = 8) -> PowerIterationResult:
    """Dominant |eigenvalue| via block (subspace) iteration with Ritz values.

    A single iterated vector cannot resolve the complex conjugate pairs
    these nonsymmetric propagators routinely have on top, so a small
    orthonormal block is iterated instead and the estimate is the largest
    Ritz value magnitude of the projected matrix. Convergence requires two
    consecutive sweeps agreeing to tol, which guards against the transient
    plateaus of slowly separating spectra.
    """
    M = np.asarray(T.matrix if isinstance(T, ErrorPropagator) else T)
    n = M.shape[0]
    if n <= block:
        rho = float(np.abs(np.linalg.eigvals(M)).max())
        return PowerIterationResult(rho, True, 0)
    rng = np.random.Generator(np.random.PCG64(seed))
    V, _ = np.linalg.qr(rng.standard_normal((n, block)))
    prev = np.nan
    stable = 0
    estimate = np.nan
    for it in range(1, max_iter + 1):
        W = M @ V
        if not np.any(W):
            return PowerIterationResult(0.0, True, it)
        H = V.T @ W
        estimate = float(np.abs(np.linalg.eigvals(H)).max())
        if np.isfinite(prev) and abs(estimate - prev) <= tol * max(estimate, 1.0):
            stable += 1
            if stable >= 2:
                return PowerIterationResult(estimate, True, it)
        else:
            stable = 0
        prev = estimate
        V, _ = np.linalg.qr(W)
    return PowerIterationResult(float(estimate), False, max_iter)


def spectral_radius(T, tol: float = 1e-8, **kw) -> float:
    """Convenience wrapper returning just the converged estimate."""
    return power_iteration(T, tol=tol, **kw).rho


def measured_rate(report: SolveReport, window: RateWindow | None = None) -> float:
    """Geometric-mean residual contraction over the window's cycles."""
    window = window or RateWindow()
    norms = report.residual_norms
    if len(norms) <= window.last:
        raise ValueError(
            f"history has {len(norms) - 1} cycles, window needs {window.last}"
        )
    r0, r1 = norms[window.first], norms[window.last]
    if r1 == 0.0:
        return 0.0
    if r0 == 0.0:
        return 0.0
    return float((r1 / r0) ** (1.0 / (window.last - window.first)))


def improvement(rate: float, rate_ref: float) -> float:
    """Relative iteration count, in percent: cycles the measured rate needs
    for a fixed residual reduction, per hundred cycles the reference needs.
    100 is parity; smaller is faster."""
    for r in (rate, rate_ref):
        if not 0.0 < r < 1.0:
            raise UndefinedImprovementError(
                f"rates must lie strictly in (0, 1), got {r}"
            )
    return 100.0 * np.log(rate_ref) / np.log(rate)
