"""Multigrid cycling: two-grid, V, W and F cycles over a cached hierarchy.

A Hierarchy owns the structural, smoother-independent data (per-level
operators, prolongations, the factorized coarsest solve) so that parameter
sweeps can rerun cycles with different smoothers without re-coarsening.
The periodic delta = 0 operator is singular with kernel span{1}; the
coarsest solve handles that case by a rank-one shift, which is exact on
the mean-free right-hand sides multigrid produces there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .problem import StencilOperator
from .smoothers import SmootherSpec, make_sweeper
from .transfer import BILINEAR, ProlongationOperator, galerkin_coarsen, make_prolongation

TWO_GRID = "two_grid"
V_CYCLE = "v"
W_CYCLE = "w"
F_CYCLE = "f"

_KINDS = (TWO_GRID, V_CYCLE, W_CYCLE, F_CYCLE)


class CycleConfigError(ValueError):
    """Inconsistent cycle parameters."""


class CompatibilityError(ValueError):
    """Singular coarse solve fed a right-hand side with nonzero mean."""


@dataclass(frozen=True)
class CycleSpec:
    """What to run per cycle: smoothing counts, smoother, transfers.

    nu1 sweeps happen before coarse-grid correction, nu2 after. two_grid
    solves the first coarse level directly; the recursive kinds descend
    until the side reaches coarsest_m.
    """

    kind: str = V_CYCLE
    nu1: int = 1
    nu2: int = 0
    smoother: SmootherSpec = field(default_factory=lambda: SmootherSpec.jacobi(1.0))
    prolongation: str = BILINEAR
    coarsest_m: int = 4

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise CycleConfigError(f"unknown cycle kind {self.kind!r}")
        if self.nu1 < 0 or self.nu2 < 0 or self.nu1 + self.nu2 < 1:
            raise CycleConfigError(
                f"need nu1, nu2 >= 0 with nu1 + nu2 >= 1, got ({self.nu1}, {self.nu2})"
            )
        if self.coarsest_m < 4 or self.coarsest_m % 2:
            raise CycleConfigError(
                f"coarsest side must be even and >= 4, got {self.coarsest_m}"
            )


@dataclass
class SolveReport:
    """Residual history of one solve; norms include the initial residual."""

    residual_norms: np.ndarray
    error_norms: np.ndarray | None
    cycles_run: int
    converged: bool
    diverged: bool = False


class CoarseSolver:
    """Dense factorized solve of the coarsest operator.

    A singular periodic operator (delta = 0) is replaced by
    A + gamma 11^T / n, whose solve agrees with the pseudoinverse on
    mean-free data because 1 spans the kernel of both A and A^T. Right-hand
    sides are projected mean-free; a mean that is large relative to the
    data is an incompatible system and raises instead.
    """

    def __init__(self, A: StencilOperator):
        self.n = A.n
        dense = A.to_dense()
        self.singular = A.annihilates_constants()
        if self.singular:
            gamma = float(np.abs(A.diagonal()).max())
            dense = dense + gamma / self.n
        self._lu = lu_factor(dense)

    def solve(self, r: np.ndarray, check_compatibility: bool = True) -> np.ndarray:
        if self.singular:
            mean = r.mean()
            # The mean component of r has norm |mean| sqrt(n); flag it only
            # when it is a macroscopic fraction of the data. Restricted
            # residuals inside a cycle are mean-free by construction (the
            # prolongation rows sum to one and A annihilates constants), so
            # the recursion skips the check and projects roundoff away.
            if (
                check_compatibility
                and abs(mean) * np.sqrt(self.n) > 1e-2 * np.linalg.norm(r)
                and mean != 0.0
            ):
                raise CompatibilityError(
                    f"right-hand side mean {mean:.3e} incompatible with a "
                    "singular coarse operator"
                )
            r = r - mean
        return lu_solve(self._lu, r)


def coarse_solve(A: StencilOperator, r: np.ndarray) -> np.ndarray:
    """One-shot coarsest solve; hierarchies cache the factorization."""
    return CoarseSolver(A).solve(r)


@dataclass
class _Level:
    A: StencilOperator
    P: ProlongationOperator | None = None  # to the next coarser level
    sweepers: dict = field(default_factory=dict)

    def sweeper(self, spec: SmootherSpec):
        key = spec if spec.diag is None or self.A.n == len(spec.diag) else None
        if key is None:
            return make_sweeper(self.A, spec)
        if key not in self.sweepers:
            self.sweepers[key] = make_sweeper(self.A, spec)
        return self.sweepers[key]


class Hierarchy:
    """Coarsening ladder for one fine operator.

    The ladder depends only on the prolongation kind, the coarsest side
    and whether the cycle is two-grid; smoothers and sweep counts are
    per-call, so one hierarchy serves a whole parameter sweep. With the
    operator-dependent prolongation each level interpolates from its own
    Galerkin operator.
    """

    def __init__(self, A: StencilOperator, prolongation: str = BILINEAR,
                 coarsest_m: int = 4, two_grid: bool = False):
        if coarsest_m < 4:
            raise CycleConfigError(f"coarsest side {coarsest_m} below minimum 4")
        if A.m < 2 * coarsest_m and not two_grid:
            raise CycleConfigError(
                f"m={A.m} cannot coarsen toward coarsest_m={coarsest_m}"
            )
        self.prolongation = prolongation
        self.levels = [_Level(A)]
        while True:
            level = self.levels[-1]
            if level.A.m // 2 < max(coarsest_m, 4):
                break
            level.P = make_prolongation(prolongation, level.A)
            self.levels.append(_Level(galerkin_coarsen(level.A, level.P)))
            if two_grid or self.levels[-1].A.m <= coarsest_m:
                break
        if len(self.levels) < 2:
            raise CycleConfigError(f"m={A.m} leaves no room for a coarse level")
        self.coarse = CoarseSolver(self.levels[-1].A)

    @property
    def depth(self) -> int:
        return len(self.levels)

    def cycle(self, u: np.ndarray, f: np.ndarray, spec: CycleSpec) -> np.ndarray:
        """Run one cycle of the given kind, updating u in place."""
        if spec.kind == TWO_GRID and self.depth != 2:
            raise CycleConfigError("hierarchy was not built two-grid deep")
        kind = V_CYCLE if spec.kind == TWO_GRID else spec.kind
        return self._descend(0, u, f, spec, kind)

    def _descend(self, idx: int, u, f, spec: CycleSpec, kind: str):
        level = self.levels[idx]
        if idx == self.depth - 1:
            u += self.coarse.solve(f - level.A.apply(u),
                                   check_compatibility=False)
            return u
        sweep = level.sweeper(spec.smoother)
        sweep(u, f, spec.nu1)
        r_c = level.P.restrict(level.A.residual(u, f))
        e_c = np.zeros(level.P.m_coarse ** 2)
        if kind == F_CYCLE:
            self._descend(idx + 1, e_c, r_c, spec, F_CYCLE)
            self._descend(idx + 1, e_c, r_c, spec, V_CYCLE)
        else:
            visits = 2 if kind == W_CYCLE else 1
            for _ in range(visits):
                self._descend(idx + 1, e_c, r_c, spec, kind)
        u += level.P.prolong(e_c)
        sweep(u, f, spec.nu2)
        return u


def build_hierarchy(A: StencilOperator, spec: CycleSpec) -> Hierarchy:
    return Hierarchy(A, spec.prolongation, spec.coarsest_m,
                     two_grid=spec.kind == TWO_GRID)


def two_grid_cycle(A: StencilOperator, u, f, spec: CycleSpec,
                   hierarchy: Hierarchy | None = None) -> np.ndarray:
    """One exact-coarse-solve cycle; builds a throwaway hierarchy if none
    is supplied."""
    if spec.kind != TWO_GRID:
        raise CycleConfigError(f"expected a two_grid spec, got {spec.kind!r}")
    if hierarchy is None:
        hierarchy = build_hierarchy(A, spec)
    return hierarchy.cycle(u, f, spec)


def multigrid_cycle(hierarchy: Hierarchy, u, f, spec: CycleSpec) -> np.ndarray:
    return hierarchy.cycle(u, f, spec)


def solve(A: StencilOperator, f: np.ndarray, u0: np.ndarray, spec: CycleSpec,
          max_cycles: int = 45, tol: float = 0.0,
          hierarchy: Hierarchy | None = None,
          divergence_factor: float = 1e6) -> SolveReport:
    """Iterate cycles, recording residual norms (index 0 is pre-cycle).

    tol = 0 runs exactly max_cycles unless the residual diverges past
    divergence_factor times its initial norm. When f = 0 the algebraic
    error is -u up to the operator's kernel, so its norm history is
    recorded as well; for a shift-free operator the constant mode never
    decays and is projected out so the history tracks the distance to
    the nearest exact solution. Homogeneous runs renormalize the iterate
    each cycle (the iteration is linear, so this is exact) and record
    compensated norms; without it fast contractions hit the round-off
    floor of double precision around 1e-16 relative and the later part
    of the history measures noise instead of the rate.
    """
    if hierarchy is None:
        hierarchy = build_hierarchy(A, spec)
    u = np.array(u0, dtype=float, copy=True)
    homogeneous = not np.any(f)
    drop_mean = homogeneous and A.annihilates_constants()
    if drop_mean:
        u -= u.mean()
    r0 = float(np.linalg.norm(A.residual(u, f)))
    res = [r0]
    err = [float(np.linalg.norm(u))] if homogeneous else None
    converged = diverged = False
    cycles = 0
    scale = 1.0
    for _ in range(max_cycles):
        hierarchy.cycle(u, f, spec)
        cycles += 1
        if drop_mean:
            u -= u.mean()
        rk = float(np.linalg.norm(A.residual(u, f))) * scale
        res.append(rk)
        if homogeneous:
            raw = float(np.linalg.norm(u))
            err.append(raw * scale)
            if raw > 0.0 and np.isfinite(raw):
                u /= raw
                scale *= raw
        if tol > 0 and rk <= tol * max(r0, 1e-300):
            converged = True
            break
        if not np.isfinite(rk) or rk > divergence_factor * max(r0, 1e-300):
            diverged = True
            break
    return SolveReport(
        residual_norms=np.asarray(res),
        error_norms=None if err is None else np.asarray(err),
        cycles_run=cycles,
        converged=converged,
        diverged=diverged,
    )
