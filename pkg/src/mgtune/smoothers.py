"""Pointwise relaxation: weighted Jacobi, SOR, 4-color SOR, SPAI-0.

All sweeps share the shape u <- u + omega M (f - A u) with M diagonal or
triangular; the 4-color sweep applies the Jacobi update color by color with
a separate weight per color. Because the 9-point stencil couples no two
nodes of the same color, the 4-color sweep with equal weights reproduces a
Gauss-Seidel sweep in color order exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .problem import StencilOperator

JACOBI = "jacobi"
GAUSS_SEIDEL = "gauss_seidel"
FOUR_COLOR = "four_color"
SPAI0 = "spai0"
EXPLICIT_DIAGONAL = "explicit_diagonal"

_KINDS = (JACOBI, GAUSS_SEIDEL, FOUR_COLOR, SPAI0, EXPLICIT_DIAGONAL)


class TilingError(ValueError):
    """Grid cannot be 4-colored in 2x2 blocks (odd side)."""


class SmootherSizeError(ValueError):
    """Dense smoother matrix requested above the dense size limit."""


@dataclass(frozen=True)
class SmootherSpec:
    """Which relaxation to run and with what weights.

    omegas holds the damping parameters: one value for jacobi and
    gauss_seidel, four for four_color (phase order: coarse-coincident
    nodes, x-edge nodes, y-edge nodes, cell centers), none for spai0.
    explicit_diagonal carries its approximate inverse diagonal in diag.
    """

    kind: str
    omegas: tuple = ()
    diag: tuple | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown smoother kind {self.kind!r}")
        om = tuple(float(w) for w in self.omegas)
        if not all(np.isfinite(om)):
            raise ValueError(f"weights must be finite, got {om}")
        expected = {JACOBI: 1, GAUSS_SEIDEL: 1, FOUR_COLOR: 4}.get(self.kind, 0)
        if len(om) != expected:
            raise ValueError(
                f"{self.kind} takes {expected} weight(s), got {len(om)}"
            )
        object.__setattr__(self, "omegas", om)
        if self.kind == EXPLICIT_DIAGONAL:
            if self.diag is None:
                raise ValueError("explicit_diagonal needs a diagonal")
            object.__setattr__(self, "diag", tuple(float(d) for d in self.diag))
        elif self.diag is not None:
            raise ValueError(f"{self.kind} does not take a diagonal")

    @classmethod
    def jacobi(cls, omega: float) -> "SmootherSpec":
        return cls(JACOBI, (omega,))

    @classmethod
    def gauss_seidel(cls, omega: float = 1.0) -> "SmootherSpec":
        return cls(GAUSS_SEIDEL, (omega,))

    @classmethod
    def four_color(cls, *omegas: float) -> "SmootherSpec":
        if len(omegas) == 1 and np.ndim(omegas[0]):
            omegas = tuple(omegas[0])
        return cls(FOUR_COLOR, tuple(omegas))

    @classmethod
    def spai0(cls) -> "SmootherSpec":
        return cls(SPAI0)

    @classmethod
    def explicit_diagonal(cls, diag) -> "SmootherSpec":
        return cls(EXPLICIT_DIAGONAL, (), tuple(np.asarray(diag, dtype=float)))

    def to_config(self) -> dict:
        out = {"type": self.kind}
        if self.omegas:
            out["omegas"] = list(self.omegas)
        if self.diag is not None:
            out["diag"] = list(self.diag)
        return out

    @classmethod
    def from_config(cls, cfg: dict) -> "SmootherSpec":
        kind = cfg.get("type")
        if kind == SPAI0:
            return cls.spai0()
        if kind == EXPLICIT_DIAGONAL:
            if "diag" not in cfg:
                raise ValueError("explicit_diagonal config needs a diag list")
            return cls.explicit_diagonal(cfg["diag"])
        omegas = cfg.get("omegas", [1.0])
        if kind in (JACOBI, GAUSS_SEIDEL) and len(omegas) == 1:
            return cls(kind, tuple(omegas))
        if kind == FOUR_COLOR:
            return cls.four_color(*omegas)
        raise ValueError(f"bad smoother config {cfg!r}")


@dataclass(frozen=True)
class ColorMap:
    """2x2-block coloring: color(q, p) = 1 + 2 (q mod 2) + (p mod 2).

    Color 1 sits on coarse-coincident nodes, 2 on x-edge nodes, 3 on
    y-edge nodes, 4 on cell centers. No 9-point neighbor pair shares a
    color, so simultaneous updates within a color are exact.
    """

    m: int
    colors: np.ndarray  # (m, m) of {1, 2, 3, 4}

    def mask(self, color: int) -> np.ndarray:
        """Flat boolean mask of the nodes with the given color."""
        return (self.colors == color).ravel()

    def masks(self) -> list:
        return [self.mask(c) for c in (1, 2, 3, 4)]


def assign_colors(m: int) -> ColorMap:
    if m % 2:
        raise TilingError(f"2x2 block coloring needs an even side, got {m}")
    q, p = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    return ColorMap(m, 1 + 2 * (q % 2) + (p % 2))


def spai0_diagonal(A: StencilOperator) -> np.ndarray:
    """Diagonal M minimizing ||I - M A||_F: m_k = a_kk / sum_i a_ki^2."""
    st = A.stencils.reshape(A.m, A.m, 9)
    denom = np.einsum("qpk,qpk->qp", st, st).ravel()
    if np.any(denom == 0):
        k = int(np.flatnonzero(denom == 0)[0])
        raise ZeroDivisionError(f"row {k} of the operator is identically zero")
    return A.diagonal() / denom


def _inverse_diagonal(A: StencilOperator, spec: SmootherSpec) -> np.ndarray:
    """The diagonal M of the update u += omega M r for diagonal smoothers."""
    if spec.kind == SPAI0:
        return spai0_diagonal(A)
    if spec.kind == EXPLICIT_DIAGONAL:
        d = np.asarray(spec.diag, dtype=float)
        if d.shape != (A.n,):
            raise ValueError(
                f"explicit diagonal has length {d.size}, operator needs {A.n}"
            )
        return d
    d = A.diagonal()
    if np.any(d == 0):
        k = int(np.flatnonzero(d == 0)[0])
        raise ZeroDivisionError(f"zero diagonal at row {k}")
    return 1.0 / d


def make_sweeper(A: StencilOperator, spec: SmootherSpec):
    """Precompute per-operator state and return sweep(u, f, repeats=1).

    The returned callable mutates u in place and returns it. Building the
    closure once per level amortizes diagonal extraction, coloring and the
    CSR conversion across the many sweeps of a solve.
    """
    n = A.n
    if spec.kind == GAUSS_SEIDEL:
        csr = A.to_csr()
        indptr, indices, data = csr.indptr, csr.indices, csr.data
        omega = spec.omegas[0]
        diag = A.diagonal()
        if np.any(diag == 0):
            raise ZeroDivisionError("zero diagonal entry")

        def sweep_gs(u, f, repeats=1):
            # Lexicographic SOR as a pointwise loop; kept for oracles and
            # small grids rather than production speed.
            for _ in range(repeats):
                for row in range(n):
                    acc = f[row]
                    for k in range(indptr[row], indptr[row + 1]):
                        col = indices[k]
                        if col != row:
                            acc -= data[k] * u[col]
                    u[row] = (1.0 - omega) * u[row] + omega * acc / diag[row]
            return u

        return sweep_gs

    if spec.kind == FOUR_COLOR:
        masks = assign_colors(A.m).masks()
        invd = 1.0 / A.diagonal()
        omegas = spec.omegas

        def sweep_4c(u, f, repeats=1):
            for _ in range(repeats):
                for omega, mask in zip(omegas, masks):
                    r = A.residual(u, f)
                    u[mask] += omega * invd[mask] * r[mask]
            return u

        return sweep_4c

    invd = _inverse_diagonal(A, spec)
    scale = spec.omegas[0] * invd if spec.kind == JACOBI else invd

    def sweep_diag(u, f, repeats=1):
        for _ in range(repeats):
            u += scale * A.residual(u, f)
        return u

    return sweep_diag


def sweep(A: StencilOperator, u: np.ndarray, f: np.ndarray, spec: SmootherSpec,
          repeats: int = 1) -> np.ndarray:
    """One-shot smoothing sweep; see make_sweeper for the amortized path."""
    return make_sweeper(A, spec)(u, f, repeats)


def build_smoother_matrix(A: StencilOperator, spec: SmootherSpec, nu: int = 1,
                          dense_limit: int = 32) -> np.ndarray:
    """Dense error propagation matrix S^nu of the smoother, for analysis.

    S maps the error before a sweep to the error after it; for the
    diagonal smoothers S = I - omega M A, for SOR S = I - omega
    (D + omega L)^-1 A, and for the 4-color sweep S is the product of the
    four one-color Jacobi factors, first color applied first.
    """
    if A.m > dense_limit:
        raise SmootherSizeError(
            f"dense smoother matrix for m={A.m} exceeds limit {dense_limit}"
        )
    if nu < 0:
        raise ValueError(f"sweep count must be nonnegative, got {nu}")
    n = A.n
    dense = A.to_dense()

    if spec.kind == GAUSS_SEIDEL:
        omega = spec.omegas[0]
        lhs = np.diag(np.diag(dense)) + omega * np.tril(dense, -1)  # D + omega L
        S = np.eye(n) - omega * solve_triangular(lhs, dense, lower=True)
    elif spec.kind == FOUR_COLOR:
        K = dense / A.diagonal()[:, None]
        masks = assign_colors(A.m).masks()
        S = np.eye(n)
        for omega, mask in zip(spec.omegas, masks):
            S[mask] -= omega * (K[mask] @ S)
    else:
        invd = (
            spec.omegas[0] * _inverse_diagonal(A, spec)
            if spec.kind == JACOBI
            else _inverse_diagonal(A, spec)
        )
        S = np.eye(n) - invd[:, None] * dense
    return np.linalg.matrix_power(S, nu)
