"""Random-coefficient diffusion operators on doubly periodic grids.

Diffusivity lives at cell centers, unknowns at nodes. The discrete operator
is the bilinear finite element 9-point stencil; it is stored per node (an
(m, m, 3, 3) array) so the matvec is a stencil sweep and so that assembly,
coarsening and smoothing can exploit the fixed sparsity structure. A sparse
and a dense materializer exist for oracles and coarse solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse


class GeometryError(ValueError):
    """Grid side not even / too small, or non-positive mesh sizes."""


class FieldError(ValueError):
    """Coefficient field invalid: wrong shape or non-positive entries."""


@dataclass(frozen=True)
class GridGeometry:
    """An m x m cell periodic grid with rectangular cells of size hx x hy."""

    m: int
    hx: float = 1.0
    hy: float = 1.0

    def __post_init__(self):
        if self.m < 4 or self.m % 2:
            raise GeometryError(f"grid side must be even and >= 4, got {self.m}")
        if self.hx <= 0 or self.hy <= 0:
            raise GeometryError(
                f"mesh sizes must be positive, got ({self.hx}, {self.hy})"
            )

    @property
    def n(self) -> int:
        return self.m * self.m

    @property
    def isotropic(self) -> bool:
        return self.hx == self.hy


def node_index(q: int, p: int, m: int) -> int:
    """Flat row-major index of node (q, p): q counts rows (y), p columns (x)."""
    if not (0 <= q < m and 0 <= p < m):
        raise IndexError(f"node ({q}, {p}) outside {m} x {m} grid")
    return q * m + p


def sample_seeds(master_seed: int, count: int) -> np.ndarray:
    """Per-sample 64-bit seeds derived deterministically from a master seed."""
    return np.random.SeedSequence(master_seed).generate_state(count, np.uint64)


def field_rng(seed) -> np.random.Generator:
    """The generator used for all sampling in this package (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class DiffusivityField:
    """Positive diffusivity at cell centers.

    g[a, b] belongs to the cell whose corner nodes are (a, b), (a+1, b),
    (a, b+1) and (a+1, b+1), indices wrapping periodically. A node (q, p)
    therefore touches cells (q-1, p-1), (q-1, p), (q, p-1) and (q, p).
    """

    geometry: GridGeometry
    g: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        g = np.ascontiguousarray(self.g, dtype=float)
        m = self.geometry.m
        if g.shape != (m, m):
            raise FieldError(f"expected ({m}, {m}) cell values, got {g.shape}")
        if not np.all(g > 0):
            raise FieldError("diffusivity must be strictly positive everywhere")
        object.__setattr__(self, "g", g)


def sample_lognormal_field(
    geometry: GridGeometry,
    seed,
    mu: float = 0.0,
    sigma: float = 1.0,
) -> DiffusivityField:
    """Draw g = exp(Z), Z ~ N(mu, sigma^2) i.i.d. per cell, deterministically.

    Identical (geometry.m, seed) give bit-identical fields regardless of
    platform; ensembles should pass seeds from sample_seeds().
    """
    m = geometry.m
    z = field_rng(seed).standard_normal((m, m))
    g = np.exp(mu + sigma * z)
    try:
        tag = int(seed)
    except (TypeError, ValueError):
        tag = None
    return DiffusivityField(geometry, g, seed=tag)


def constant_field(geometry: GridGeometry, value: float = 1.0) -> DiffusivityField:
    """Uniform diffusivity; value 1 gives the plain Poisson operator."""
    if value <= 0:
        raise FieldError(f"diffusivity must be positive, got {value}")
    g = np.full((geometry.m, geometry.m), float(value))
    return DiffusivityField(geometry, g)


# Offsets are ordered so stencils[q, p, 1 + dq, 1 + dp] is the coefficient
# of neighbor (q + dq, p + dp) in the row of node (q, p).
_OFFSETS = [(dq, dp) for dq in (-1, 0, 1) for dp in (-1, 0, 1)]


@dataclass(frozen=True)
class StencilOperator:
    """Symmetric 9-point periodic operator in per-node stencil form.

    delta records the absolute diagonal shift that was added at assembly;
    the shift is already folded into the stored center coefficients.
    """

    m: int
    stencils: np.ndarray  # (m, m, 3, 3)
    delta: float = 0.0
    geometry: GridGeometry | None = None

    def __post_init__(self):
        st = np.ascontiguousarray(self.stencils, dtype=float)
        if st.shape != (self.m, self.m, 3, 3):
            raise ValueError(f"stencil array must be {(self.m, self.m, 3, 3)}")
        object.__setattr__(self, "stencils", st)

    @property
    def n(self) -> int:
        return self.m * self.m

    def diagonal(self) -> np.ndarray:
        return self.stencils[:, :, 1, 1].ravel()

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Matvec A @ u as a periodic stencil sweep. u is a flat n-vector."""
        m = self.m
        if u.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got {u.shape}")
        grid = u.reshape(m, m)
        out = self.stencils[:, :, 1, 1] * grid
        for dq, dp in _OFFSETS:
            if dq == 0 and dp == 0:
                continue
            shifted = np.roll(grid, (-dq, -dp), axis=(0, 1))
            out += self.stencils[:, :, 1 + dq, 1 + dp] * shifted
        return out.ravel()

    def residual(self, u: np.ndarray, f: np.ndarray) -> np.ndarray:
        if f.shape != (self.n,):
            raise ValueError(f"expected vector of length {self.n}, got {f.shape}")
        return f - self.apply(u)

    @cached_property
    def _csr(self) -> sparse.csr_matrix:
        m, n = self.m, self.n
        q, p = np.divmod(np.arange(n), m)
        rows, cols, vals = [], [], []
        for dq, dp in _OFFSETS:
            rows.append(np.arange(n))
            cols.append(((q + dq) % m) * m + (p + dp) % m)
            vals.append(self.stencils[:, :, 1 + dq, 1 + dp].ravel())
        mat = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )
        return mat.tocsr()

    def to_csr(self) -> sparse.csr_matrix:
        """Sparse view of A; cached, treat as read-only."""
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def annihilates_constants(self, rtol: float = 1e-8) -> bool:
        """True when A 1 = 0 to roundoff, i.e. the delta = 0 periodic case."""
        ones = np.ones(self.n)
        scale = np.abs(self.diagonal()).max()
        return float(np.abs(self.apply(ones)).max()) <= rtol * scale


def assemble(field: DiffusivityField, delta: float = 0.0) -> StencilOperator:
    """Assemble the bilinear FEM 9-point operator for a coefficient field.

    Per adjacent cell with coefficient g the node row receives, with
    a = 1/hx^2 and b = 1/hy^2: corner -(a+b)/6 g, east/west (b-2a)/6 g,
    north/south (a-2b)/6 g, center (a+b)/3 g. delta is added to the
    center afterwards (absolute shift). For the isotropic unit-coefficient
    case this reduces to off-diagonals -1/3 and center 8/3.
    """
    if delta < 0:
        raise ValueError(f"diagonal shift must be nonnegative, got {delta}")
    geo = field.geometry
    m = geo.m
    a = 1.0 / geo.hx**2
    b = 1.0 / geo.hy**2
    g = field.g

    # Cell values seen from each node; gsw[q, p] is the cell (q-1, p-1) etc.
    gsw = np.roll(g, (1, 1), axis=(0, 1))
    gse = np.roll(g, 1, axis=0)
    gnw = np.roll(g, 1, axis=1)
    gne = g

    corner = -(a + b) / 6.0
    ew = (b - 2.0 * a) / 6.0
    ns = (a - 2.0 * b) / 6.0
    center = (a + b) / 3.0

    st = np.empty((m, m, 3, 3))
    st[:, :, 0, 0] = corner * gsw
    st[:, :, 0, 2] = corner * gse
    st[:, :, 2, 0] = corner * gnw
    st[:, :, 2, 2] = corner * gne
    # Two-term sums are written in matching order on both sides of each
    # edge so paired coefficients are bit-identical, not merely close.
    st[:, :, 1, 0] = ew * (gsw + gnw)
    st[:, :, 1, 2] = ew * (gse + gne)
    st[:, :, 0, 1] = ns * (gsw + gse)
    st[:, :, 2, 1] = ns * (gnw + gne)
    st[:, :, 1, 1] = center * (gsw + gse + gnw + gne) + delta
    return StencilOperator(m, st, delta=delta, geometry=geo)


def save_field(field: DiffusivityField, path) -> None:
    """Write a field as CSV: one header line with the grid metadata, then g."""
    geo = field.geometry
    seed = field.seed if field.seed is not None else ""
    header = f"m={geo.m} hx={geo.hx} hy={geo.hy} seed={seed}"
    np.savetxt(path, field.g, delimiter=",", header=header)


def load_field(path) -> DiffusivityField:
    with open(path) as fh:
        header = fh.readline().lstrip("#").strip()
    meta = dict(item.split("=", 1) for item in header.split())
    geo = GridGeometry(int(meta["m"]), float(meta["hx"]), float(meta["hy"]))
    g = np.loadtxt(path, delimiter=",", skiprows=1)
    seed = int(meta["seed"]) if meta.get("seed") else None
    return DiffusivityField(geo, g, seed=seed)


def save_operator_coo(A: StencilOperator, path) -> None:
    """Debug export of the materialized operator as 'row col value' lines."""
    coo = A.to_csr().tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v!r}\n")
