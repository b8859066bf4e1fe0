"""Grid transfer: prolongation, restriction, Galerkin coarsening.

Coarse nodes are the even-index fine nodes, so coarsening halves the side.
Prolongation is stored with interpolation-scaled weights (coincident nodes
get 1) and restriction is its exact transpose; the coarse-grid correction
P (P^T A P)^-1 P^T is invariant under rescaling P, so the scale convention
cannot change any result, only the bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .problem import StencilOperator


class CoarseningError(ValueError):
    """Grid too small to coarsen, or coarse stencil not 9-point."""


class DegenerateStencilError(ZeroDivisionError):
    """Collapsed stencil center vanished while building operator weights."""


BILINEAR = "bilinear"
BLACKBOX = "blackbox"


@dataclass(frozen=True)
class ProlongationOperator:
    """Sparse (n_fine, n_coarse) interpolation matrix."""

    m_fine: int
    m_coarse: int
    matrix: sparse.csr_matrix
    kind: str = BILINEAR

    def __post_init__(self):
        nf = self.m_fine * self.m_fine
        nc = self.m_coarse * self.m_coarse
        if self.matrix.shape != (nf, nc):
            raise ValueError(
                f"prolongation must be {(nf, nc)}, got {self.matrix.shape}"
            )

    @cached_property
    def _csr_t(self) -> sparse.csr_matrix:
        return self.matrix.T.tocsr()

    def prolong(self, e_coarse: np.ndarray) -> np.ndarray:
        return self.matrix @ e_coarse

    def restrict(self, r_fine: np.ndarray) -> np.ndarray:
        """Transpose-of-prolongation restriction."""
        return self._csr_t @ r_fine

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()


def _check_coarsenable(m_fine: int) -> int:
    if m_fine < 8 or m_fine % 2:
        raise CoarseningError(
            f"cannot coarsen an m={m_fine} grid; need an even side >= 8"
        )
    return m_fine // 2


def bilinear_prolongation(m_fine: int) -> ProlongationOperator:
    """Coefficient-blind interpolation: 1 on coincident nodes, 1/2 along
    coarse edges, 1/4 at cell centers."""
    mc = _check_coarsenable(m_fine)
    m = m_fine
    rows, cols, vals = [], [], []

    def emit(q, p, qc, pc, w):
        rows.append(q * m + p)
        cols.append((qc % mc) * mc + (pc % mc))
        vals.append(np.broadcast_to(w, q.shape).astype(float))

    qc0, pc0 = np.meshgrid(np.arange(mc), np.arange(mc), indexing="ij")

    # Coincident nodes (2qc, 2pc).
    emit(2 * qc0, 2 * pc0, qc0, pc0, 1.0)
    # x-edge nodes (2qc, 2pc + 1): average the left and right coarse nodes.
    emit(2 * qc0, 2 * pc0 + 1, qc0, pc0, 0.5)
    emit(2 * qc0, 2 * pc0 + 1, qc0, pc0 + 1, 0.5)
    # y-edge nodes (2qc + 1, 2pc).
    emit(2 * qc0 + 1, 2 * pc0, qc0, pc0, 0.5)
    emit(2 * qc0 + 1, 2 * pc0, qc0 + 1, pc0, 0.5)
    # Cell centers (2qc + 1, 2pc + 1): average the four corners.
    for dq in (0, 1):
        for dp in (0, 1):
            emit(2 * qc0 + 1, 2 * pc0 + 1, qc0 + dq, pc0 + dp, 0.25)

    mat = sparse.coo_matrix(
        (
            np.concatenate([v.ravel() for v in vals]),
            (
                np.concatenate([r.ravel() for r in rows]),
                np.concatenate([c.ravel() for c in cols]),
            ),
        ),
        shape=(m * m, mc * mc),
    )
    return ProlongationOperator(m, mc, mat.tocsr(), kind=BILINEAR)


def _edge_weights(collapsed: np.ndarray, where: np.ndarray, label: str):
    """Weights -side/center of a collapsed 3-entry stencil, validated on
    the nodes that actually use them."""
    center = collapsed[:, :, 1]
    bad = where & (np.abs(center) <= 1e-14 * np.abs(collapsed).sum(axis=2))
    if np.any(bad):
        q, p = np.argwhere(bad)[0]
        raise DegenerateStencilError(
            f"collapsed {label} stencil center vanishes at node ({q}, {p})"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = -collapsed[:, :, 0] / center
        hi = -collapsed[:, :, 2] / center
    return np.nan_to_num(lo), np.nan_to_num(hi)


def blackbox_prolongation(A: StencilOperator) -> ProlongationOperator:
    """Operator-dependent interpolation built from collapsed stencils.

    Fine nodes on coarse edges interpolate from their two coarse neighbors
    with weights from the stencil collapsed perpendicular to the edge
    (rows summed for x-edges, columns for y-edges). Cell centers then
    interpolate from their four coarse corners by eliminating their own
    row exactly, using the edge weights already computed. For a constant
    coefficient field this reproduces bilinear interpolation.
    """
    m = A.m
    mc = _check_coarsenable(m)
    st = A.stencils
    q, p = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    x_edge = (q % 2 == 0) & (p % 2 == 1)
    y_edge = (q % 2 == 1) & (p % 2 == 0)
    center = (q % 2 == 1) & (p % 2 == 1)

    # Collapse over dq: 3 entries indexed by dp. Used on x-edge nodes,
    # whose coarse neighbors sit at p -+ 1.
    col_sum = st.sum(axis=2)
    w_w, w_e = _edge_weights(col_sum, x_edge, "column")
    # Collapse over dp: used on y-edge nodes, coarse neighbors at q -+ 1.
    row_sum = st.sum(axis=3)
    w_s, w_n = _edge_weights(row_sum, y_edge, "row")

    a_c = st[:, :, 1, 1]
    bad = center & (np.abs(a_c) == 0)
    if np.any(bad):
        qb, pb = np.argwhere(bad)[0]
        raise DegenerateStencilError(f"zero center coefficient at ({qb}, {pb})")

    def at(w, dq, dp):
        # Value of the weight field at the (q + dq, p + dp) neighbor.
        return np.roll(w, (-dq, -dp), axis=(0, 1))

    with np.errstate(divide="ignore", invalid="ignore"):
        w_sw = -(st[:, :, 0, 0] + st[:, :, 1, 0] * at(w_s, 0, -1)
                 + st[:, :, 0, 1] * at(w_w, -1, 0)) / a_c
        w_se = -(st[:, :, 0, 2] + st[:, :, 1, 2] * at(w_s, 0, 1)
                 + st[:, :, 0, 1] * at(w_e, -1, 0)) / a_c
        w_nw = -(st[:, :, 2, 0] + st[:, :, 1, 0] * at(w_n, 0, -1)
                 + st[:, :, 2, 1] * at(w_w, 1, 0)) / a_c
        w_ne = -(st[:, :, 2, 2] + st[:, :, 1, 2] * at(w_n, 0, 1)
                 + st[:, :, 2, 1] * at(w_e, 1, 0)) / a_c

    rows, cols, vals = [], [], []

    def emit(mask, w, dq, dp):
        qq, pp = q[mask], p[mask]
        qcf, pcf = (qq + dq) % m, (pp + dp) % m
        rows.append(qq * m + pp)
        cols.append((qcf // 2) * mc + pcf // 2)
        vals.append(w[mask] if isinstance(w, np.ndarray) else
                    np.full(qq.size, float(w)))

    coincident = (q % 2 == 0) & (p % 2 == 0)
    emit(coincident, 1.0, 0, 0)
    emit(x_edge, w_w, 0, -1)
    emit(x_edge, w_e, 0, 1)
    emit(y_edge, w_s, -1, 0)
    emit(y_edge, w_n, 1, 0)
    emit(center, w_sw, -1, -1)
    emit(center, w_se, -1, 1)
    emit(center, w_nw, 1, -1)
    emit(center, w_ne, 1, 1)

    mat = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m * m, mc * mc),
    )
    return ProlongationOperator(m, mc, mat.tocsr(), kind=BLACKBOX)


def make_prolongation(kind: str, A: StencilOperator) -> ProlongationOperator:
    if kind == BILINEAR:
        return bilinear_prolongation(A.m)
    if kind == BLACKBOX:
        return blackbox_prolongation(A)
    raise ValueError(f"unknown prolongation kind {kind!r}")


def galerkin_coarsen(A: StencilOperator, P: ProlongationOperator) -> StencilOperator:
    """Coarse operator P^T A P, re-expressed in 9-point stencil form.

    The triple product of a periodic 9-point operator with either
    prolongation stays a periodic 9-point operator, so the sparse product
    is scattered back into an (mc, mc, 3, 3) array; any entry landing
    outside the 3x3 neighborhood means the input was not 9-point and is
    reported rather than dropped.
    """
    if P.m_fine != A.m:
        raise CoarseningError(
            f"prolongation is for m={P.m_fine}, operator has m={A.m}"
        )
    mc = P.m_coarse
    if mc < 4:
        raise CoarseningError(f"coarse side {mc} below the minimum of 4")
    coarse = (P._csr_t @ A.to_csr() @ P.matrix).tocoo()

    qc, pc = np.divmod(coarse.row, mc)
    q2, p2 = np.divmod(coarse.col, mc)
    dq = (q2 - qc + 1) % mc
    dp = (p2 - pc + 1) % mc
    outside = (dq > 2) | (dp > 2)
    if np.any(outside):
        k = int(np.flatnonzero(outside)[0])
        raise CoarseningError(
            f"coarse entry ({coarse.row[k]}, {coarse.col[k]}) is outside "
            "the 9-point neighborhood"
        )
    st = np.zeros((mc * mc * 9,))
    flat = (coarse.row * 9 + dq * 3 + dp).astype(np.int64)
    np.add.at(st, flat, coarse.data)
    return StencilOperator(mc, st.reshape(mc, mc, 3, 3), delta=0.0)
