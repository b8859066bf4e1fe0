"""Assembly, field sampling and operator storage."""

import numpy as np
import pytest

from mgtune.problem import (
    DiffusivityField,
    FieldError,
    GeometryError,
    GridGeometry,
    StencilOperator,
    assemble,
    constant_field,
    field_rng,
    load_field,
    node_index,
    sample_lognormal_field,
    sample_seeds,
    save_field,
)


def element_stiffness(hx, hy):
    """4x4 bilinear element matrix on an hx x hy cell, mesh-normalized.

    Local corner order (iy, ix) in {0,1}^2, row-major. Built straight from
    the 1D stiffness/mass tensor product so it is independent of the
    stencil-based assembly under test.
    """
    kx = np.array([[1.0, -1.0], [-1.0, 1.0]]) / hx
    mx = hx * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    ky = np.array([[1.0, -1.0], [-1.0, 1.0]]) / hy
    my = hy * np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    K = np.kron(my, kx) + np.kron(ky, mx)
    return K / (hx * hy)


def dense_oracle(field, delta):
    """Scatter per-cell element matrices; wholly separate code path."""
    geo = field.geometry
    m, n = geo.m, geo.m * geo.m
    Ke = element_stiffness(geo.hx, geo.hy)
    A = np.zeros((n, n))
    for a in range(m):
        for b in range(m):
            corners = [
                node_index((a + iy) % m, (b + ix) % m, m)
                for iy in (0, 1)
                for ix in (0, 1)
            ]
            for i, gi in enumerate(corners):
                for j, gj in enumerate(corners):
                    A[gi, gj] += field.g[a, b] * Ke[i, j]
    return A + delta * np.eye(n)


@pytest.mark.parametrize("m,hx,hy,delta", [
    (4, 1.0, 1.0, 0.0),
    (8, 1.0, 1.0, 0.01),
    (8, 1.0, 2.0, 0.0),
    (6, 0.5, 1.5, 1e-4),
])
def test_assembly_matches_element_scatter(m, hx, hy, delta):
    geo = GridGeometry(m, hx, hy)
    field = sample_lognormal_field(geo, 1234 + m)
    A = assemble(field, delta)
    ref = dense_oracle(field, delta)
    scale = np.abs(ref).max()
    assert np.abs(A.to_dense() - ref).max() <= 1e-13 * scale


def test_unit_coefficient_stencil_values():
    A = assemble(constant_field(GridGeometry(6, 1.0, 2.0)), 0.0)
    st = A.stencils[2, 3]
    assert st[1, 1] == pytest.approx(5.0 / 3.0, abs=1e-15)
    assert st[0, 1] == st[2, 1] == pytest.approx(1.0 / 6.0, abs=1e-15)
    assert st[1, 0] == st[1, 2] == pytest.approx(-7.0 / 12.0, abs=1e-15)
    for dq, dp in [(0, 0), (0, 2), (2, 0), (2, 2)]:
        assert st[dq, dp] == pytest.approx(-5.0 / 24.0, abs=1e-15)
    iso = assemble(constant_field(GridGeometry(6)), 0.0).stencils[1, 1]
    assert iso[1, 1] == pytest.approx(8.0 / 3.0)
    assert iso[0, 0] == iso[1, 0] == iso[0, 1] == pytest.approx(-1.0 / 3.0)


def test_symmetry_is_exact_not_approximate():
    for seed in range(5):
        field = sample_lognormal_field(GridGeometry(10, 0.7, 1.9), seed)
        D = assemble(field, 0.0).to_dense()
        assert np.array_equal(D, D.T)


def test_constant_kernel_and_shift():
    field = sample_lognormal_field(GridGeometry(8), 3)
    ones = np.ones(64)
    A0 = assemble(field, 0.0)
    assert np.abs(A0.apply(ones)).max() <= 1e-13 * np.abs(A0.diagonal()).max()
    assert A0.annihilates_constants()
    A1 = assemble(field, 0.05)
    assert np.allclose(A1.apply(ones), 0.05 * ones, atol=1e-12)
    assert not A1.annihilates_constants()


def test_definiteness():
    field = sample_lognormal_field(GridGeometry(8), 9)
    w0 = np.linalg.eigvalsh(assemble(field, 0.0).to_dense())
    assert w0.min() >= -1e-12
    w1 = np.linalg.eigvalsh(assemble(field, 1e-3).to_dense())
    assert w1.min() > 0


def test_linearity_in_coefficients():
    geo = GridGeometry(8)
    f1 = sample_lognormal_field(geo, 1)
    f2 = sample_lognormal_field(geo, 2)
    combined = DiffusivityField(geo, f1.g + f2.g)
    lhs = assemble(combined, 0.0).to_dense()
    rhs = assemble(f1, 0.0).to_dense() + assemble(f2, 0.0).to_dense()
    assert np.allclose(lhs, rhs, atol=1e-12 * np.abs(lhs).max())


def test_apply_matches_dense_matvec():
    field = sample_lognormal_field(GridGeometry(12, 1.0, 0.5), 7)
    A = assemble(field, 0.02)
    x = field_rng(0).standard_normal(A.n)
    assert np.allclose(A.apply(x), A.to_dense() @ x, atol=1e-11)
    f = field_rng(1).standard_normal(A.n)
    assert np.allclose(A.residual(x, f), f - A.to_dense() @ x, atol=1e-11)


def test_sampling_determinism():
    geo = GridGeometry(16)
    a = sample_lognormal_field(geo, 42)
    b = sample_lognormal_field(geo, 42)
    assert np.array_equal(a.g, b.g)
    c = sample_lognormal_field(geo, 43)
    assert not np.array_equal(a.g, c.g)
    assert np.all(a.g > 0)


def test_lognormal_moments():
    g = sample_lognormal_field(GridGeometry(64), 5).g
    logs = np.log(g).ravel()
    assert abs(logs.mean()) < 0.05
    assert abs(logs.std() - 1.0) < 0.05
    shifted = sample_lognormal_field(GridGeometry(64), 5, mu=2.0, sigma=0.5).g
    assert abs(np.log(shifted).mean() - 2.0) < 0.05


def test_sample_seeds_deterministic_and_distinct():
    s1 = sample_seeds(99, 50)
    s2 = sample_seeds(99, 50)
    assert np.array_equal(s1, s2)
    assert len(set(int(x) for x in s1)) == 50
    assert not np.array_equal(s1, sample_seeds(100, 50))


def test_geometry_validation():
    with pytest.raises(GeometryError):
        GridGeometry(3)
    with pytest.raises(GeometryError):
        GridGeometry(7)
    with pytest.raises(GeometryError):
        GridGeometry(2)
    with pytest.raises(GeometryError):
        GridGeometry(8, hx=0.0)
    with pytest.raises(GeometryError):
        GridGeometry(8, hy=-1.0)


def test_field_validation():
    geo = GridGeometry(4)
    with pytest.raises(FieldError):
        DiffusivityField(geo, np.ones((4, 5)))
    bad = np.ones((4, 4))
    bad[2, 2] = 0.0
    with pytest.raises(FieldError):
        DiffusivityField(geo, bad)
    with pytest.raises(FieldError):
        constant_field(geo, value=-2.0)


def test_node_index_layout_and_bounds():
    assert node_index(0, 0, 8) == 0
    assert node_index(0, 3, 8) == 3
    assert node_index(2, 1, 8) == 17
    with pytest.raises(IndexError):
        node_index(8, 0, 8)
    with pytest.raises(IndexError):
        node_index(0, -1, 8)


def test_negative_shift_rejected():
    field = sample_lognormal_field(GridGeometry(4), 0)
    with pytest.raises(ValueError):
        assemble(field, -0.1)


def test_stencil_shape_validation():
    with pytest.raises(ValueError):
        StencilOperator(4, np.zeros((4, 4, 3, 2)))


def test_field_csv_round_trip(tmp_path):
    field = sample_lognormal_field(GridGeometry(8, 1.0, 2.0), 77)
    path = tmp_path / "field.csv"
    save_field(field, path)
    back = load_field(path)
    assert back.geometry == field.geometry
    assert back.seed == 77
    assert np.allclose(back.g, field.g, rtol=1e-15)
