import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpefie import fields as F
from hpefie.mesh import build_mesh
from hpefie.normx import (EdgeFunction, PreconditionError, energy_gram, energy_norm, frac_edge_norm,
                          h1h_norm, hdiv_norm, localized_dual_bound, polygon_segments,
                          tilde_hm1h_norm, tilde_hm1h_stabilized)
from hpefie.refelem import SQUARE, TRIANGLE
from hpefie.space import DiscreteField, RTSpace

HS = [2.0 ** -k for k in range(1, 7)]


def poly(coefs, length=1.0):
    """EdgeFunction from power coefficients in sigma, with exact derivative."""
    P = np.polynomial.Polynomial(coefs)
    return EdgeFunction(length=length, fn=P, dfn=P.deriv())


def monomial_dual_norm(coefs, q, length=1.0):
    """Independent oracle: sup over monomials of degree q, with exact rational Gram entries."""
    i = np.arange(q + 1)
    I, J = np.meshgrid(i, i, indexing="ij")
    M = 1.0 / (I + J + 1)  # int s^{i+j}
    D = np.where((I > 0) & (J > 0), I * J / np.maximum(I + J - 1, 1), 0.0)  # int (s^i)'(s^j)'
    H = length * M + D / length
    c = np.asarray(coefs, float)
    mom = np.array([sum(ck / (k + n + 1) for k, ck in enumerate(c)) for n in i]) * length
    return np.sqrt(mom @ np.linalg.solve(H, mom))


# ---------------------------------------------------------------- H^1_h


def test_h1h_closed_forms():
    assert h1h_norm(poly([1.0])) == pytest.approx(1.0, rel=1e-13)
    assert h1h_norm(poly([0.0, 1.0])) == pytest.approx(np.sqrt(1 / 3 + 1), rel=1e-13)
    for h in HS:
        assert h1h_norm(poly([1.0], h)) == pytest.approx(h ** -0.5, rel=1e-13)


@pytest.mark.parametrize("coefs", [[1.0], [0, 1.0], [0, 1, -1.0], [0.3, -2, 0, 1.5]])
def test_h1h_scaling(coefs):
    vals = [h1h_norm(poly(coefs, h)) * np.sqrt(h) for h in HS]
    assert np.ptp(vals) <= 1e-12 * vals[0]


# ---------------------------------------------------------------- tilde H^-1_h


@pytest.mark.parametrize("coefs", [[1.0], [0, 1.0], [1, -6, 6.0], [0.2, 1, -3, 2.0]])
def test_tilde_matches_monomial_oracle(coefs):
    for q in (3, 6):
        got = tilde_hm1h_norm(poly(coefs), dual_degree=q)
        assert got == pytest.approx(monomial_dual_norm(coefs, q), rel=1e-9)


@pytest.mark.parametrize("coefs", [[0, 1.0], [1, -6, 6.0]])
def test_tilde_scaling(coefs):
    vals = [tilde_hm1h_norm(poly(coefs, h), dual_degree=8) * h ** -1.5 for h in HS]
    assert np.ptp(vals) <= 1e-12 * vals[0]


def test_tilde_monotone_and_stabilises():
    f = EdgeFunction(fn=lambda s: np.abs(s - 0.3) ** 0.5, singular=(0.3,))
    vals = [tilde_hm1h_norm(f, dual_degree=q) for q in range(2, 30, 2)]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    v, q = tilde_hm1h_stabilized(f)
    assert q < 60
    assert tilde_hm1h_norm(f, dual_degree=q + 10) == pytest.approx(v, rel=1e-5)


def test_tilde_of_polynomial_is_exact_once_degree_reached():
    f = poly([1, -6, 6.0])
    assert tilde_hm1h_norm(f, dual_degree=2) <= tilde_hm1h_norm(f, dual_degree=10)
    with pytest.raises(ValueError):
        tilde_hm1h_norm(f, dual_degree=0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5), st.floats(-4, 4))
def test_tilde_is_homogeneous(coefs, a):
    f = poly(coefs)
    g = poly(np.multiply(coefs, a))
    assert tilde_hm1h_norm(g, 8) == pytest.approx(abs(a) * tilde_hm1h_norm(f, 8), rel=1e-9, abs=1e-12)


# ---------------------------------------------------------------- localisation


SQUARE_POLY = [[0, 0], [1, 0], [1, 1], [0, 1]]


def test_localized_bound_zero_case():
    assert localized_dual_bound([]) == (0.0, 0.0)
    lhs, rhs = localized_dual_bound(polygon_segments(SQUARE_POLY, 2, [0.0]))
    assert lhs == 0.0 and rhs == 0.0


def test_localized_bound_requires_zero_mean():
    with pytest.raises(PreconditionError):
        localized_dual_bound(polygon_segments(SQUARE_POLY, 2, [1.0, 0.5]))


@pytest.mark.parametrize("profile", [[0, 1.0], [0, 0, 1.0], [0, 1, 0.5]])
def test_localized_bound_is_uniform_in_splitting(profile):
    ratios = []
    for n in (1, 2, 4, 8):
        lhs, rhs = localized_dual_bound(polygon_segments(SQUARE_POLY, n, profile))
        assert lhs ** 2 <= 10 * rhs
        ratios.append(lhs ** 2 / rhs)
    assert max(ratios) / min(ratios) < 2


# ---------------------------------------------------------------- fractional edge norms


def test_frac_edge_norm_stable_in_lift_degree():
    f = poly([0, 1, -1.0])
    a = frac_edge_norm(f, degree=6, lift_degree=12)
    b = frac_edge_norm(f, degree=6, lift_degree=16)
    assert a > 0 and a == pytest.approx(b, rel=1e-10)


def test_frac_edge_norm_reflection_symmetry():
    f = poly([0, 1, -2, 1.0])  # s (1 - s)^2
    g = EdgeFunction(fn=lambda s: (1 - s) * s ** 2)
    assert frac_edge_norm(f, degree=8) == pytest.approx(frac_edge_norm(g, degree=8), rel=1e-10)


def test_frac_edge_norm_variants():
    bub = poly([0, 1, -1.0])
    t = frac_edge_norm(bub, degree=8)
    f = poly([0.5, 1 - 0.5 + 2.0, -1.0])  # bubble plus 0.5 (1 - s) + 2 s
    with pytest.raises(PreconditionError):
        frac_edge_norm(f, degree=8)
    assert frac_edge_norm(f, variant="plain", degree=8) == pytest.approx(np.sqrt(t ** 2 + 0.25 + 4), rel=1e-10)
    with pytest.raises(ValueError):
        frac_edge_norm(bub, s=0.3)
    with pytest.raises(ValueError):
        frac_edge_norm(bub, variant="odd")


# ---------------------------------------------------------------- H(div)


def test_hdiv_norm_of_constant_field():
    mesh = build_mesh("UnitScreen", TRIANGLE, 1)
    c = np.array([0.3, -1.2, 0.0])
    f = F.VectorField(lambda x: np.tile(c, (len(x), 1)), lambda x: np.zeros(len(x)))
    assert hdiv_norm(f, mesh) == pytest.approx(np.linalg.norm(c), rel=1e-12)


def test_hdiv_norm_of_rt1_edge_function():
    # on the unit square an RT_1 edge function is (1 - y) e_y up to symmetry: 1/3 + 1
    space = RTSpace(build_mesh("UnitScreen", SQUARE, 0), 1, include_boundary=True)
    assert space.N == 4
    for i in range(4):
        c = np.zeros(4)
        c[i] = 1.0
        assert hdiv_norm(DiscreteField(space, c)) == pytest.approx(np.sqrt(4 / 3), rel=1e-12)


# ---------------------------------------------------------------- energy Gram


@pytest.mark.parametrize("kind", [TRIANGLE, SQUARE])
def test_energy_gram_spd(kind):
    mesh = build_mesh("UnitScreen", kind, 1)
    g = energy_gram(mesh, 1)
    assert g.check_spd()
    c = np.random.default_rng(0).standard_normal(g.space.N)
    assert energy_norm(c, g) == pytest.approx(np.sqrt(c @ g.combined @ c))
    assert energy_norm(c, g) > 0
    assert energy_gram(mesh, 1) is g


def test_energy_gram_two_elements():
    # one interior edge between two triangles: a 1x1 positive Gram
    g = energy_gram(build_mesh("UnitScreen", TRIANGLE, 0), 1, cache=False)
    assert g.combined.shape == (1, 1) and g.combined[0, 0] > 0
    assert g.V0_div[0, 0] > 0 and g.V0_vec[0, 0] > 0
