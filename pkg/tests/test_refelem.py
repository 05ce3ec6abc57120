import json
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hpefie import quadrature as quad
from hpefie.refelem import (MAX_ORDER, SQUARE, TRIANGLE, InvalidDegreeError, OutOfDomainError,
                            bubble_factor, edge_normal_trace, eval_rt, legendre01, lobatto01,
                            modal_basis, rt_basis, rt_dimension, scalar_space)

KINDS = [TRIANGLE, SQUARE]


def monomial_rt_rank(kind, p):
    """Brute-force rank of the monomial generating set of the RT space (independent oracle)."""
    pts = np.random.default_rng(1).random((400, 2)) * 0.9 + 0.05
    x, y = pts[:, 0], pts[:, 1]
    cols = []
    if kind is TRIANGLE:
        for a, b in itertools.product(range(p), repeat=2):
            if a + b <= p - 1:
                m = x ** a * y ** b
                cols += [np.r_[m, 0 * m], np.r_[0 * m, m]]
                if a + b == p - 1:
                    cols.append(np.r_[x * m, y * m])
    else:
        for a in range(p + 1):
            for b in range(p + 1):
                m = x ** a * y ** b
                if b <= p - 1:
                    cols.append(np.r_[m, 0 * m])
                if a <= p - 1:
                    cols.append(np.r_[0 * m, m])
    return np.linalg.matrix_rank(np.column_stack(cols), tol=1e-9)


def random_points(kind, n, seed=0):
    rng = np.random.default_rng(seed)
    if kind is SQUARE:
        return rng.random((n, 2))
    a, b = rng.random((2, n))
    flip = a + b > 1
    a[flip], b[flip] = 1 - a[flip], 1 - b[flip]
    V = kind.vertices
    return V[0] + a[:, None] * (V[1] - V[0]) + b[:, None] * (V[2] - V[0])


# ---------------------------------------------------------------- geometry


def test_triangle_is_equilateral_with_unit_edges():
    for kind in KINDS:
        for i in range(kind.n_edges):
            assert np.linalg.norm(kind.tangent(i)) == pytest.approx(1.0)
            assert np.linalg.norm(kind.normal(i)) == pytest.approx(1.0)
    V = TRIANGLE.vertices
    assert np.allclose(V[2], [0.5, np.sqrt(3) / 2])


def test_outward_normals_point_away_from_centroid():
    for kind in KINDS:
        for i in range(kind.n_edges):
            a, b = kind.edge(i)
            assert (0.5 * (a + b) - kind.centroid) @ kind.normal(i) > 0


@pytest.mark.parametrize("kind", KINDS)
def test_rules_integrate_polynomials(kind):
    pts, w = kind.rule(5)
    assert w.sum() == pytest.approx(kind.area, rel=1e-14)
    # x^3 y^2 against a fine rule of the other construction
    fine_pts, fine_w = kind.rule(12)
    f = lambda p: p[:, 0] ** 3 * p[:, 1] ** 2
    assert w @ f(pts) == pytest.approx(fine_w @ f(fine_pts), rel=1e-13)


def test_legendre_and_lobatto_conventions():
    s, w = quad.gauss01(12)
    P, D = legendre01(6, s)
    assert np.allclose((P * w) @ P.T, np.diag(1 / (2 * np.arange(7) + 1)), atol=1e-14)
    L, dL = lobatto01(6, s)
    # Lob_k vanishes at both ends and has derivative L_k(2s-1)
    Le, _ = lobatto01(6, np.array([0.0, 1.0]))
    assert np.abs(Le).max() < 1e-14
    assert np.allclose(dL, P[1:6], atol=1e-13)


# ---------------------------------------------------------------- scalar spaces


def test_scalar_space_dimensions():
    assert len(scalar_space(TRIANGLE, 2, "total")) == 6
    assert len(scalar_space(SQUARE, 2, "tensor", 2)) == 9
    assert len(scalar_space(SQUARE, 2, "tensor", 1)) == 6
    assert len(scalar_space(TRIANGLE, 2, "bubble")) == 0
    assert len(scalar_space(SQUARE, 1, "bubble")) == 0
    assert len(scalar_space(SQUARE, 2, "bubble")) == 1


def test_triangle_cubic_bubble_is_product_of_barycentrics():
    sp = scalar_space(TRIANGLE, 3, "bubble")
    assert len(sp) == 1
    pts = random_points(TRIANGLE, 30)
    v, _, _ = sp.eval(pts)
    b = bubble_factor(TRIANGLE, pts)
    ratio = v[:, 0] / b
    assert np.ptp(ratio) < 1e-10 * abs(ratio[0])


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [3, 5])
def test_bubbles_vanish_on_boundary(kind, p):
    sp = scalar_space(kind, p, "bubble")
    s = np.linspace(0, 1, 11)
    for e in range(kind.n_edges):
        v, _, _ = sp.eval(kind.edge_points(e, s))
        assert np.abs(v).max() < 1e-12


@pytest.mark.parametrize("kind", KINDS)
def test_modal_basis_is_orthonormal(kind):
    mb = modal_basis(kind, 7)
    pts, w = kind.rule(10)
    V, _, _ = mb.eval(pts)
    assert np.allclose((V.T * w) @ V, np.eye(len(mb)), atol=1e-12)


def test_negative_degree_rejected():
    with pytest.raises(InvalidDegreeError):
        scalar_space(TRIANGLE, -1)


# ---------------------------------------------------------------- RT bases


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", range(1, 7))
def test_rt_dimension_matches_monomial_rank(kind, p):
    b = rt_basis(kind, p)
    assert len(b) == rt_dimension(kind, p) == monomial_rt_rank(kind, p)
    assert sum(len(e) for e in b.edge_dofs) + len(b.interior_dofs) == len(b)
    assert all(len(e) == p for e in b.edge_dofs)
    assert set(itertools.chain(*b.edge_dofs)).isdisjoint(b.interior_dofs)


def test_small_rt_counts():
    assert len(rt_basis(TRIANGLE, 1)) == 3 and not rt_basis(TRIANGLE, 1).interior_dofs
    assert len(rt_basis(SQUARE, 1)) == 4 and not rt_basis(SQUARE, 1).interior_dofs
    b = rt_basis(TRIANGLE, 2)
    assert len(b) == 8 and len(b.interior_dofs) == 2


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [1, 3, 6, 8])
def test_normal_traces_are_local_and_legendre(kind, p):
    b = rt_basis(kind, p)
    for f in range(len(b)):
        for e in range(kind.n_edges):
            tr = edge_normal_trace(b, f, e)
            coef = np.zeros(p + 1)
            coef[: len(tr.coef)] = tr.coef
            want = np.zeros(p + 1)
            if f in b.edge_dofs[e]:
                want[b.edge_dofs[e].index(f)] = 1.0
            assert np.abs(coef - want).max() < 1e-10


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("p", [1, 2, 4, 6])
def test_divergence_lies_in_p_minus_one(kind, p):
    b = rt_basis(kind, p)
    pts, w = kind.rule(p + 3)
    _, div = b.eval(pts)
    low = scalar_space(kind, p - 1, "total") if kind is TRIANGLE else scalar_space(kind, p - 1, "tensor", p - 1)
    V, _, _ = low.eval(pts)
    Q, _ = np.linalg.qr(V * np.sqrt(w)[:, None])
    r = div * np.sqrt(w) - (div * np.sqrt(w)) @ Q @ Q.T
    assert np.abs(r).max() <= 1e-12 * max(1.0, np.abs(div).max())


def test_rt1_edge_function_unit_flux():
    for kind in KINDS:
        b = rt_basis(kind, 1)
        s, w = quad.gauss01(4)
        for e in range(kind.n_edges):
            vals, _ = b.eval(kind.edge_points(e, s))
            flux = w @ (vals[b.edge_dofs[e][0]] @ kind.normal(e))
            assert flux == pytest.approx(1.0, abs=1e-13)


def test_constant_and_radial_fields():
    b = rt_basis(TRIANGLE, 1)
    c = b.coords_of(lambda x: np.tile([1.0, 0.0], (len(x), 1)))
    v, d = eval_rt(b, TRIANGLE.centroid[None])
    assert np.allclose(c @ v[:, 0], [1.0, 0.0], atol=1e-13)
    assert abs(c @ d[:, 0]) < 1e-12
    c = b.coords_of(lambda x: x)
    pts = random_points(TRIANGLE, 5)
    v, d = b.eval(pts)
    assert np.allclose(np.einsum("f,fqc->qc", c, v), pts, atol=1e-12)
    assert np.allclose(c @ d, 2.0)


def test_eval_rejects_outside_points():
    with pytest.raises(OutOfDomainError):
        eval_rt(rt_basis(TRIANGLE, 2), [[0.9, 0.9]])
    with pytest.raises(OutOfDomainError):
        eval_rt(rt_basis(SQUARE, 2), [[1.5, 0.5]])


def test_degree_bounds():
    with pytest.raises(InvalidDegreeError):
        rt_basis(TRIANGLE, 0)
    with pytest.raises(InvalidDegreeError):
        rt_basis(SQUARE, MAX_ORDER + 1)


@pytest.mark.parametrize("kind", KINDS)
def test_interior_functions_orthonormal(kind):
    b = rt_basis(kind, 5)
    pts, w = kind.rule(8)
    v, _ = b.eval(pts)
    vi = v[list(b.interior_dofs)]
    G = np.einsum("fqc,gqc,q->fg", vi, vi, w)
    assert np.allclose(G, np.eye(len(vi)), atol=1e-11)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(KINDS), st.integers(1, 4), st.integers(0, 10 ** 6))
def test_divergence_matches_finite_differences(kind, p, seed):
    b = rt_basis(kind, p)
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(len(b))
    pts = random_points(kind, 10, seed) * 0.9 + 0.05 * kind.centroid
    h = 1e-5
    fd = np.zeros(len(pts))
    for comp in range(2):
        e = np.zeros(2)
        e[comp] = h
        vp, _ = b.eval(pts + e)
        vm, _ = b.eval(pts - e)
        fd += (c @ vp[:, :, comp] - c @ vm[:, :, comp]) / (2 * h)
    _, d = b.eval(pts)
    exact = c @ d
    assert np.abs(fd - exact).max() <= 1e-6 * max(1.0, np.abs(exact).max())


def test_json_dump_reproduces_values(tmp_path):
    b = rt_basis(TRIANGLE, 3)
    path = tmp_path / "basis.json"
    b.dump_json(path)
    d = json.loads(path.read_text())
    assert d["kind"] == "triangle" and d["p"] == 3 and len(d["functions"]) == len(b)
    pts = random_points(TRIANGLE, 7)
    v, _ = b.eval(pts)
    M = np.column_stack([pts[:, 0] ** a * pts[:, 1] ** c for a, c in d["monomials"]])
    for f, fn in enumerate(d["functions"]):
        assert np.allclose(M @ fn["coeffs_x"], v[f, :, 0], atol=1e-9)
        assert np.allclose(M @ fn["coeffs_y"], v[f, :, 1], atol=1e-9)
