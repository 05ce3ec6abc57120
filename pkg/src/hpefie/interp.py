"""Projection-based H(div)-conforming interpolation.

On a reference element the interpolant is u1 + u2 + u3:

* u1 is the lowest order RT interpolant matching the edge fluxes;
* u2 = sum over edges of curl Psi_l, where Psi_l extends the tilde-H^{1/2}
  projection of the edge potential psi (d psi/d sigma = (u - u1).n) into
  P_p(K) with zero trace on the other edges;
* u3 is an interior RT function minimising ||div(u - u^p)|| subject to
  orthogonality of u - u^p to curls of scalar bubbles.

Every stage is linear in three sets of functionals of u: Legendre moments
of the normal traces, (div u, div B) for interior RT functions B, and
(u, curl phi) for scalar bubbles phi.  They are computed by quadrature,
graded toward singular points when requested.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import quadrature as quad
from .fields import VectorField, sample
from .refelem import (SQRT3, SQUARE, TRIANGLE, ElementKind, legendre01, lobatto01,
                      modal_basis, rt_basis, scalar_space)
from .space import RTSpace, _local_transfer

FLUX_TOL = 1e-9


class InsufficientLiftError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class DegeneracyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class InterpolantBreakdown:
    u1: np.ndarray  # RT_1 coordinates
    u2: np.ndarray  # RT_p coordinates
    u3: np.ndarray  # RT_p coordinates (interior functions only nonzero)
    total: np.ndarray
    u1_p: np.ndarray  # u1 in RT_p coordinates


@dataclass(frozen=True)
class HalfNormRealization:
    edge: int
    degree: int  # edge polynomials of degree <= degree vanishing at endpoints
    lift_degree: int
    gram: np.ndarray  # in the Lobatto basis Lob_1 .. Lob_{degree-1}


@dataclass(frozen=True)
class EdgePotential:
    """psi on each edge as coefficients of Lob_1, Lob_2, ... (zero at vertices)."""

    coeffs: np.ndarray  # (nedges, m-1)

    def __call__(self, edge, sigma):
        m = self.coeffs.shape[1] + 1
        L, _ = lobatto01(m, np.atleast_1d(sigma))
        return self.coeffs[edge] @ L

    @property
    def vertex_values(self):
        return np.zeros((self.coeffs.shape[0], 2))


# ----------------------------------------------------------------------------
# tilde-H^{1/2} realisation by discrete harmonic lifts


@lru_cache(maxsize=None)
def _stiffness(kind, q):
    modal = modal_basis(kind, q)
    pts, w = kind.rule(q + 1)
    _, Dx, Dy = modal.eval(pts)
    return (Dx * w[:, None]).T @ Dx + (Dy * w[:, None]).T @ Dy


def _barycentric(pts):
    l2 = 2.0 * pts[:, 1] / SQRT3
    l1 = pts[:, 0] - pts[:, 1] / SQRT3
    return np.stack([1.0 - l1 - l2, l1, l2])


def _edge_extension_values(kind, edge, n, pts):
    """Polynomial extensions of Lob_1..Lob_{n-1} on ``edge`` vanishing on the other edges."""
    if kind is TRIANGLE:
        mu = _barycentric(pts)
        ma, mb = mu[edge], mu[(edge + 1) % 3]
        _, dL = legendre01(n, 0.5 * (mb - ma + 1.0))  # d/dt of L_k(2t-1) = 2 L_k'
        ks = np.arange(1, n)
        return -(ma * mb) * dL[1:n] / (ks * (ks + 1))[:, None]
    x, y = pts[:, 0], pts[:, 1]
    sig, other = {0: (x, 1 - y), 1: (y, x), 2: (1 - x, y), 3: (1 - y, 1 - x)}[edge]
    L, _ = lobatto01(n, sig)
    return L * other


@lru_cache(maxsize=None)
def _harmonic_lift_matrix(kind, edge, n, q):
    """Modal (degree q) coefficients of the discrete harmonic lifts of Lob_1..Lob_{n-1}."""
    modal = modal_basis(kind, q)
    E = modal.project(lambda pts: _edge_extension_values(kind, edge, n, pts).T, q + 3).T
    B = scalar_space(kind, q, "bubble").coeffs
    if len(B) == 0:
        return E
    S = _stiffness(kind, q)
    SB = B @ S
    corr = np.linalg.solve(SB @ B.T, SB @ E.T)
    return E - (B.T @ corr).T


@lru_cache(maxsize=None)
def _lobatto_gram(n, q):
    L = _harmonic_lift_matrix(TRIANGLE, 0, n, q)
    G = L @ _stiffness(TRIANGLE, q) @ L.T
    return 0.5 * (G + G.T)


def half_inner(edge, degree, lift_degree=None):
    """Gram matrix of the tilde-H^{1/2}(edge) inner product on P^0_degree(edge).

    Realised as the Dirichlet energy of discrete harmonic lifts into P_q of
    an equilateral triangle attached to the (unit) edge.  Every edge of
    both reference elements has unit length, so the Gram matrix does not
    depend on ``edge``.
    """
    degree = int(degree)
    # Gram converges algebraically in q; 2n + 4 is within 2e-7 of q = 2n + 8 for n <= 28
    q = 2 * degree + 4 if lift_degree is None else int(lift_degree)
    if degree < 2:
        raise PreconditionError("P^0 on an edge needs degree >= 2")
    if q < degree + 2:
        raise InsufficientLiftError(f"lift degree {q} < {degree + 2}")
    return HalfNormRealization(edge, degree, q, _lobatto_gram(degree, q))


def edge_projection(psi_coeffs, p, realization=None):
    """tilde-H^{1/2} projection of psi onto P^0_p(edge).

    ``psi_coeffs`` are the coefficients of psi in Lob_1, Lob_2, ... (any
    length); ``realization`` must cover the degree of psi.  Returns the
    coefficients of psi_2 in Lob_1..Lob_{p-1}.
    """
    psi = np.atleast_1d(np.asarray(psi_coeffs, float))
    if p < 2:
        return np.zeros(0)
    n = max(len(psi) + 1, p)
    if realization is None or realization.degree < n:
        realization = half_inner(0, n)
    G = realization.gram
    k = len(psi)
    A = G[: p - 1, : p - 1]
    rhs = G[: p - 1, :k] @ psi
    return np.linalg.solve(A, rhs)


def edge_projection_callable(psi, p, n_modes=None, realization=None):
    """Project a callable psi(sigma) (zero at 0 and 1) onto P^0_p(edge)."""
    m = n_modes or 2 * p + 8
    s, w = quad.gauss01(m + 4)
    vals = np.asarray(psi(np.array([0.0, 1.0])))
    if np.abs(vals).max() > 1e-9:
        raise PreconditionError("psi must vanish at the edge endpoints")
    # Lobatto coefficients from the Legendre moments of psi'
    h = 1e-6
    d = (np.asarray(psi(np.clip(s + h, 0, 1))) - np.asarray(psi(np.clip(s - h, 0, 1)))) / (
        np.clip(s + h, 0, 1) - np.clip(s - h, 0, 1))
    P, _ = legendre01(m - 1, s)
    mom = (P * w) @ d
    c = (2 * np.arange(1, m) + 1) * mom[1:]
    return edge_projection(c, p, realization)


# ----------------------------------------------------------------------------
# Curl lifts


@lru_cache(maxsize=None)
def _curl_matrix(kind, p):
    """RT_p coordinates of curl phi for the modal basis of P_p(K)."""
    modal = modal_basis(kind, p)
    basis = rt_basis(kind, p)
    pts, w = kind.rule(p + 2)
    V, Dx, Dy = modal.eval(pts)
    Mx = (V * w[:, None]).T @ Dx  # modal coefficients of d/dx of each basis fn
    My = (V * w[:, None]).T @ Dy
    curl = np.stack([My.T, -Mx.T], axis=1)  # (nmodal, 2, nmodal)
    return basis.coords_of_modal(curl)  # (nmodal, nrt)


@lru_cache(maxsize=None)
def _edge_lift_rt(kind, p, edge):
    """RT_p coordinates of curl of the lift of Lob_1..Lob_{p-1} on ``edge``; shape (p-1, nrt)."""
    if p < 2:
        return np.zeros((0, len(rt_basis(kind, p))))
    L = _harmonic_lift_matrix(kind, edge, p, p)
    return L @ _curl_matrix(kind, p)


def curl_lift(psi2_coeffs, kind, p, edge):
    """RT_p coordinates of curl Psi, Psi the discrete harmonic extension of psi_2 from ``edge``."""
    kind = ElementKind.parse(kind)
    c = np.asarray(psi2_coeffs, float)
    if len(c) != p - 1:
        raise ValueError("psi_2 must be given by p-1 Lobatto coefficients")
    return c @ _edge_lift_rt(kind, p, edge)


# ----------------------------------------------------------------------------
# Reference interpolator


class ReferenceInterpolator:
    """Precomputed linear maps of the interpolant on one reference element."""

    def __init__(self, kind, p, n_modes=None):
        self.kind = kind = ElementKind.parse(kind)
        self.p = p
        self.m = n_modes or 2 * p + 8
        self.basis = basis = rt_basis(kind, p)
        ne = kind.n_edges
        self.T1 = _local_transfer(kind, 1, p, None).T  # (4 or 3, nrt): rows are RT_1 fns in RT_p
        G = half_inner(0, self.m).gram
        k = np.arange(1, self.m)
        self.proj = np.linalg.solve(G[: p - 1, : p - 1], G[: p - 1, :] * (2 * k + 1)) if p > 1 \
            else np.zeros((0, self.m - 1))
        self.lifts = [_edge_lift_rt(kind, p, e) for e in range(ne)]
        self.interior = np.array(basis.interior_dofs, dtype=int)
        self.bubbles = scalar_space(kind, p, "bubble")
        # exact polynomial pairings
        pts, w = kind.rule(p + 2)
        vals, div = basis.eval(pts)
        self.D_all = (div[self.interior] * w) @ div.T  # (nint, nrt)
        curls = self._bubble_curls(pts)  # (nb, npts, 2)
        self.C_all = np.einsum("bqc,fqc,q->bf", curls, vals, w)  # (nb, nrt)
        D = self.D_all[:, self.interior]
        C = self.C_all[:, self.interior]
        nb = len(C)
        K = np.block([[D, C.T], [C, np.zeros((nb, nb))]])
        self.kkt = K
        self.kkt_pinv = np.linalg.pinv(K, rcond=1e-12)

    def _bubble_curls(self, pts):
        _, Dx, Dy = self.bubbles.eval(pts)
        return np.stack([Dy.T, -Dx.T], axis=-1)

    # functionals --------------------------------------------------------
    def edge_moments(self, field, singular=()):
        """Legendre moments (nedges, m) of the normal traces of a reference field."""
        kind = self.kind
        out = np.empty((kind.n_edges, self.m))
        for e in range(kind.n_edges):
            s, w = kind.edge_rule(e, self.m + 2, singular)
            x = kind.edge_points(e, s)
            tr = field.value(x) @ kind.normal(e)
            P, _ = legendre01(self.m - 1, s)
            out[e] = P @ (w * tr)
        return out

    def volume_functionals(self, field, singular=()):
        pts, w = self.kind.graded_rule(self.p + 4, singular) if singular else self.kind.rule(self.p + 4)
        return self._volume_from_samples(pts, w, field.value(pts), field.div(pts))

    def _volume_from_samples(self, pts, w, val, dv):
        vals, div = self.basis.eval(pts)
        fdiv = (div[self.interior] * w) @ dv
        fcurl = np.einsum("bqc,qc,q->b", self._bubble_curls(pts), val, w)
        return fdiv, fcurl

    # stages ----------------------------------------------------------------
    def stage_u1(self, mu):
        return mu[:, 0].copy()

    def potential(self, mu, u1=None):
        """Edge potentials psi of u - u1 as Lobatto coefficients."""
        k = np.arange(1, self.m)
        return EdgePotential(mu[:, 1:] * (2 * k + 1))

    def stage_u2(self, mu):
        c = mu[:, 1:] @ self.proj.T  # (nedges, p-1) Lobatto coefficients of psi_2
        u2 = np.zeros(len(self.basis))
        for e, L in enumerate(self.lifts):
            u2 += c[e] @ L
        return u2, c

    def stage_u3(self, fdiv, fcurl, v):
        d = fdiv - self.D_all @ v
        c = fcurl - self.C_all @ v
        sol = self.kkt_pinv @ np.concatenate([d, c])
        u3 = np.zeros(len(self.basis))
        u3[self.interior] = sol[: len(self.interior)]
        return u3, sol

    def apply(self, mu, fdiv, fcurl):
        u1 = self.stage_u1(mu)
        u1p = u1 @ self.T1
        u2, _ = self.stage_u2(mu)
        u3, _ = self.stage_u3(fdiv, fcurl, u1p + u2)
        return InterpolantBreakdown(u1, u2, u3, u1p + u2 + u3, u1p)

    def __call__(self, field, singular=None):
        sing = tuple(field.singular) if singular is None else tuple(singular)
        mu = self.edge_moments(field, sing)
        fdiv, fcurl = self.volume_functionals(field, sing)
        return self.apply(mu, fdiv, fcurl)

    def linear_map(self):
        """Matrices (A_mu, A_div, A_curl) with total = A_mu mu.ravel() + A_div fdiv + A_curl fcurl."""
        ne = self.kind.n_edges
        nrt = len(self.basis)
        A_mu = np.zeros((nrt, ne * self.m))
        for i in range(ne * self.m):
            mu = np.zeros(ne * self.m)
            mu[i] = 1.0
            A_mu[:, i] = self.apply(mu.reshape(ne, self.m), np.zeros(len(self.interior)),
                                    np.zeros(len(self.bubbles))).total
        nint = len(self.interior)
        nb = len(self.bubbles)
        A_div = self.kkt_pinv[:nint, :nint]
        A_curl = self.kkt_pinv[:nint, nint:nint + nb]
        Ad = np.zeros((nrt, nint))
        Ac = np.zeros((nrt, nb))
        Ad[self.interior] = A_div
        Ac[self.interior] = A_curl
        return A_mu, Ad, Ac


@lru_cache(maxsize=None)
def reference_interpolator(kind, p, n_modes=None):
    return ReferenceInterpolator(ElementKind.parse(kind), int(p), n_modes)


# ----------------------------------------------------------------------------
# Public stage operations


def lowest_order(field, kind, singular=None, n_modes=None):
    """RT_1 coordinates (= edge fluxes) of the lowest order interpolant."""
    kind = ElementKind.parse(kind)
    sing = tuple(field.singular) if singular is None else tuple(singular)
    fluxes = np.empty(kind.n_edges)
    for e in range(kind.n_edges):
        s, w = kind.edge_rule(e, n_modes or 10, sing)
        fluxes[e] = w @ (field.value(kind.edge_points(e, s)) @ kind.normal(e))
    return fluxes


def interior_solve(field, u1p, u2, kind, p, singular=None):
    """Interior correction u3 and the KKT residual of the returned solution."""
    ip = reference_interpolator(kind, p)
    sing = tuple(field.singular) if singular is None else tuple(singular)
    fdiv, fcurl = ip.volume_functionals(field, sing)
    u3, sol = ip.stage_u3(fdiv, fcurl, u1p + u2)
    rhs = np.concatenate([fdiv - ip.D_all @ (u1p + u2), fcurl - ip.C_all @ (u1p + u2)])
    resid = ip.kkt @ sol - rhs
    return u3, float(np.linalg.norm(resid))


def project_div_reference(field, kind, p, singular=None):
    """Interpolant of a reference-element field; returns the three components."""
    return reference_interpolator(kind, p)(field, singular)


def rt_field(kind, p, coeffs):
    """A reference RT_p function as a VectorField (for reproduction tests)."""
    basis = rt_basis(kind, p)
    c = np.asarray(coeffs)

    def value(pts):
        v, _ = basis.eval(pts)
        return np.einsum("f,fqc->qc", c, v)

    def div(pts):
        _, d = basis.eval(pts)
        return c @ d

    return VectorField(value, div, (), "rt")


def reference_errors(field, kind, p, coeffs, singular=None, n=None):
    """(L2 error, H(div) error, ||u||_{H(div)}) of an RT_p function against a reference field."""
    kind = ElementKind.parse(kind)
    basis = rt_basis(kind, p)
    sing = tuple(field.singular) if singular is None else tuple(singular)
    nq = n or p + 6
    pts, w = kind.graded_rule(nq, sing) if sing else kind.rule(nq)
    v, d = basis.eval(pts)
    u = field.value(pts)
    du = field.div(pts)
    ev = u - np.einsum("f,fqc->qc", coeffs, v)
    ed = du - coeffs @ d
    l2 = w @ (ev ** 2).sum(axis=1)
    dd = w @ ed ** 2
    nrm = w @ (u ** 2).sum(axis=1) + w @ du ** 2
    return float(np.sqrt(l2)), float(np.sqrt(l2 + dd)), float(np.sqrt(nrm))


def edge_error_ratio(field, kind, p, singular=None, dual_degree=None):
    """Per-edge ratio ||(u - u^p).n||_{tilde H^-1(edge)} / ||u - u^p||_{H(div,K)}."""
    from .normx import tilde_hm1h_from_moments

    kind = ElementKind.parse(kind)
    ip = reference_interpolator(kind, p)
    sing = tuple(field.singular) if singular is None else tuple(singular)
    mu = ip.edge_moments(field, sing)
    br = ip.apply(mu, *ip.volume_functionals(field, sing))
    _, err, _ = reference_errors(field, kind, p, br.total, sing)
    if err < 1e-13:
        return np.zeros(kind.n_edges)
    q = dual_degree or ip.m - 1
    mu_p = ip.edge_moments(rt_field(kind, p, br.total), ())
    diff = mu - mu_p
    return np.array([tilde_hm1h_from_moments(diff[e, : q + 1], 1.0) for e in range(kind.n_edges)]) / err


# ----------------------------------------------------------------------------
# Global interpolation


def _pull_field(mesh, j, field):
    """Reference-element field of element j (Piola pull back of a surface field)."""
    DT = mesh.DT[j]
    J = mesh.J[j]
    P = np.linalg.pinv(DT)
    o = mesh.origin[j]

    nrm = mesh.normals[j]

    def value(xi):
        X = o + np.atleast_2d(xi) @ DT.T
        return J * field.at(X, np.broadcast_to(nrm, X.shape))[0] @ P.T

    def div(xi):
        X = o + np.atleast_2d(xi) @ DT.T
        return J * field.at(X, np.broadcast_to(nrm, X.shape))[1]

    sing = []
    for s in field.singular:
        s3 = np.zeros(3)
        s3[: len(s)] = s
        xi = (s3 - o) @ P.T
        if np.linalg.norm(o + DT @ xi - s3) < 1e-9 and mesh.kind.contains(xi[None], 1e-9)[0]:
            sing.append(tuple(xi))
    return VectorField(value, div, tuple(sing), field.name)


def element_interpolants(field, mesh, p):
    """Local RT_p coordinates (ne, nrt) of the reference interpolant on every element."""
    kind = mesh.kind
    ip = reference_interpolator(kind, p)
    ne = mesh.n_elements
    out = np.empty((ne, len(ip.basis)))
    sing_elems = {}
    if field.singular:
        for j in range(ne):
            f = _pull_field(mesh, j, field)
            if f.singular:
                sing_elems[j] = f
    regular = np.array([j for j in range(ne) if j not in sing_elems], dtype=int)
    if len(regular):
        # batched evaluation on the fixed rules
        mu = np.empty((len(regular), kind.n_edges, ip.m))
        for e in range(kind.n_edges):
            s, w = kind.edge_rule(e, ip.m + 2)
            xi = kind.edge_points(e, s)
            X = mesh.origin[regular, None, :] + np.einsum("jxc,qc->jqx", mesh.DT[regular], xi)
            U, _ = sample(field, X, mesh.normals[regular])
            # reference normal flux density: J * (DT^+ u) . n_hat
            Pn = np.einsum("jcx,c->jx", np.linalg.pinv(mesh.DT[regular]), kind.normal(e))
            tr = mesh.J[regular, None] * np.einsum("jqx,jx->jq", U, Pn)
            P, _ = legendre01(ip.m - 1, s)
            mu[:, e, :] = (tr * w) @ P.T
        pts, w = kind.rule(p + 4)
        X = mesh.origin[regular, None, :] + np.einsum("jxc,qc->jqx", mesh.DT[regular], pts)
        U, Dv = sample(field, X, mesh.normals[regular])
        Uh = mesh.J[regular, None, None] * np.einsum("jcx,jqx->jqc", np.linalg.pinv(mesh.DT[regular]), U)
        Dh = mesh.J[regular, None] * Dv
        vals, div = ip.basis.eval(pts)
        fdiv = np.einsum("iq,q,jq->ji", div[ip.interior], w, Dh)
        fcurl = np.einsum("bqc,q,jqc->jb", ip._bubble_curls(pts), w, Uh)
        A_mu, A_div, A_curl = _linear_map(kind, p)
        out[regular] = mu.reshape(len(regular), -1) @ A_mu.T + fdiv @ A_div.T + fcurl @ A_curl.T
    for j, f in sing_elems.items():
        out[j] = ip(f).total
    return out


@lru_cache(maxsize=None)
def _linear_map(kind, p):
    return reference_interpolator(kind, p).linear_map()


def project_div_global(field, mesh, p, space=None, audit=True, tol=1e-10):
    """Global conforming interpolant as coefficients in ``space`` (default RTSpace(mesh, p))."""
    from .mesh import ConformityError
    from .space import DiscreteField

    space = space or RTSpace(mesh, p)
    local = element_interpolants(field, mesh, p)
    c = space.gather(local)
    if audit:
        back = space.local_coeffs(c)
        m = space.local_to_global >= 0
        jump = np.abs(back - local)[m].max() if m.any() else 0.0
        scale = max(1.0, np.abs(local).max())
        if jump > tol * scale:
            raise ConformityError(f"edge coefficients disagree across elements ({jump:.3e})")
    return DiscreteField(space, c)
