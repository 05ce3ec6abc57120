"""Norm realisations on edges, elements and the discrete energy space.

Edge norms act on functions of the arc-length parameter sigma in [0, 1]
of a segment of physical length ``length``.  Dual norms are computed as
Rayleigh quotients over explicit polynomial test spaces.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import quadrature as quad
from .fields import sample
from .refelem import legendre01, lobatto01

SELF_CONVERGENCE_TOL = 1e-6


class PreconditionError(ValueError):
    pass


@dataclass(frozen=True)
class EdgeFunction:
    """Function on a segment, given by Legendre coefficients in sigma or by callables."""

    length: float = 1.0
    legendre: np.ndarray = None  # coefficients of L_k(2 sigma - 1)
    fn: object = None
    dfn: object = None
    singular: tuple = field(default=())

    def __call__(self, s):
        s = np.asarray(s, float)
        if self.legendre is not None:
            return np.polynomial.Legendre(self.legendre, domain=[0, 1])(s)
        return np.asarray(self.fn(s), float)

    def derivative(self, s):
        s = np.asarray(s, float)
        if self.legendre is not None:
            return np.polynomial.Legendre(self.legendre, domain=[0, 1]).deriv()(s)
        if self.dfn is not None:
            return np.asarray(self.dfn(s), float)
        h = 1e-6
        a, b = np.clip(s - h, 0, 1), np.clip(s + h, 0, 1)
        return (self(b) - self(a)) / (b - a)

    def rule(self, n):
        return quad.segment_rule(n, self.singular)

    def moments(self, q):
        """int_0^1 f(sigma) L_k(2 sigma - 1) d sigma for k = 0..q."""
        if self.legendre is not None:
            c = np.zeros(q + 1)
            k = min(q + 1, len(self.legendre))
            c[:k] = np.asarray(self.legendre)[:k] / (2 * np.arange(k) + 1)
            return c
        s, w = self.rule(q + 8)
        P, _ = legendre01(q, s)
        return P @ (w * self(s))


def h1h_norm(f, n_quad=40):
    """||f||_{H^1_h}^2 = length^-2 ||f||_0^2 + |f|_1^2 on the physical segment."""
    s, w = f.rule(n_quad)
    L = f.length
    l2 = L * (w @ f(s) ** 2)
    semi = (w @ f.derivative(s) ** 2) / L
    return float(np.sqrt(l2 / L ** 2 + semi))


@lru_cache(maxsize=None)
def _legendre_h1_gram(q):
    s, w = quad.gauss01(q + 2)
    P, D = legendre01(q, s)
    return (P * w) @ P.T + (D * w) @ D.T


def tilde_hm1h_from_moments(mom, length=1.0):
    """tilde-H^-1_h norm from the Legendre moments (k = 0..q) of f in sigma."""
    mom = np.asarray(mom, float)
    q = len(mom) - 1
    H = _legendre_h1_gram(q)
    val = mom @ np.linalg.solve(H, mom)
    return float(length ** 1.5 * np.sqrt(max(val, 0.0)))


def tilde_hm1h_norm(f, dual_degree=None, p=None):
    """sup over phi in P_q(edge) of |<f, phi>_0| / ||phi||_{H^1_h}."""
    q = dual_degree if dual_degree is not None else 2 * (p or 1) + 8
    if q < 1:
        raise ValueError("dual degree must be >= 1")
    return tilde_hm1h_from_moments(f.moments(q), f.length)


def tilde_hm1h_stabilized(f, q0=4, step=2, q_max=60, tol=SELF_CONVERGENCE_TOL):
    """Increase the dual degree until the relative change drops below ``tol``."""
    prev = tilde_hm1h_norm(f, q0)
    q = q0
    while q + step <= q_max:
        q += step
        cur = tilde_hm1h_norm(f, q)
        if abs(cur - prev) <= tol * max(abs(cur), 1e-300):
            return cur, q
        prev = cur
    return prev, q


# ----------------------------------------------------------------------------
# Localised dual bound on a polygon boundary


def _segment_basis(q, s):
    """Continuous piecewise basis on one segment: two hats then Lob_1..Lob_{q-1}."""
    hat = np.stack([1 - s, s])
    dhat = np.stack([-np.ones_like(s), np.ones_like(s)])
    if q < 2:
        return hat, dhat
    L, D = lobatto01(q, s)
    return np.vstack([hat, L]), np.vstack([dhat, D])


def localized_dual_bound(segment_functions, q=None, tol=1e-9):
    """(lhs, rhs) with lhs = ||f||_{H^-1(boundary)} and rhs = sum_j ||f_j||^2_{tilde H^-1_h}.

    ``segment_functions`` lists EdgeFunctions in the cyclic order of a
    closed polygon boundary; each must have zero mean.  The H^-1 norm is
    realised over continuous periodic piecewise polynomials of degree q
    with the H^1(boundary) Gram.
    """
    fs = list(segment_functions)
    if not fs:
        return 0.0, 0.0
    q = q or 8
    ns = len(fs)
    nloc = q + 1
    ndof = ns + ns * (q - 1)
    H = np.zeros((ndof, ndof))
    load = np.zeros(ndof)
    rhs = 0.0
    for j, f in enumerate(fs):
        mean = f.moments(0)[0]
        scale = max(np.sqrt(f.moments(0)[0] ** 2 + 1e-300), np.abs(f.moments(2)).max(), 1e-300)
        if abs(mean) > tol * max(1.0, scale):
            raise PreconditionError(f"segment {j} has nonzero mean {mean:.3e}")
        s, w = f.rule(q + 8)
        B, D = _segment_basis(q, s)
        L = f.length
        Hloc = L * (B * w) @ B.T + (D * w) @ D.T / L
        lloc = L * (B @ (w * f(s)))
        dofs = [j, (j + 1) % ns] + list(range(ns + j * (q - 1), ns + (j + 1) * (q - 1)))
        H[np.ix_(dofs, dofs)] += Hloc
        load[dofs] += lloc
        rhs += tilde_hm1h_norm(f, max(q, 2 * q)) ** 2
    lhs = float(np.sqrt(max(load @ np.linalg.solve(H, load), 0.0)))
    return lhs, float(rhs)


def polygon_segments(vertices, n_per_side, profile):
    """Split every side of a polygon into ``n_per_side`` segments carrying ``profile`` (Legendre coeffs)."""
    v = np.asarray(vertices, float)
    out = []
    for i in range(len(v)):
        L = np.linalg.norm(v[(i + 1) % len(v)] - v[i]) / n_per_side
        out += [EdgeFunction(length=L, legendre=np.asarray(profile, float)) for _ in range(n_per_side)]
    return out


# ----------------------------------------------------------------------------
# Fractional edge norms


def _lobatto_coeffs(f, n):
    # least squares fit of f - f_lin by Lob_1..Lob_{n-1} on a fine Gauss rule
    s, w = f.rule(2 * n + 4)
    f0, f1 = float(f(np.array([0.0]))[0]), float(f(np.array([1.0]))[0])
    r = f(s) - f0 * (1 - s) - f1 * s
    L, _ = lobatto01(n, s)
    sw = np.sqrt(w)
    c, *_ = np.linalg.lstsq((L * sw).T, r * sw, rcond=None)
    return c, f0, f1


def frac_edge_norm(f, s=0.5, variant="tilde", degree=20, lift_degree=None):
    """H^{1/2}-type edge norms realised by discrete harmonic lifts.

    tilde: Dirichlet energy of the lift of f (f must vanish at both ends);
    plain: tilde norm of f minus its linear interpolant plus f(0)^2 + f(1)^2.
    """
    from .interp import half_inner

    if s != 0.5:
        raise ValueError("only s = 1/2 is realised")
    c, f0, f1 = _lobatto_coeffs(f, degree)
    G = half_inner(0, degree, lift_degree).gram
    t = float(c @ G @ c)
    if variant == "tilde":
        if max(abs(f0), abs(f1)) > 1e-9:
            raise PreconditionError("tilde variant requires zero endpoint values")
        return float(np.sqrt(max(t, 0.0)))
    if variant == "plain":
        return float(np.sqrt(max(t, 0.0) + f0 ** 2 + f1 ** 2))
    raise ValueError(f"unknown variant {variant!r}")


# ----------------------------------------------------------------------------
# H(div) norms on surfaces


def hdiv_norm(obj, mesh=None, n_quad=None):
    """(||u||_0^2 + ||div u||_0^2)^(1/2) for a DiscreteField or a VectorField on ``mesh``."""
    from .space import DiscreteField

    if isinstance(obj, DiscreteField):
        mesh = obj.space.mesh
        pts, w = mesh.kind.rule(n_quad or obj.space.p + 2)
        v, d = obj.evaluate(pts)
        Jw = mesh.J[:, None] * w[None, :]
        val = np.sum(Jw * (np.abs(v) ** 2).sum(-1)) + np.sum(Jw * np.abs(d) ** 2)
        return float(np.sqrt(val))
    return float(np.sqrt(hdiv_error_sq(obj, None, mesh, n_quad).sum()))


def hdiv_error_sq(field_, discrete, mesh, n_quad=None, split=False):
    """Per-element squared H(div) errors of ``discrete`` (or None) against a VectorField."""
    p = discrete.space.p if discrete is not None else 2
    nq = n_quad or p + 6
    kind = mesh.kind
    out_l2 = np.zeros(mesh.n_elements)
    out_div = np.zeros(mesh.n_elements)
    pts, w = kind.rule(nq)
    sing3 = []
    for s in field_.singular:
        s3 = np.zeros(3)
        s3[: len(s)] = s
        sing3.append(s3)
    special = {}
    for j in range(mesh.n_elements):
        for s3 in sing3:
            xi = (s3 - mesh.origin[j]) @ np.linalg.pinv(mesh.DT[j]).T
            if np.linalg.norm(mesh.origin[j] + mesh.DT[j] @ xi - s3) < 1e-9 and kind.contains(xi[None], 1e-9)[0]:
                special[j] = xi
    regular = np.array([j for j in range(mesh.n_elements) if j not in special], dtype=int)

    def contrib(idx, pts, w):
        X = mesh.origin[idx, None, :] + np.einsum("jxc,qc->jqx", mesh.DT[idx], pts)
        U, Dv = sample(field_, X, mesh.normals[idx])
        if discrete is not None:
            basis = discrete.space.basis
            vals, div = basis.eval(pts)
            lc = discrete.space.local_coeffs(discrete.coeffs)[idx]
            vh = np.einsum("ef,fqc->eqc", lc, vals)
            U = U - np.einsum("exc,eqc->eqx", mesh.DT[idx], vh) / mesh.J[idx, None, None]
            Dv = Dv - (lc @ div) / mesh.J[idx, None]
        Jw = mesh.J[idx, None] * w[None, :]
        return (Jw * (np.abs(U) ** 2).sum(-1)).sum(1), (Jw * np.abs(Dv) ** 2).sum(1)

    if len(regular):
        a, b = contrib(regular, pts, w)
        out_l2[regular] = a
        out_div[regular] = b
    for j, xi in special.items():
        gp, gw = kind.graded_rule(nq, [xi])
        a, b = contrib(np.array([j]), gp, gw)
        out_l2[j] = a[0]
        out_div[j] = b[0]
    if split:
        return out_l2, out_div
    return out_l2 + out_div


# ----------------------------------------------------------------------------
# Discrete energy norm


@dataclass(frozen=True, eq=False)
class EnergyGram:
    space: object
    V0_div: np.ndarray
    V0_vec: np.ndarray

    @property
    def combined(self):
        return self.V0_div + self.V0_vec

    def check_spd(self, tol=1e-10):
        A = self.combined
        asym = np.abs(A - A.T).max() / np.abs(A).max()
        if asym > tol:
            raise np.linalg.LinAlgError(f"energy gram asymmetry {asym:.2e}")
        np.linalg.cholesky(0.5 * (A + A.T))
        return True


_GRAM_CACHE = {}


def energy_gram(space_or_mesh, p=None, include_boundary=None, cache=True):
    """Single-layer (k = 0) Gram of ``<V0 div u, div v> + <V0 u, v>`` on X_hp."""
    from .efie import assemble_blocks
    from .space import RTSpace

    space = space_or_mesh if p is None else RTSpace(space_or_mesh, p, include_boundary)
    key = (id(space.mesh), space.p, space.include_boundary)
    if cache and key in _GRAM_CACHE and _GRAM_CACHE[key].space.mesh is space.mesh:
        return _GRAM_CACHE[key]
    Adiv, Avec = assemble_blocks(space, 0.0)
    g = EnergyGram(space, Adiv.real, Avec.real)
    if cache:
        _GRAM_CACHE[key] = g
    return g


def energy_norm(coeffs, gram):
    c = np.asarray(coeffs)
    val = np.real(np.conj(c) @ gram.combined @ c)
    return float(np.sqrt(max(val, 0.0)))
