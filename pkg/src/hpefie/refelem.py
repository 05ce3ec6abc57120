"""Reference elements, scalar polynomial spaces and Raviart-Thomas bases.

The reference triangle is the equilateral one with vertices (0,0), (1,0),
(1/2, sqrt(3)/2); the reference square is (0,1)^2.  All edges have unit
length and are traversed counter-clockwise, edge ``i`` running from vertex
``i`` to vertex ``i+1``.

Polynomials are stored as coefficient arrays against an L2(K)-orthonormal
modal basis (Dubiner polynomials on the triangle, tensor Legendre on the
square), so that L2 inner products are plain dot products of coefficients.
"""
import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import eval_jacobi

from . import quadrature as quad

MAX_ORDER = 10
SQRT3 = np.sqrt(3.0)


class InvalidDegreeError(ValueError):
    pass


class OutOfDomainError(ValueError):
    pass


class ElementKind(enum.Enum):
    TRIANGLE = "triangle"
    SQUARE = "square"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())

    @property
    def vertices(self):
        if self is ElementKind.TRIANGLE:
            return np.array([[0.0, 0.0], [1.0, 0.0], [0.5, SQRT3 / 2]])
        return np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])

    @property
    def n_edges(self):
        return 3 if self is ElementKind.TRIANGLE else 4

    @property
    def area(self):
        return SQRT3 / 4 if self is ElementKind.TRIANGLE else 1.0

    @property
    def centroid(self):
        return self.vertices.mean(axis=0)

    def edge(self, i):
        v = self.vertices
        return v[i], v[(i + 1) % self.n_edges]

    def tangent(self, i):
        a, b = self.edge(i)
        return b - a

    def normal(self, i):
        t = self.tangent(i)
        return np.array([t[1], -t[0]])

    def edge_points(self, i, sigma):
        a, b = self.edge(i)
        sigma = np.asarray(sigma, dtype=float)
        return a + sigma[:, None] * (b - a)

    def contains(self, pts, tol=1e-10):
        pts = np.atleast_2d(pts)
        inside = np.ones(len(pts), dtype=bool)
        for i in range(self.n_edges):
            a, _ = self.edge(i)
            inside &= (pts - a) @ self.normal(i) <= tol
        return inside

    def rule(self, n):
        """Gauss rule on K exact for (total) degree ``2n - 1``."""
        if self is ElementKind.TRIANGLE:
            return quad.triangle_rule(self.vertices, n)
        return quad.square_rule(n)

    def graded_rule(self, n, singular_points):
        """Rule on K graded toward each point in ``singular_points``.

        With several points, K is split into the Voronoi-like fans of the
        first point only; callers pass at most one point per element.
        """
        pts = [np.asarray(s, float) for s in singular_points]
        pts = [s for s in pts if self.contains(s[None], 1e-9)[0]]
        if not pts:
            return self.rule(n)
        return quad.graded_fan_rule(self.vertices, pts[0], n)

    def edge_rule(self, i, n, singular_points=()):
        """Rule in the arc-length parameter of edge ``i`` (length 1)."""
        a, b = self.edge(i)
        t = b - a
        marks = []
        for s in singular_points:
            s = np.asarray(s, float)
            sig = float((s - a) @ t)
            if -1e-9 <= sig <= 1 + 1e-9 and np.linalg.norm(a + sig * t - s) < 1e-9:
                marks.append(sig)
        return quad.segment_rule(n, marks)


TRIANGLE = ElementKind.TRIANGLE
SQUARE = ElementKind.SQUARE


# ----------------------------------------------------------------------------
# 1D Legendre / Lobatto helpers on [0, 1]


def legendre01(n, t):
    """Values and t-derivatives of L_k(2t - 1) for k = 0..n; shape (n+1, len(t))."""
    t = np.asarray(t, dtype=float)
    x = 2.0 * t - 1.0
    P = np.zeros((n + 1,) + x.shape)
    D = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = x
        D[1] = 1.0
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * x * P[k] - k * P[k - 1]) / (k + 1)
        D[k + 1] = D[k - 1] + (2 * k + 1) * P[k]
    return P, 2.0 * D


def lobatto01(n, t):
    """Integrated Legendre functions Lob_k(t) = int_0^t L_k(2s-1) ds, k = 1..n-1.

    Lob_k has degree k+1 and vanishes at t = 0 and t = 1; together they span
    the polynomials of degree <= n vanishing at both endpoints.  Returns the
    values (shape (n-1, len(t))) and derivatives.
    """
    P, _ = legendre01(n, t)
    vals = np.array([(P[k + 1] - P[k - 1]) / (2.0 * (2 * k + 1)) for k in range(1, n)])
    ders = P[1:n].copy()
    return vals.reshape(n - 1, -1), ders.reshape(n - 1, -1)


# ----------------------------------------------------------------------------
# Orthonormal modal bases


def _legendre_all(n, x):
    P = np.zeros((n + 1,) + x.shape)
    D = np.zeros_like(P)
    P[0] = 1.0
    if n >= 1:
        P[1] = x
        D[1] = 1.0
    for k in range(1, n):
        P[k + 1] = ((2 * k + 1) * x * P[k] - k * P[k - 1]) / (k + 1)
        D[k + 1] = D[k - 1] + (2 * k + 1) * P[k]
    return P, D


def _dubiner(n, r, s):
    """Dubiner polynomials on {r,s >= 0, r+s <= 1} with r/s derivatives."""
    x = 2.0 * r + s - 1.0
    t = 1.0 - s
    # homogenised Legendre H_i(x, t) = t^i P_i(x / t), polynomial in (r, s)
    H = [np.ones_like(r), x]
    Hr = [np.zeros_like(r), 2.0 * np.ones_like(r)]
    Hs = [np.zeros_like(r), np.ones_like(r)]
    for k in range(1, n):
        H.append(((2 * k + 1) * x * H[k] - k * t * t * H[k - 1]) / (k + 1))
        Hr.append(((2 * k + 1) * (2.0 * H[k] + x * Hr[k]) - k * t * t * Hr[k - 1]) / (k + 1))
        Hs.append(((2 * k + 1) * (H[k] + x * Hs[k])
                   - k * (-2.0 * t * H[k - 1] + t * t * Hs[k - 1])) / (k + 1))
    b = 2.0 * s - 1.0
    out = {}
    for i in range(n + 1):
        for j in range(n + 1 - i):
            Jv = eval_jacobi(j, 2 * i + 1, 0, b)
            Jd = 0.0 if j == 0 else 0.5 * (j + 2 * i + 2) * eval_jacobi(j - 1, 2 * i + 2, 1, b)
            val = H[i] * Jv
            dr = Hr[i] * Jv
            ds = Hs[i] * Jv + H[i] * 2.0 * Jd
            out[(i, j)] = (val, dr, ds)
    return out


class ModalBasis:
    """L2(K)-orthonormal basis of P_n(K) (total degree on T, tensor on Q)."""

    def __init__(self, kind, degree):
        self.kind = ElementKind.parse(kind)
        self.degree = int(degree)
        n = self.degree
        if self.kind is TRIANGLE:
            self.indices = [(i, d - i) for d in range(n + 1) for i in range(d, -1, -1)]
        else:
            self.indices = [(i, j) for i in range(n + 1) for j in range(n + 1)]

    def __len__(self):
        return len(self.indices)

    def total_degree(self, idx):
        i, j = self.indices[idx]
        return i + j if self.kind is TRIANGLE else max(i, j)

    def eval(self, pts):
        """Return values, d/dx1, d/dx2 with shape (npts, nbasis)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        x1, x2 = pts[:, 0], pts[:, 1]
        n = self.degree
        if self.kind is TRIANGLE:
            s = 2.0 * x2 / SQRT3
            r = x1 - x2 / SQRT3
            table = _dubiner(n, r, s)
            V = np.empty((len(pts), len(self)))
            Dx = np.empty_like(V)
            Dy = np.empty_like(V)
            for c, (i, j) in enumerate(self.indices):
                val, dr, ds = table[(i, j)]
                scale = 1.0 / np.sqrt((SQRT3 / 2) / ((2 * i + 1) * (2 * i + 2 * j + 2)))
                V[:, c] = val * scale
                Dx[:, c] = dr * scale
                Dy[:, c] = (-dr / SQRT3 + 2.0 * ds / SQRT3) * scale
            return V, Dx, Dy
        Px, Dpx = _legendre_all(n, 2.0 * x1 - 1.0)
        Py, Dpy = _legendre_all(n, 2.0 * x2 - 1.0)
        norm = np.sqrt(2 * np.arange(n + 1) + 1.0)
        Px = Px * norm[:, None]
        Py = Py * norm[:, None]
        Dpx = 2.0 * Dpx * norm[:, None]
        Dpy = 2.0 * Dpy * norm[:, None]
        ii = np.array([i for i, _ in self.indices])
        jj = np.array([j for _, j in self.indices])
        V = (Px[ii] * Py[jj]).T
        Dx = (Dpx[ii] * Py[jj]).T
        Dy = (Px[ii] * Dpy[jj]).T
        return V, Dx, Dy

    def project(self, fn, n_quad=None):
        """L2 projection of a callable ``fn(pts) -> (npts, ...)``."""
        nq = n_quad or self.degree + 4
        pts, w = self.kind.rule(nq)
        V, _, _ = self.eval(pts)
        vals = np.asarray(fn(pts))
        return np.tensordot(V * w[:, None], vals, axes=(0, 0))


@lru_cache(maxsize=None)
def modal_basis(kind, degree):
    return ModalBasis(kind, degree)


# ----------------------------------------------------------------------------
# Scalar polynomial spaces


class Variant(enum.Enum):
    TOTAL = "total"
    TENSOR = "tensor"
    BUBBLE = "bubble"


@dataclass(frozen=True, eq=False)
class PolySpace:
    """Span of ``coeffs @ modal`` with linearly independent rows."""

    kind: ElementKind
    degree: int
    variant: Variant
    modal: ModalBasis
    coeffs: np.ndarray

    def __len__(self):
        return self.coeffs.shape[0]

    def eval(self, pts):
        V, Dx, Dy = self.modal.eval(pts)
        C = self.coeffs.T
        return V @ C, Dx @ C, Dy @ C

    def gram(self):
        return self.coeffs @ self.coeffs.T


def bubble_factor(kind, pts):
    """Product of the edge factors; vanishes exactly on the boundary of K."""
    pts = np.atleast_2d(pts)
    x, y = pts[:, 0], pts[:, 1]
    if ElementKind.parse(kind) is TRIANGLE:
        l2 = 2.0 * y / SQRT3
        l1 = x - y / SQRT3
        return (1.0 - l1 - l2) * l1 * l2
    return x * (1 - x) * y * (1 - y)


def _orthonormal_rows(C, tol=1e-10):
    # rows -> orthonormal rows spanning the same space (QR, rank checked)
    Q, R = np.linalg.qr(C.T)
    d = np.abs(np.diag(R))
    if len(d) and d.min() < tol * max(d.max(), 1.0):
        raise np.linalg.LinAlgError("rank-deficient generating set")
    return Q.T


@lru_cache(maxsize=None)
def scalar_space(kind, p, variant="total", p2=None):
    """Scalar polynomial space on K.

    ``total``: P_p(K) (total degree on T, tensor P_{p,p} on Q);
    ``tensor``: P_{p,p2}(Q);  ``bubble``: polynomials of P_p(K) vanishing on
    the boundary of K (may be empty).
    """
    kind = ElementKind.parse(kind)
    variant = Variant(variant) if not isinstance(variant, Variant) else variant
    p = int(p)
    if p < 0:
        raise InvalidDegreeError(f"degree must be >= 0, got {p}")
    if variant is Variant.TENSOR:
        if kind is not SQUARE:
            raise ValueError("tensor-product spaces live on the square")
        q = p if p2 is None else int(p2)
        modal = modal_basis(kind, max(p, q))
        sel = [c for c, (i, j) in enumerate(modal.indices) if i <= p and j <= q]
        return PolySpace(kind, max(p, q), variant, modal, np.eye(len(modal))[sel])
    modal = modal_basis(kind, p)
    if variant is Variant.TOTAL:
        return PolySpace(kind, p, variant, modal, np.eye(len(modal)))
    inner_deg = p - 3 if kind is TRIANGLE else p - 2
    if inner_deg < 0:
        return PolySpace(kind, p, variant, modal, np.zeros((0, len(modal))))
    inner = modal_basis(kind, inner_deg)

    def gen(pts):
        V, _, _ = inner.eval(pts)
        return V * bubble_factor(kind, pts)[:, None]

    C = modal.project(gen, p + 3).T
    return PolySpace(kind, p, variant, modal, _orthonormal_rows(C))


# ----------------------------------------------------------------------------
# Raviart-Thomas bases


def rt_dimension(kind, p):
    kind = ElementKind.parse(kind)
    return p * (p + 2) if kind is TRIANGLE else 2 * p * (p + 1)


@dataclass(frozen=True, eq=False)
class ReferenceBasis:
    """Basis of the RT space of order ``p`` on K.

    ``coeffs[f, c, :]`` are the modal coefficients (degree ``p``) of the
    component ``c`` of function ``f``.  Edge function ``edge_dofs[e][k]`` has
    normal trace ``L_k(2 sigma - 1)`` on edge ``e`` and zero normal trace on
    the other edges; interior functions have zero normal trace and are
    L2-orthonormal.
    """

    kind: ElementKind
    order: int
    modal: ModalBasis
    coeffs: np.ndarray
    edge_dofs: tuple
    interior_dofs: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return self.coeffs.shape[0]

    @property
    def flat(self):
        return self.coeffs.reshape(len(self), -1)

    def mass(self):
        if "mass" not in self._cache:
            self._cache["mass"] = self.flat @ self.flat.T
        return self._cache["mass"]

    def eval(self, pts, check=False):
        """Values (nfun, npts, 2) and divergences (nfun, npts)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if check and not self.kind.contains(pts).all():
            raise OutOfDomainError("points outside the reference element")
        V, Dx, Dy = self.modal.eval(pts)
        cx, cy = self.coeffs[:, 0, :], self.coeffs[:, 1, :]
        vals = np.stack([cx @ V.T, cy @ V.T], axis=-1)
        div = cx @ Dx.T + cy @ Dy.T
        return vals, div

    def coords_of_modal(self, vec_coeffs):
        """RT coordinates of fields given by modal coefficients (..., 2, nmodal).

        Exact for fields inside the RT space (L2 projection otherwise).
        """
        v = np.asarray(vec_coeffs).reshape(-1, self.flat.shape[1])
        return np.linalg.solve(self.mass(), self.flat @ v.T).T

    def coords_of(self, fn, n_quad=None):
        """RT coordinates of the L2 projection of ``fn(pts) -> (npts, 2)``."""
        mc = self.modal.project(fn, n_quad or self.order + 4)  # (nmodal, 2)
        return self.coords_of_modal(mc.T[None])[0]

    def to_dict(self):
        """JSON-ready dump; monomial coefficients in graded lexicographic order."""
        mono = monomial_table(self.kind, self.order)
        return {
            "kind": self.kind.value,
            "p": self.order,
            "monomials": [list(m) for m in mono["exponents"]],
            "functions": [
                {
                    "coeffs_x": (mono["from_modal"] @ self.coeffs[f, 0]).tolist(),
                    "coeffs_y": (mono["from_modal"] @ self.coeffs[f, 1]).tolist(),
                }
                for f in range(len(self))
            ],
            "edge_dofs": [list(e) for e in self.edge_dofs],
            "interior_dofs": list(self.interior_dofs),
        }

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def monomial_exponents(kind, degree):
    kind = ElementKind.parse(kind)
    if kind is TRIANGLE:
        return [(d - b, b) for d in range(degree + 1) for b in range(d + 1)]
    return [(a, b) for d in range(2 * degree + 1) for b in range(d + 1)
            for a in [d - b] if a <= degree and b <= degree]


@lru_cache(maxsize=None)
def monomial_table(kind, degree):
    kind = ElementKind.parse(kind)
    exps = monomial_exponents(kind, degree)
    modal = modal_basis(kind, degree)
    pts, _ = kind.rule(degree + 3)
    M = np.column_stack([pts[:, 0] ** a * pts[:, 1] ** b for a, b in exps])
    V, _, _ = modal.eval(pts)
    from_modal, *_ = np.linalg.lstsq(M, V, rcond=None)
    return {"exponents": exps, "from_modal": from_modal}


def _edge_moments(kind, modal, vec_coeffs, n_moments):
    """Legendre moments of the normal traces; shape (nvec, nedges, n_moments)."""
    sig, w = quad.gauss01(modal.degree + n_moments + 2)
    P, _ = legendre01(n_moments - 1, sig)
    out = np.empty((vec_coeffs.shape[0], kind.n_edges, n_moments))
    for e in range(kind.n_edges):
        V, _, _ = modal.eval(kind.edge_points(e, sig))
        nrm = kind.normal(e)
        tr = (vec_coeffs[:, 0, :] * nrm[0] + vec_coeffs[:, 1, :] * nrm[1]) @ V.T
        out[:, e, :] = (tr * w) @ P.T
    return out


def _rt_generators(kind, p):
    modal = modal_basis(kind, p)
    nm = len(modal)
    gens = []
    if kind is TRIANGLE:
        low = [c for c in range(nm) if modal.total_degree(c) <= p - 1]
        top = [c for c in range(nm) if modal.total_degree(c) == p - 1]
        for c in low:
            for comp in range(2):
                g = np.zeros((2, nm))
                g[comp, c] = 1.0
                gens.append(g)
        ctr = kind.centroid
        for c in top:
            def fn(pts, c=c):
                V, _, _ = modal.eval(pts)
                return (pts - ctr) * V[:, c:c + 1]
            gens.append(modal.project(fn, p + 3).T)
    else:
        for c, (i, j) in enumerate(modal.indices):
            if i <= p and j <= p - 1:
                g = np.zeros((2, nm))
                g[0, c] = 1.0
                gens.append(g)
            if i <= p - 1 and j <= p:
                g = np.zeros((2, nm))
                g[1, c] = 1.0
                gens.append(g)
    return modal, np.array(gens)


@lru_cache(maxsize=None)
def rt_basis(kind, p):
    """Raviart-Thomas basis of order ``p`` split into edge and interior functions."""
    kind = ElementKind.parse(kind)
    p = int(p)
    if p < 1 or p > MAX_ORDER:
        raise InvalidDegreeError(f"RT order must be in 1..{MAX_ORDER}, got {p}")
    modal, gens = _rt_generators(kind, p)
    nm = len(modal)
    G = gens.reshape(len(gens), -1)
    U, S, _ = np.linalg.svd(G.T, full_matrices=False)
    rank = int((S > 1e-10 * S[0]).sum())
    if rank != rt_dimension(kind, p):
        raise np.linalg.LinAlgError(f"RT generator rank {rank} != {rt_dimension(kind, p)}")
    U = U[:, :rank]  # orthonormal columns in flattened modal coordinates
    N = _edge_moments(kind, modal, U.T.reshape(rank, 2, nm), p).reshape(rank, -1).T
    _, s, vt = np.linalg.svd(N)
    n_int = rank - kind.n_edges * p
    Z = vt[kind.n_edges * p:].T  # null space of the trace map
    if n_int != Z.shape[1] or (len(s) and s[-1] < 1e-10 * s[0]):
        raise np.linalg.LinAlgError("normal trace map is not surjective")
    targets = np.zeros((kind.n_edges * p, kind.n_edges * p))
    for e in range(kind.n_edges):
        for k in range(p):
            targets[e * p + k, e * p + k] = 1.0 / (2 * k + 1)
    W = np.linalg.lstsq(N, targets, rcond=None)[0]  # min-norm => orthogonal to Z
    funcs = np.concatenate([(U @ W).T, (U @ Z).T], axis=0)
    edge_dofs = tuple(tuple(range(e * p, (e + 1) * p)) for e in range(kind.n_edges))
    interior = tuple(range(kind.n_edges * p, rank))
    return ReferenceBasis(kind, p, modal, funcs.reshape(-1, 2, nm), edge_dofs, interior)


def eval_rt(basis, points):
    """Evaluate all basis functions; raises OutOfDomainError outside K."""
    return basis.eval(points, check=True)


def edge_normal_trace(basis, fn_index, edge_index):
    """Normal trace of one basis function on one edge as a Legendre series in sigma."""
    if not 0 <= fn_index < len(basis):
        raise IndexError(f"function index {fn_index} out of range")
    if not 0 <= edge_index < basis.kind.n_edges:
        raise IndexError(f"edge index {edge_index} out of range")
    p = basis.order
    mom = _edge_moments(basis.kind, basis.modal, basis.coeffs[fn_index:fn_index + 1], p + 1)[0, edge_index]
    coef = mom * (2 * np.arange(p + 1) + 1)
    return np.polynomial.Legendre(coef, domain=[0.0, 1.0])


def rt_lowest(kind):
    """The three/four lowest order functions with unit flux through their edge."""
    return rt_basis(kind, 1)
