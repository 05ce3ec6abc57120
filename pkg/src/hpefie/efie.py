"""Galerkin EFIE (Rumsey form) on RT spaces with singular quadrature.

    a(u, v) = <Psi_k div u, div v> - k^2 <Psi_k u, v>,
    Psi_k w(x) = int G_k(x, y) w(y) dS_y,   G_k = exp(i k r) / (4 pi r).

Element pairs sharing at least one vertex are split into triangles and
integrated with the Sauter-Schwab regularising transformations; other pairs
use tensor/collapsed Gauss rules whose order grows for nearby pairs.  Only
pairs K <= L are integrated and the matrix is mirrored, so A is exactly
complex symmetric.
"""
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import quadrature as quad
from .refelem import SQUARE, TRIANGLE
from .space import DiscreteField, RTSpace, embedding

K_MAX = 10.0
DOF_MAP_VERSION = 1


class AssemblyError(RuntimeError):
    pass


class SolveError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class QuadratureConfig:
    singular_order: int = 8
    near_extra: int = 6
    far_extra: int = 4
    near_factor: float = 2.0  # pairs with centroid distance < near_factor * h are "near"

    singular_p_extra: int = 6  # order >= (polynomial degree on a sub-triangle) + this

    def singular(self, p, kind=TRIANGLE):
        # RT_p on Q restricted to a sub-triangle has total degree 2p - 1
        degree = p if kind is TRIANGLE else 2 * p - 1
        return max(self.singular_order, degree + self.singular_p_extra)


@dataclass
class WaveProblem:
    mesh: object
    p: int
    k: float = 1.0
    excitation: object = None  # callable x (n,3) -> complex tangential field (n,3)
    include_boundary: object = None
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)

    def __post_init__(self):
        if not 0.0 <= self.k <= K_MAX:
            raise ValueError(f"wavenumber must lie in [0, {K_MAX}]")


@dataclass
class DenseSystem:
    A: np.ndarray
    b: np.ndarray
    space: RTSpace
    k: float
    A_div: np.ndarray = None
    A_vec: np.ndarray = None

    @property
    def N(self):
        return self.space.N


# ----------------------------------------------------------------------------
# Sauter-Schwab rules on the unit right triangle


@lru_cache(maxsize=None)
def sauter_schwab(order, case):
    """Points (test, trial) on {s,t >= 0, s+t <= 1} and weights for a singular case.

    case 3: identical triangles; 2: common edge from vertex 0 to vertex 1 in
    both; 1: common vertex 0.  Weights integrate over the product of unit
    right triangles (total 1/4).
    """
    g, gw = quad.gauss01(order)
    X = np.array(np.meshgrid(g, g, g, g, indexing="ij")).reshape(4, -1)
    W = np.einsum("a,b,c,d->abcd", gw, gw, gw, gw).ravel()
    xi, e1, e2, e3 = X
    e12, e123 = e1 * e2, e1 * e2 * e3
    tests, trials, weights = [], [], []
    if case == 3:
        w = W * xi ** 3 * e1 ** 2 * e2
        regions = [
            ((xi, xi * (1 - e1 + e12)), (xi * (1 - e123), xi * (1 - e1))),
            ((xi * (1 - e123), xi * (1 - e1)), (xi, xi * (1 - e1 + e12))),
            ((xi, xi * (e1 - e12 + e123)), (xi * (1 - e12), xi * (e1 - e12))),
            ((xi * (1 - e12), xi * (e1 - e12)), (xi, xi * (e1 - e12 + e123))),
            ((xi * (1 - e123), xi * (e1 - e123)), (xi, xi * (e1 - e12))),
            ((xi, xi * (e1 - e12)), (xi * (1 - e123), xi * (e1 - e123))),
        ]
        for a, b in regions:
            tests.append(a)
            trials.append(b)
            weights.append(w)
    elif case == 2:
        w = W * xi ** 3 * e1 ** 2
        regions = [
            ((xi, xi * e1 * e3), (xi * (1 - e12), xi * e1 * (1 - e2)), w),
            ((xi, xi * e1), (xi * (1 - e123), xi * e12 * (1 - e3)), w * e2),
            ((xi * (1 - e12), xi * e1 * (1 - e2)), (xi, xi * e123), w * e2),
            ((xi * (1 - e123), xi * e12 * (1 - e3)), (xi, xi * e1), w * e2),
            ((xi * (1 - e123), xi * e1 * (1 - e2 * e3)), (xi, xi * e12), w * e2),
        ]
        for a, b, ww in regions:
            tests.append(a)
            trials.append(b)
            weights.append(ww)
    elif case == 1:
        # the vertex rule uses (xi, eta1) for the test and (eta2, eta3) for the trial
        xi_, a1, a2, a3 = X
        w = W * xi_ ** 3 * a2
        tests += [(xi_, xi_ * a1), (xi_ * a2, xi_ * a2 * a3)]
        trials += [(xi_ * a2, xi_ * a2 * a3), (xi_, xi_ * a1)]
        weights += [w, w]
    else:
        raise ValueError(case)

    def to_unit(pts):
        x1, x2 = pts
        return np.column_stack([x1 - x2, x2])

    return (np.concatenate([to_unit(t) for t in tests]),
            np.concatenate([to_unit(t) for t in trials]),
            np.concatenate(weights))


def _subtriangles(kind):
    """Reference-coordinate corners and local vertex indices of the triangles of K."""
    V = kind.vertices
    if kind is TRIANGLE:
        return [((0, 1, 2), V[[0, 1, 2]])]
    return [((0, 1, 2), V[[0, 1, 2]]), ((0, 2, 3), V[[0, 2, 3]])]


def _order_shared(ta, tb):
    """Permutations putting shared global vertices first (same order in both)."""
    shared = [v for v in ta if v in tb]
    pa = [ta.index(v) for v in shared] + [i for i, v in enumerate(ta) if v not in shared]
    pb = [tb.index(v) for v in shared] + [i for i, v in enumerate(tb) if v not in shared]
    if len(shared) == 2:
        # keep test orientation; the trial edge must run in the same direction
        pass
    return len(shared), pa, pb


PATTERN_CACHE_BYTES = 600 * 2 ** 20  # basis tables of singular rules kept across element pairs
PATTERN_CHUNK = 16384  # quadrature points per basis table when tables are not cached
_pattern_cache = {}
_pattern_bytes = [0]


@lru_cache(maxsize=None)
def _singular_points(kind, order, sa, pa, sb, pb, case):
    """Reference points (test, trial) and weights for one sub-triangle pairing."""
    subs = _subtriangles(kind)
    Ca = subs[sa][1][list(pa)]
    Cb = subs[sb][1][list(pb)]
    if case == 0:
        r, w = quad._collapsed_unit_triangle(order)
        n = len(w)
        ta = np.repeat(r, n, axis=0)
        tb = np.tile(r, (n, 1))
        ww = np.outer(w, w).ravel()
    else:
        ta, tb, ww = sauter_schwab(order, case)
    xa = Ca[0] + ta[:, :1] * (Ca[1] - Ca[0]) + ta[:, 1:] * (Ca[2] - Ca[0])
    xb = Cb[0] + tb[:, :1] * (Cb[1] - Cb[0]) + tb[:, 1:] * (Cb[2] - Cb[0])
    da = abs(_cross2(Ca[1] - Ca[0], Ca[2] - Ca[0]))
    db = abs(_cross2(Cb[1] - Cb[0], Cb[2] - Cb[0]))
    return xa, xb, ww * da * db


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _singular_pattern(kind, p, order, sa, pa, sb, pb, case):
    """Chunks (sl, va, diva, vb, divb) of basis values on a singular rule.

    Tables are cached while they fit in PATTERN_CACHE_BYTES; larger rules
    are evaluated chunk by chunk on every call to bound peak memory.
    """
    from .refelem import rt_basis

    key = (kind, p, order, sa, pa, sb, pb, case)
    hit = _pattern_cache.get(key)
    if hit is not None:
        yield from hit
        return
    basis = rt_basis(kind, p)
    xa, xb, _ = _singular_points(kind, order, sa, pa, sb, pb, case)
    size = 6 * len(basis) * len(xa) * 8
    keep = _pattern_bytes[0] + size <= PATTERN_CACHE_BYTES
    step = len(xa) if keep else PATTERN_CHUNK
    chunks = []
    for a in range(0, len(xa), step):
        sl = slice(a, min(a + step, len(xa)))
        va, diva = basis.eval(xa[sl])
        vb, divb = basis.eval(xb[sl])
        item = (sl, va, diva, vb, divb)
        if keep:
            chunks.append(item)
        yield item
    if keep:
        _pattern_cache[key] = chunks
        _pattern_bytes[0] += size


def _kernel(r, k):
    if k == 0:
        return 1.0 / (4 * np.pi * r)
    return np.exp(1j * k * r) / (4 * np.pi * r)


def _singular_block(mesh, p, K, L, k, order):
    from .refelem import rt_basis

    kind = mesh.kind
    subs = _subtriangles(kind)
    dt = complex if k else float
    nloc = len(rt_basis(kind, p))
    Bd = np.zeros((nloc, nloc), dtype=dt)
    Bv = np.zeros((nloc, nloc), dtype=dt)
    M = mesh.DT[K].T @ mesh.DT[L]
    for sa, (la, _) in enumerate(subs):
        ga = tuple(int(mesh.elements[K, i]) for i in la)
        for sb, (lb, _) in enumerate(subs):
            gb = tuple(int(mesh.elements[L, i]) for i in lb)
            case, pa, pb = _order_shared(ga, gb)
            key = (kind, order, sa, tuple(pa), sb, tuple(pb), case)
            xa, xb, w = _singular_points(*key)
            X = mesh.origin[K] + xa @ mesh.DT[K].T
            Y = mesh.origin[L] + xb @ mesh.DT[L].T
            g_all = w * _kernel(np.linalg.norm(X - Y, axis=1), k)
            for sl, va, diva, vb, divb in _singular_pattern(kind, p, *key[1:]):
                g = g_all[sl]
                Bd += (diva * g) @ divb.T
                vbM = np.einsum("cd,gqd->gqc", M, vb)
                Bv += (va * g[None, :, None]).reshape(len(va), -1) @ vbM.reshape(len(vb), -1).T
    return Bd, Bv


def _touching(mesh):
    """For each element, the set of elements sharing at least one vertex."""
    vert_elems = {}
    for j, el in enumerate(mesh.elements):
        for v in el:
            vert_elems.setdefault(int(v), set()).add(j)
    return [set().union(*(vert_elems[int(v)] for v in el)) for el in mesh.elements]


def assemble_blocks(space, k, quadrature=None):
    """Global matrices (A_div, A_vec) with A = A_div - k^2 A_vec."""
    qc = quadrature or QuadratureConfig()
    mesh = space.mesh
    kind = mesh.kind
    p = space.p
    basis = space.basis
    ne = mesh.n_elements
    nloc = len(basis)
    dt = complex if k else float
    Ad = np.zeros((ne * nloc, ne * nloc), dtype=dt)
    Av = np.zeros_like(Ad)
    touch = _touching(mesh)
    centroids = mesh.origin + kind.centroid @ mesh.DT.transpose(0, 2, 1)
    rules = {}
    for tag, n in (("far", p + qc.far_extra), ("near", p + qc.near_extra)):
        pts, w = kind.rule(n)
        vals, div = basis.eval(pts)
        X = mesh.origin[:, None, :] + np.einsum("jxc,qc->jqx", mesh.DT, pts)
        # physical weighted basis: DT b_hat w (the Jacobians cancel)
        V = np.einsum("jxc,fqc,q->jfqx", mesh.DT, vals, w)
        D = div * w
        rules[tag] = (X, V, D)
    sing_order = qc.singular(p, kind)
    for K in range(ne):
        Ls = np.arange(K, ne)
        tmask = np.array([L in touch[K] for L in Ls])
        dist = np.linalg.norm(centroids[Ls] - centroids[K], axis=1)
        near = (dist < qc.near_factor * mesh.h) & ~tmask
        far = ~near & ~tmask
        for tag, sel in (("far", far), ("near", near)):
            Lsel = Ls[sel]
            if not len(Lsel):
                continue
            X, V, D = rules[tag]
            r = np.linalg.norm(X[K][None, :, None, :] - X[Lsel][:, None, :, :], axis=-1)
            G = _kernel(r, k)  # (nL, nqx, nqy)
            bd = np.matmul(np.matmul(D, G), D.T)
            GV = np.einsum("lqr,lgrx->lgqx", G, V[Lsel], optimize=True)
            bv = np.einsum("fqx,lgqx->lfg", V[K], GV, optimize=True)
            _scatter(Ad, Av, K, Lsel, bd, bv, nloc)
        for L in Ls[tmask]:
            bd, bv = _singular_block(mesh, p, K, int(L), k, sing_order)
            if L == K:
                bd = 0.5 * (bd + bd.T)
                bv = 0.5 * (bv + bv.T)
            _scatter(Ad, Av, K, np.array([L]), bd[None], bv[None], nloc)
    P = _local_to_global_matrix(space)
    A_div = np.asarray((P.T @ (P.T @ Ad).T).T)
    A_vec = np.asarray((P.T @ (P.T @ Av).T).T)
    # the sparse products round differently above and below the diagonal
    return 0.5 * (A_div + A_div.T), 0.5 * (A_vec + A_vec.T)


def _scatter(Ad, Av, K, Ls, bd, bv, nloc):
    rk = slice(K * nloc, (K + 1) * nloc)
    for i, L in enumerate(Ls):
        rl = slice(L * nloc, (L + 1) * nloc)
        Ad[rk, rl] = bd[i]
        Av[rk, rl] = bv[i]
        if L != K:
            Ad[rl, rk] = bd[i].T
            Av[rl, rk] = bv[i].T


def _local_to_global_matrix(space):
    idx = space.local_to_global.ravel()
    sgn = space.local_sign.ravel()
    m = idx >= 0
    rows = np.nonzero(m)[0]
    return sp.csr_matrix((sgn[m], (rows, idx[m])), shape=(len(idx), space.N))


def excitation_plane_wave(k, direction, polarization, amplitude=1.0):
    """Incident field E(x) = amplitude * polarization * exp(i k d.x)."""
    d = np.asarray(direction, float)
    pol = np.asarray(polarization, dtype=complex)
    if abs(np.linalg.norm(d) - 1) > 1e-10:
        raise ValueError("direction must be a unit vector")
    if abs(np.vdot(d, pol)) > 1e-10 * max(np.linalg.norm(pol), 1.0):
        raise ValueError("polarization must be orthogonal to the direction")

    def field(x):
        x = np.atleast_2d(x)
        return amplitude * np.exp(1j * k * (x @ d))[:, None] * pol[None, :]

    field.direction = d
    field.polarization = pol
    return field


def load_vector(space, excitation, n_quad=None):
    """b_i = int_Gamma E . b_i dS by element quadrature."""
    mesh = space.mesh
    pts, w = mesh.kind.rule(n_quad or space.p + 4)
    vals, _ = space.basis.eval(pts)
    X = mesh.origin[:, None, :] + np.einsum("jxc,qc->jqx", mesh.DT, pts)
    E = np.asarray(excitation(X.reshape(-1, 3))).reshape(mesh.n_elements, len(w), 3)
    loc = np.einsum("jqx,jxc,fqc,q->jf", E, mesh.DT, vals, w)
    P = _local_to_global_matrix(space)
    return P.T @ loc.ravel()


def assemble(problem, self_check=False):
    space = RTSpace(problem.mesh, problem.p, problem.include_boundary)
    Ad, Av = assemble_blocks(space, problem.k, problem.quadrature)
    A = Ad - problem.k ** 2 * Av
    if self_check:
        quadrature_self_check(space, problem.k, problem.quadrature)
    b = load_vector(space, problem.excitation) if problem.excitation is not None \
        else np.zeros(space.N, dtype=complex)
    return DenseSystem(A, b, space, problem.k, Ad, Av)


def quadrature_self_check(space, k, quadrature=None, fraction=0.05, seed=0, tol=1e-6):
    """Compare sampled element-pair blocks with a once-refined rule, per class.

    Returns the worst relative deviation per class; raises AssemblyError if
    any exceeds ``tol`` (relative to the largest entry of the class).
    """
    qc = quadrature or QuadratureConfig()
    mesh = space.mesh
    rng = np.random.default_rng(seed)
    touch = _touching(mesh)
    ne = mesh.n_elements
    classes = {"identical": [], "edge": [], "vertex": [], "disjoint": []}
    for K in range(ne):
        for L in range(K, ne):
            if L == K:
                classes["identical"].append((K, L))
            elif L in touch[K]:
                nshared = len(set(mesh.elements[K]) & set(mesh.elements[L]))
                classes["edge" if nshared == 2 else "vertex"].append((K, L))
            else:
                classes["disjoint"].append((K, L))
    worst = {}
    for name, pairs in classes.items():
        if not pairs:
            continue
        m = max(1, int(np.ceil(fraction * len(pairs))))
        pick = rng.choice(len(pairs), size=min(m, len(pairs)), replace=False)
        dev = 0.0
        for i in pick:
            K, L = pairs[i]
            a = _pair_block(space, K, L, k, qc, 0)
            b = _pair_block(space, K, L, k, qc, 2)
            scale = max(np.abs(b).max(), 1e-300)
            dev = max(dev, np.abs(a - b).max() / scale)
        worst[name] = dev
        if dev > tol:
            raise AssemblyError(f"{name} pair quadrature not converged: {dev:.2e} (pair {pairs[pick[0]]})")
    return worst


def _pair_block(space, K, L, k, qc, extra):
    """Combined block (div part and vector part stacked) of one element pair."""
    mesh = space.mesh
    p = space.p
    touch = L in _touching(mesh)[K]
    if touch:
        bd, bv = _singular_block(mesh, p, K, L, k, qc.singular(p, mesh.kind) + extra)
        return np.concatenate([bd, bv])
    dist = np.linalg.norm(mesh.DT[K] @ mesh.kind.centroid + mesh.origin[K]
                          - mesh.DT[L] @ mesh.kind.centroid - mesh.origin[L])
    n = p + (qc.near_extra if dist < qc.near_factor * mesh.h else qc.far_extra) + extra
    pts, w = mesh.kind.rule(n)
    vals, div = space.basis.eval(pts)
    X = mesh.origin[K] + pts @ mesh.DT[K].T
    Y = mesh.origin[L] + pts @ mesh.DT[L].T
    G = _kernel(np.linalg.norm(X[:, None] - Y[None], axis=-1), k) * np.outer(w, w)
    bd = div @ G @ div.T
    VK = np.einsum("xc,fqc->fqx", mesh.DT[K], vals)
    VL = np.einsum("xc,fqc->fqx", mesh.DT[L], vals)
    bv = np.einsum("fqx,qr,grx->fg", VK, G, VL)
    return np.concatenate([bd, bv])


def solve(system, tol=1e-10):
    """Dense LU solve; raises SolveError on singular or inaccurate solves."""
    A, b = system.A, np.asarray(system.b)
    if not np.any(b):
        return DiscreteField(system.space, np.zeros(system.N, dtype=complex))
    try:
        lu, piv = sla.lu_factor(A, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise SolveError(str(exc)) from exc
    anorm = np.abs(A).sum(axis=0).max()
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, _ = gecon(lu, anorm)
    if rcond < np.finfo(float).eps:
        raise SolveError(f"matrix is numerically singular (rcond {rcond:.2e})")
    x = sla.lu_solve((lu, piv), b)
    res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    if res > tol:
        raise SolveError(f"residual {res:.2e} exceeds {tol:.0e} (rcond {rcond:.2e})")
    out = DiscreteField(system.space, x)
    out.rcond = float(rcond)
    return out


def energy_error(u_ref, u, gram):
    """||u_ref - u||_X in the fine space of ``gram`` (u is embedded if coarser)."""
    fine = gram.space
    if u_ref.space is not fine and u_ref.space.N != fine.N:
        raise ValueError("reference field must live in the gram space")
    cu = u.coeffs
    if u.space is not fine:
        if u.space.mesh is fine.mesh and u.space.p == fine.p and u.space.N == fine.N:
            pass
        else:
            cu = embedding(u.space, fine) @ cu
    from .normx import energy_norm

    return energy_norm(u_ref.coeffs - cu, gram)


def galerkin_residual(system, u, n_tests=20, seed=0):
    """max |a(u, v) - <f, v>| / scale over random discrete test functions v."""
    rng = np.random.default_rng(seed)
    r = system.A @ u.coeffs - system.b
    worst = 0.0
    scale = max(np.linalg.norm(system.b), 1e-300)
    for _ in range(n_tests):
        v = rng.standard_normal(system.N)
        v /= np.linalg.norm(v)
        worst = max(worst, abs(v @ r) / scale)
    return worst


def write_solution(path, field, system):
    mesh = system.space.mesh
    out = {
        "dof_map_version": DOF_MAP_VERSION,
        "coeffs": [[float(c.real), float(c.imag)] for c in np.asarray(field.coeffs, dtype=complex)],
        "N": system.N,
        "h": mesh.h,
        "p": system.space.p,
        "k": system.k,
    }
    with open(path, "w") as fh:
        json.dump(out, fh)
