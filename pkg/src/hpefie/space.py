"""Global H(div)-conforming RT spaces X_hp and coarse-to-fine embeddings."""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import Topology, child_maps
from .refelem import rt_basis


class IncompatibleSpacesError(ValueError):
    pass


class RTSpace:
    """Global RT space of order ``p`` on a mesh.

    Edge dofs come first (``p`` per active edge, Legendre traces along the
    low-to-high vertex direction), then ``n_int`` interior dofs per element.
    On open screens the boundary edges carry no dofs (zero normal trace)
    unless ``include_boundary`` is set.
    """

    def __init__(self, mesh, p, include_boundary=None):
        self.mesh = mesh
        self.p = int(p)
        self.basis = rt_basis(mesh.kind, self.p)
        if include_boundary is None:
            include_boundary = mesh.geometry.topology is Topology.CLOSED
        self.include_boundary = bool(include_boundary)
        active = ~mesh.boundary_edge if not include_boundary else np.ones(len(mesh.edges), bool)
        p = self.p
        edge_start = -np.ones(len(mesh.edges), dtype=np.int64)
        edge_start[active] = np.arange(active.sum()) * p
        n_edge = int(active.sum()) * p
        n_int = len(self.basis.interior_dofs)
        ne, nl = mesh.elements.shape
        nloc = len(self.basis)
        idx = -np.ones((ne, nloc), dtype=np.int64)
        sign = np.zeros((ne, nloc))
        for i in range(nl):
            e = mesh.element_edges[:, i]
            s = mesh.element_edge_sign[:, i]
            on = edge_start[e] >= 0
            for k, f in enumerate(self.basis.edge_dofs[i]):
                idx[on, f] = edge_start[e[on]] + k
                sign[on, f] = np.where(s[on] > 0, 1.0, -((-1.0) ** k))
        for r, f in enumerate(self.basis.interior_dofs):
            idx[:, f] = n_edge + np.arange(ne) * n_int + r
            sign[:, f] = 1.0
        self.local_to_global = idx
        self.local_sign = sign
        self.n_edge_dofs = n_edge
        self.edge_start = edge_start
        self.N = n_edge + ne * n_int

    def __repr__(self):
        return f"RTSpace(kind={self.mesh.kind.value}, level={self.mesh.level}, p={self.p}, N={self.N})"

    def local_coeffs(self, c):
        """Per-element local coefficients (ne, nloc) of a global vector."""
        c = np.asarray(c)
        out = np.zeros(self.local_to_global.shape, dtype=c.dtype if c.size else float)
        m = self.local_to_global >= 0
        out[m] = c[self.local_to_global[m]]
        return out * self.local_sign

    def gather(self, local):
        """Global vector from per-element local coefficients (shared dofs assigned, not summed)."""
        local = np.asarray(local)
        c = np.zeros(self.N, dtype=local.dtype)
        m = self.local_to_global >= 0
        c[self.local_to_global[m]] = (local * self.local_sign)[m]
        return c

    def assemble_local(self, blocks):
        """Sum element matrices (ne, nloc, nloc) into a dense global matrix."""
        A = np.zeros((self.N, self.N), dtype=blocks.dtype)
        for j in range(len(blocks)):
            m = self.local_to_global[j] >= 0
            g = self.local_to_global[j, m]
            s = self.local_sign[j, m]
            A[np.ix_(g, g)] += blocks[j][np.ix_(m, m)] * np.outer(s, s)
        return A

    def evaluate(self, c, xi):
        """Physical values (ne, npts, 3) and surface divergence (ne, npts) at reference points."""
        vals, div = self.basis.eval(xi)
        lc = self.local_coeffs(c)
        vh = np.einsum("ef,fqc->eqc", lc, vals)
        dv = lc @ div
        mesh = self.mesh
        v = np.einsum("exc,eqc->eqx", mesh.DT, vh) / mesh.J[:, None, None]
        return v, dv / mesh.J[:, None]


@dataclass
class DiscreteField:
    space: RTSpace
    coeffs: np.ndarray

    def evaluate(self, xi):
        return self.space.evaluate(self.coeffs, xi)


@lru_cache(maxsize=None)
def _local_transfer(kind, pc, pf, child):
    """RT_pf coordinates of the RT_pc basis restricted to a child (child=None: same element)."""
    bc = rt_basis(kind, pc)
    bf = rt_basis(kind, pf)
    if child is None:
        c0, M = np.zeros(2), np.eye(2)
    else:
        c0, M = child_maps(kind)[child]
    det = np.linalg.det(M)
    Minv = np.linalg.inv(M)

    def fn(pts):
        vals, _ = bc.eval(c0 + pts @ M.T)
        return det * np.einsum("ij,fqj->qfi", Minv, vals).reshape(len(pts), -1)

    mc = bf.modal.project(fn, pf + 3)  # (nmodal, nfun_c * 2)
    mc = mc.reshape(len(bf.modal), len(bc), 2).transpose(1, 2, 0)
    return bf.coords_of_modal(mc).T  # (nloc_f, nloc_c)


def _one_step(coarse, fine):
    """Sparse embedding matrix for one refinement level at equal order, or order change."""
    mc, mf = coarse.mesh, fine.mesh
    rows, cols, vals = [], [], []
    if mf is mc:
        pairs = [(j, j, None) for j in range(mc.n_elements)]
    else:
        if mf.parents is None or mf.level != mc.level + 1 or mf.geometry is not mc.geometry:
            raise IncompatibleSpacesError("fine mesh is not a refinement of the coarse mesh")
        pairs = [(j, int(pa), int(ci)) for j, (pa, ci) in enumerate(mf.parents)]
    seen = set()
    for jf, jc, child in pairs:
        L = _local_transfer(mc.kind, coarse.p, fine.p, child)
        gf, sf = fine.local_to_global[jf], fine.local_sign[jf]
        gc, sc = coarse.local_to_global[jc], coarse.local_sign[jc]
        for a in range(len(gf)):
            if gf[a] < 0 or gf[a] in seen:
                continue
            seen.add(gf[a])
            for b in range(len(gc)):
                if gc[b] < 0 or abs(L[a, b]) < 1e-14:
                    continue
                rows.append(gf[a])
                cols.append(gc[b])
                vals.append(sf[a] * sc[b] * L[a, b])
    return sp.csr_matrix((vals, (rows, cols)), shape=(fine.N, coarse.N))


def embedding(coarse, fine):
    """Sparse matrix E with coarse function c equal to fine function E c.

    ``fine.mesh`` must be a uniform refinement (any depth) of ``coarse.mesh``
    and ``fine.p >= coarse.p``.
    """
    if fine.p < coarse.p:
        raise IncompatibleSpacesError("fine order is lower than coarse order")
    if coarse.include_boundary and not fine.include_boundary:
        raise IncompatibleSpacesError("boundary dofs cannot be dropped")
    chain = []
    m = fine.mesh
    while m.level > coarse.mesh.level:
        chain.append(m)
        m = getattr(m, "coarse_parent", None)
        if m is None:
            break
    if fine.mesh is coarse.mesh:
        return _one_step(coarse, fine)
    if not chain or chain[-1].coarse_parent is not coarse.mesh:
        raise IncompatibleSpacesError("fine mesh is not a refinement of the coarse mesh")
    E = None
    cur = coarse
    if fine.p != coarse.p:
        cur = RTSpace(coarse.mesh, fine.p, fine.include_boundary)
        E = _one_step(coarse, cur)
    for mm in reversed(chain):
        nxt = fine if mm is fine.mesh else RTSpace(mm, fine.p, fine.include_boundary)
        step = _one_step(cur, nxt)
        E = step if E is None else step @ E
        cur = nxt
    return E
