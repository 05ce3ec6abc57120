"""Piecewise-plane surfaces, affine meshes and Piola transforms.

A mesh is a conforming set of triangles or parallelograms, all of one kind,
each the affine image ``x = b_j + DT_j xi`` of the reference element.  The
3x2 matrix ``DT_j`` maps reference vectors into the face plane; ``J_j`` is
the area ratio ``|a_1 x a_2|``.  Elements are oriented counter-clockwise
with respect to the face normal, so a shared edge is traversed in opposite
directions by its two elements.
"""
import enum
import json
from dataclasses import dataclass, field

import numpy as np

from .refelem import SQUARE, TRIANGLE, ElementKind

FORMAT_VERSION = 1
_B_TRI = np.array([[1.0, 0.5], [0.0, np.sqrt(3.0) / 2]])
_B_TRI_INV = np.linalg.inv(_B_TRI)


class GeometryError(ValueError):
    pass


class ConformityError(RuntimeError):
    pass


class Topology(enum.Enum):
    CLOSED = "closed"
    OPEN = "open"


@dataclass(frozen=True, eq=False)
class SurfaceGeometry:
    name: str
    vertices: np.ndarray
    faces: tuple  # tuples of vertex ids, CCW about the face normal
    normals: np.ndarray
    topology: Topology
    face_edges: dict = field(default_factory=dict)  # sorted vertex pair -> faces

    def __post_init__(self):
        edges = {}
        for f, loop in enumerate(self.faces):
            n = self.normals[f]
            pts = self.vertices[list(loop)]
            if np.abs((pts - pts[0]) @ n).max() > 1e-12:
                raise GeometryError(f"face {f} is not planar")
            for i in range(len(loop)):
                a, b = loop[i], loop[(i + 1) % len(loop)]
                edges.setdefault((min(a, b), max(a, b)), []).append(f)
        self.face_edges.update({k: tuple(v) for k, v in edges.items()})
        counts = {len(v) for v in edges.values()}
        if self.topology is Topology.CLOSED and counts != {2}:
            raise GeometryError("closed surface must have every edge shared by two faces")
        if self.topology is Topology.OPEN and not counts <= {1, 2}:
            raise GeometryError("screen edges are shared by at most two faces")

    @property
    def boundary_edges(self):
        return [e for e, f in self.face_edges.items() if len(f) == 1]

    @property
    def shared_edges(self):
        return [e for e, f in self.face_edges.items() if len(f) == 2]

    def tangent(self, edge, face):
        """Unit tangent tau of a shared edge, oriented CCW about ``face``."""
        loop = self.faces[face]
        a, b = edge
        for i in range(len(loop)):
            if {loop[i], loop[(i + 1) % len(loop)]} == {a, b}:
                t = self.vertices[loop[(i + 1) % len(loop)]] - self.vertices[loop[i]]
                return t / np.linalg.norm(t)
        raise KeyError(edge)

    def face_frame(self, face):
        """Orthonormal in-plane frame (e1, e2) of a face with e1 x e2 = normal."""
        loop = self.faces[face]
        e1 = self.vertices[loop[1]] - self.vertices[loop[0]]
        e1 = e1 / np.linalg.norm(e1)
        return e1, np.cross(self.normals[face], e1)


def preset_surface(name):
    """UnitScreen, LScreen (three coplanar unit squares) or Cube (boundary of (0,1)^3)."""
    key = str(name).lower().replace("_", "").replace("-", "")
    if key == "unitscreen":
        v = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], float)
        return SurfaceGeometry("UnitScreen", v, ((0, 1, 2, 3),), np.array([[0.0, 0, 1]]), Topology.OPEN)
    if key == "lscreen":
        v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0], [1, 1, 0], [2, 1, 0],
                      [0, 2, 0], [1, 2, 0]], float)
        faces = ((0, 1, 4, 3), (1, 2, 5, 4), (3, 4, 7, 6))
        return SurfaceGeometry("LScreen", v, faces, np.tile([0.0, 0, 1], (3, 1)), Topology.OPEN)
    if key == "cube":
        v = np.array([[x, y, z] for z in (0, 1) for y in (0, 1) for x in (0, 1)], float)
        # vertex id = x + 2y + 4z; loops CCW seen from outside
        faces = ((0, 2, 3, 1), (4, 5, 7, 6), (0, 1, 5, 4), (2, 6, 7, 3), (0, 4, 6, 2), (1, 3, 7, 5))
        normals = np.array([[0, 0, -1], [0, 0, 1], [0, -1, 0], [0, 1, 0], [-1, 0, 0], [1, 0, 0]], float)
        return SurfaceGeometry("Cube", v, faces, normals, Topology.CLOSED)
    raise KeyError(f"unknown preset {name!r}")


@dataclass(frozen=True)
class ElementMap:
    kind: ElementKind
    matrix: np.ndarray  # DT, 3x2
    translation: np.ndarray
    jacobian: float
    diameter: float
    inradius: float  # diameter of the inscribed ball
    face: int

    def map(self, xi):
        return self.translation + np.atleast_2d(xi) @ self.matrix.T

    def inverse(self, x):
        return (np.atleast_2d(x) - self.translation) @ np.linalg.pinv(self.matrix).T


def piola_push(emap, values, div=None):
    """Reference values (npts, 2) -> physical tangential values (npts, 3)."""
    if abs(emap.jacobian) < 1e-300:
        raise GeometryError("singular element map")
    v = np.asarray(values) @ emap.matrix.T / emap.jacobian
    if div is None:
        return v
    return v, np.asarray(div) / emap.jacobian


def piola_pull(emap, values, div=None):
    """Physical tangential values (npts, 3) -> reference values (npts, 2)."""
    if abs(emap.jacobian) < 1e-300:
        raise GeometryError("singular element map")
    vh = emap.jacobian * (np.asarray(values) @ np.linalg.pinv(emap.matrix).T)
    if div is None:
        return vh
    return vh, np.asarray(div) * emap.jacobian


def _element_geometry(kind, pts):
    if kind is TRIANGLE:
        E = np.stack([pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0]], axis=-1)
        DT = E @ _B_TRI_INV
    else:
        DT = np.stack([pts[:, 1] - pts[:, 0], pts[:, 3] - pts[:, 0]], axis=-1)
        if np.abs(pts[:, 2] - pts[:, 1] - pts[:, 3] + pts[:, 0]).max() > 1e-12:
            raise GeometryError("square elements require parallelogram faces")
    cr = np.cross(DT[:, :, 0], DT[:, :, 1])
    J = np.linalg.norm(cr, axis=1)
    nv = pts.shape[1]
    diam = np.zeros(len(pts))
    for i in range(nv):
        for j in range(i + 1, nv):
            diam = np.maximum(diam, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
    sides = np.stack([np.linalg.norm(pts[:, (i + 1) % nv] - pts[:, i], axis=1) for i in range(nv)], 1)
    if kind is TRIANGLE:
        area = J * np.sqrt(3.0) / 4
        rho = 4 * area / sides.sum(axis=1)
    else:
        rho = J / np.maximum(sides[:, 0], sides[:, 1])
    return DT, J, diam, rho, cr / J[:, None]


class SurfaceMesh:
    """Conforming single-kind mesh of a surface with global oriented edges."""

    def __init__(self, geometry, kind, vertices, elements, faces, level=0, parents=None):
        self.geometry = geometry
        self.kind = ElementKind.parse(kind)
        self.vertices = np.asarray(vertices, float)
        self.elements = np.asarray(elements, dtype=np.int64)
        self.element_face = np.asarray(faces, dtype=np.int64)
        self.level = level
        # (parent element, child index) in the previous level, if refined
        self.parents = parents
        self.coarse_parent = None
        pts = self.vertices[self.elements]
        self.origin = pts[:, 0].copy()
        self.DT, self.J, self.diam, self.rho, nrm = _element_geometry(self.kind, pts)
        if np.abs(nrm - geometry.normals[self.element_face]).max() > 1e-9:
            raise GeometryError("element orientation disagrees with face normal")
        self.normals = nrm
        self.h = float(self.diam.max())
        self._build_edges()

    def _build_edges(self):
        ne, nl = self.elements.shape
        ids = {}
        self.element_edges = np.zeros((ne, nl), dtype=np.int64)
        self.element_edge_sign = np.zeros((ne, nl), dtype=np.int64)
        incid = []
        for j in range(ne):
            for i in range(nl):
                a, b = self.elements[j, i], self.elements[j, (i + 1) % nl]
                key = (min(a, b), max(a, b))
                if key not in ids:
                    ids[key] = len(ids)
                    incid.append([])
                e = ids[key]
                self.element_edges[j, i] = e
                self.element_edge_sign[j, i] = 1 if a < b else -1
                incid[e].append((j, i, self.element_edge_sign[j, i]))
        self.edges = np.array(sorted(ids, key=ids.get), dtype=np.int64).reshape(-1, 2)
        self.edge_incidences = [tuple(x) for x in incid]
        self.boundary_edge = np.array([len(x) == 1 for x in incid])

    @property
    def n_elements(self):
        return len(self.elements)

    def element_map(self, j):
        return ElementMap(self.kind, self.DT[j], self.origin[j], float(self.J[j]),
                          float(self.diam[j]), float(self.rho[j]), int(self.element_face[j]))

    def map_points(self, j, xi):
        return self.origin[j] + np.atleast_2d(xi) @ self.DT[j].T

    def audit(self):
        """Check conformity: every edge has one or two incidences, opposite if two."""
        for e, inc in enumerate(self.edge_incidences):
            if len(inc) > 2:
                raise ConformityError(f"edge {e} has {len(inc)} incidences")
            if len(inc) == 2 and inc[0][2] != -inc[1][2]:
                raise ConformityError(f"edge {e} is traversed in the same direction twice")
            if len(inc) == 1 and self.geometry.topology is Topology.CLOSED:
                raise ConformityError(f"closed surface has boundary edge {e}")
        return True

    def to_dict(self):
        g = self.geometry
        return {
            "format_version": FORMAT_VERSION,
            "preset": g.name,
            "level": self.level,
            "vertices": self.vertices.tolist(),
            "faces": [{"loop": list(map(int, loop)), "normal": g.normals[f].tolist()}
                      for f, loop in enumerate(g.faces)],
            "elements": [{"face": int(self.element_face[j]), "kind": self.kind.value,
                          "vertex_ids": self.elements[j].tolist()} for j in range(self.n_elements)],
        }

    def dump_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def load_mesh(path_or_dict):
    d = path_or_dict
    if not isinstance(d, dict):
        with open(d) as fh:
            d = json.load(fh)
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported mesh format version")
    try:
        geom = preset_surface(d["preset"])
    except (KeyError, TypeError):
        topo = Topology.OPEN
        faces = tuple(tuple(f["loop"]) for f in d["faces"])
        counts = {}
        for loop in faces:
            for i in range(len(loop)):
                k = tuple(sorted((loop[i], loop[(i + 1) % len(loop)])))
                counts[k] = counts.get(k, 0) + 1
        if all(c == 2 for c in counts.values()):
            topo = Topology.CLOSED
        nv = 1 + max(max(loop) for loop in faces)
        geom = SurfaceGeometry("custom", np.asarray(d["vertices"])[:nv], faces,
                               np.array([f["normal"] for f in d["faces"]]), topo)
    els = d["elements"]
    return SurfaceMesh(geom, els[0]["kind"], d["vertices"], [e["vertex_ids"] for e in els],
                       [e["face"] for e in els], level=d.get("level", 0))


def initial_mesh(geom, kind):
    kind = ElementKind.parse(kind)
    elements, faces = [], []
    for f, loop in enumerate(geom.faces):
        if kind is SQUARE:
            if len(loop) != 4:
                raise GeometryError(f"face {f} is not a quadrilateral")
            elements.append(list(loop))
            faces.append(f)
        else:
            # fan from the first vertex; for squares this is the (0,0)-(1,1) diagonal
            for i in range(1, len(loop) - 1):
                elements.append([loop[0], loop[i], loop[i + 1]])
                faces.append(f)
    return SurfaceMesh(geom, kind, geom.vertices, elements, faces, level=0)


def refine_uniform(mesh):
    """Split every element into four congruent children."""
    verts = [v for v in mesh.vertices]
    mids = {}

    def mid(a, b):
        key = (min(a, b), max(a, b))
        if key not in mids:
            mids[key] = len(verts)
            verts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        return mids[key]

    elements, faces, parents = [], [], []
    for j, el in enumerate(mesh.elements):
        f = mesh.element_face[j]
        if mesh.kind is TRIANGLE:
            v0, v1, v2 = el
            m01, m12, m20 = mid(v0, v1), mid(v1, v2), mid(v2, v0)
            kids = [(v0, m01, m20), (m01, v1, m12), (m20, m12, v2), (m12, m20, m01)]
        else:
            v0, v1, v2, v3 = el
            m01, m12, m23, m30 = mid(v0, v1), mid(v1, v2), mid(v2, v3), mid(v3, v0)
            c = len(verts)
            verts.append(mesh.vertices[el].mean(axis=0))
            kids = [(v0, m01, c, m30), (m01, v1, m12, c), (c, m12, v2, m23), (m30, c, m23, v3)]
        for i, k in enumerate(kids):
            elements.append(list(k))
            faces.append(f)
            parents.append((j, i))
    fine = SurfaceMesh(mesh.geometry, mesh.kind, np.array(verts), elements, faces,
                       level=mesh.level + 1, parents=np.array(parents))
    fine.coarse_parent = mesh
    return fine


def build_mesh(preset, kind, level):
    m = initial_mesh(preset_surface(preset) if isinstance(preset, str) else preset, kind)
    for _ in range(level):
        m = refine_uniform(m)
    return m


def child_maps(kind):
    """Affine maps A_i(xi) = c_i + M_i xi with T_child = T_parent o A_i, per child index."""
    kind = ElementKind.parse(kind)
    V = kind.vertices
    if kind is TRIANGLE:
        m01, m12, m20 = (V[0] + V[1]) / 2, (V[1] + V[2]) / 2, (V[2] + V[0]) / 2
        kids = [(V[0], m01, m20), (m01, V[1], m12), (m20, m12, V[2]), (m12, m20, m01)]
        out = []
        for a, b, c in kids:
            M = np.column_stack([b - a, c - a]) @ _B_TRI_INV
            out.append((a, M))
        return out
    c = V.mean(axis=0)
    m01, m12, m23, m30 = (V[0] + V[1]) / 2, (V[1] + V[2]) / 2, (V[2] + V[3]) / 2, (V[3] + V[0]) / 2
    kids = [(V[0], m01, c, m30), (m01, V[1], m12, c), (c, m12, V[2], m23), (m30, c, m23, V[3])]
    return [(a, np.column_stack([b - a, d - a])) for a, b, _, d in kids]


def regularity_report(mesh):
    hj = mesh.diam
    return {
        "max_h_over_rho": float((hj / mesh.rho).max()),
        "max_h_over_hj": float((mesh.h / hj).max()),
        "h": mesh.h,
        "n_elements": mesh.n_elements,
        "jacobian_h2_min": float((mesh.J / hj ** 2).min()),
        "jacobian_h2_max": float((mesh.J / hj ** 2).max()),
    }
