"""Manufactured tangential vector fields with known divergence.

A field is a pair of callables ``value(x) -> (n, d)`` and ``div(x) -> (n,)``
acting on points of dimension ``d`` (2 on a reference element, 3 on a
surface), plus the points toward which quadrature must be graded.
"""
from dataclasses import dataclass, field

import numpy as np

from .refelem import SQUARE, TRIANGLE, ElementKind


@dataclass(frozen=True)
class VectorField:
    value: object
    div: object
    singular: tuple = field(default=())
    name: str = "field"
    face_aware: bool = False  # value/div accept the face normal as a second argument

    def __call__(self, x):
        return self.value(x)

    def at(self, x, normal=None):
        """Values and divergence at points of a face with the given normal."""
        if self.face_aware and normal is not None:
            return self.value(x, normal), self.div(x, normal)
        return self.value(x), self.div(x)


def sample(field_, X, normals):
    """Values (ne, nq, 3) and divergence (ne, nq) at element points X (ne, nq, 3)."""
    ne, nq = X.shape[:2]
    nrm = np.repeat(np.asarray(normals, float), nq, axis=0)
    U, D = field_.at(X.reshape(-1, 3), nrm)
    return np.asarray(U).reshape(ne, nq, -1), np.asarray(D).reshape(ne, nq)


def _polar(pts, center, e1, e2):
    d = np.atleast_2d(pts) - center
    x = d @ e1
    y = d @ e2
    return x, y, np.hypot(x, y), np.arctan2(y, x)


def corner_singular(lam, center=(0.0, 0.0), direction=(1.0, 0.0)):
    """u = grad(rho^lam cos(lam theta)) in the plane, theta measured from ``direction``.

    Harmonic away from ``center`` so div u = 0; u ~ rho^(lam-1) lies in H^r
    for every r < lam.  theta must stay within (-pi, pi] on the domain.
    """
    c = np.asarray(center, float)
    e1 = np.asarray(direction, float)
    e1 = e1 / np.linalg.norm(e1)
    e2 = np.array([-e1[1], e1[0]])

    def value(pts):
        _, _, r, th = _polar(pts, c, e1, e2)
        r = np.maximum(r, 1e-300)
        a = lam * r ** (lam - 1)
        gx = a * np.cos((lam - 1) * th)
        gy = -a * np.sin((lam - 1) * th)
        return np.outer(gx, e1) + np.outer(gy, e2)

    def div(pts):
        return np.zeros(len(np.atleast_2d(pts)))

    return VectorField(value, div, (tuple(c),), f"corner-singular({lam})")


def reference_singular(kind, lam, location="edge"):
    """Singular family on a reference element.

    ``location='vertex'`` puts the singular point at vertex 0, ``'edge'`` at
    the midpoint of edge 0 (theta ranges over [0, pi] there).
    """
    kind = ElementKind.parse(kind)
    if location == "vertex":
        return corner_singular(lam, kind.vertices[0], kind.tangent(0))
    if location == "edge":
        a, b = kind.edge(0)
        return corner_singular(lam, 0.5 * (a + b), b - a)
    raise ValueError(f"unknown singular location {location!r}")


def smooth_reference(kind=None):
    """Analytic field (sin, cos) family on the plane with nonzero divergence."""

    def value(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        return np.column_stack([np.sin(1.3 * x + 0.4 * y), np.cos(0.7 * x - 1.1 * y)])

    def div(pts):
        pts = np.atleast_2d(pts)
        x, y = pts[:, 0], pts[:, 1]
        return 1.3 * np.cos(1.3 * x + 0.4 * y) + 1.1 * np.sin(0.7 * x - 1.1 * y)

    return VectorField(value, div, (), "smooth")


def screen_smooth():
    """Smooth field on the z=0 plane with zero normal trace on the unit square boundary."""

    def value(x):
        x = np.atleast_2d(x)
        a, b = x[:, 0], x[:, 1]
        u = np.sin(np.pi * a) * (1 + b * b)
        v = np.sin(np.pi * b) * np.cos(a)
        return np.column_stack([u, v, np.zeros_like(a)])

    def div(x):
        x = np.atleast_2d(x)
        a, b = x[:, 0], x[:, 1]
        return np.pi * np.cos(np.pi * a) * (1 + b * b) + np.pi * np.cos(np.pi * b) * np.cos(a)

    return VectorField(value, div, (), "screen-smooth")


def screen_singular(lam):
    """u = curl(rho^lam sin(2 theta) (1-x)(1-y)) on the unit square screen.

    The potential vanishes on the whole boundary, so u has zero normal
    trace there; u is divergence free and behaves like rho^(lam-1) at the
    corner (0,0).
    """

    def potential_grad(x):
        x = np.atleast_2d(x)
        a, b = x[:, 0], x[:, 1]
        r2 = np.maximum(a * a + b * b, 1e-300)
        # rho^lam sin(2 theta) = 2 a b rho^(lam-2)
        g = 2 * a * b * r2 ** (lam / 2 - 1)
        ga = 2 * b * r2 ** (lam / 2 - 1) + 2 * a * b * (lam - 2) * a * r2 ** (lam / 2 - 2)
        gb = 2 * a * r2 ** (lam / 2 - 1) + 2 * a * b * (lam - 2) * b * r2 ** (lam / 2 - 2)
        w = (1 - a) * (1 - b)
        return ga * w - g * (1 - b), gb * w - g * (1 - a)

    def value(x):
        px, py = potential_grad(x)
        return np.column_stack([py, -px, np.zeros_like(px)])

    def div(x):
        return np.zeros(len(np.atleast_2d(x)))

    return VectorField(value, div, ((0.0, 0.0, 0.0),), f"screen-singular({lam})")


def closed_smooth(geometry):
    """u = nu x G for a smooth 3D field G on a closed polyhedral surface.

    Normal components across edges are continuous (u.m = G.tau on both
    faces) and div_Gamma u = -nu . curl G face by face.  Face normals are
    looked up from the point location, so points must lie on the surface.
    """
    normals = geometry.normals
    verts = geometry.vertices
    offsets = np.array([normals[f] @ verts[loop[0]] for f, loop in enumerate(geometry.faces)])

    def G(x):
        return np.column_stack([np.sin(x[:, 1] + 0.5 * x[:, 2]), np.cos(x[:, 2] - 0.3 * x[:, 0]),
                                np.sin(0.8 * x[:, 0] + 0.6 * x[:, 1])])

    def curlG(x):
        # G = (sin(y + z/2), cos(z - 0.3x), sin(0.8x + 0.6y))
        a = np.cos(0.8 * x[:, 0] + 0.6 * x[:, 1]) * 0.6 + np.sin(x[:, 2] - 0.3 * x[:, 0])
        b = 0.5 * np.cos(x[:, 1] + 0.5 * x[:, 2]) - 0.8 * np.cos(0.8 * x[:, 0] + 0.6 * x[:, 1])
        c = 0.3 * np.sin(x[:, 2] - 0.3 * x[:, 0]) - np.cos(x[:, 1] + 0.5 * x[:, 2])
        return np.column_stack([a, b, c])

    def face_normal(x):
        # distance to every face plane; the containing face has distance 0
        d = np.abs(x @ normals.T - offsets)
        # points on an edge are ambiguous; they only occur on edge rules where
        # the normal trace is continuous anyway, so any adjacent face works
        f = np.argmin(d + 1e-9 * np.arange(len(normals)), axis=1)
        return normals[f]

    def nu(x, normal):
        if normal is None:
            return face_normal(x)
        return np.broadcast_to(np.asarray(normal, float), x.shape)

    def value(x, normal=None):
        x = np.atleast_2d(x)
        return np.cross(nu(x, normal), G(x))

    def div(x, normal=None):
        x = np.atleast_2d(x)
        return -np.einsum("ij,ij->i", nu(x, normal), curlG(x))

    return VectorField(value, div, (), "closed-smooth", face_aware=True)


def plane_field_on_surface(field2d, origin=(0.0, 0.0, 0.0)):
    """Lift a planar field to the z = const plane in 3D."""
    o = np.asarray(origin, float)

    def value(x):
        v = field2d.value(np.atleast_2d(x)[:, :2] - o[:2])
        return np.column_stack([v, np.zeros(len(v))])

    def div(x):
        return field2d.div(np.atleast_2d(x)[:, :2] - o[:2])

    sing = tuple(tuple(np.r_[np.asarray(s) + o[:2], o[2]]) for s in field2d.singular)
    return VectorField(value, div, sing, field2d.name)


def by_name(name, lam=0.6, geometry=None, kind=TRIANGLE):
    key = name.lower()
    if key in ("vertex-singular", "vertex"):
        return reference_singular(kind, lam, "vertex")
    if key in ("edge-singular", "singular"):
        return reference_singular(kind, lam, "edge")
    if key == "smooth":
        return smooth_reference()
    raise KeyError(f"unknown field {name!r}")


__all__ = ["VectorField", "sample", "corner_singular", "reference_singular", "smooth_reference",
           "screen_smooth", "screen_singular", "closed_smooth", "plane_field_on_surface",
           "by_name", "SQUARE", "TRIANGLE"]
