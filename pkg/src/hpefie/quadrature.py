"""Quadrature rules on segments, triangles and squares.

All rules return ``(points, weights)`` with points of shape ``(n, d)``.
Graded rules cluster points geometrically toward a singular point and are
used for manufactured fields with vertex singularities.
"""
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

GRADING_RATIO = 0.15
GRADING_LAYERS = 14


@lru_cache(maxsize=None)
def gauss01(n):
    """Gauss-Legendre rule with ``n`` points on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def _collapsed_unit_triangle(n):
    # Duffy collapse of [0,1]^2 onto {r, s >= 0, r + s <= 1}; the (1 - s)
    # jacobian is absorbed by a Gauss-Jacobi rule in s.
    xu, wu = gauss01(n)
    xj, wj = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xj + 1.0)
    ws = 0.25 * wj
    R, S = np.meshgrid(xu, s, indexing="ij")
    W = np.outer(wu, ws)
    r = R * (1.0 - S)
    return np.column_stack([r.ravel(), S.ravel()]), W.ravel()


def triangle_rule(vertices, n):
    """Collapsed Gauss rule on a triangle, exact for total degree ``2n - 1``."""
    v = np.asarray(vertices, dtype=float)
    rs, w = _collapsed_unit_triangle(n)
    e1 = v[1] - v[0]
    e2 = v[2] - v[0]
    area2 = abs(e1[0] * e2[1] - e1[1] * e2[0])
    pts = v[0] + rs[:, :1] * e1 + rs[:, 1:] * e2
    return pts, w * area2


@lru_cache(maxsize=None)
def _square01(n):
    x, w = gauss01(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(w, w).ravel()


def square_rule(n):
    """Tensor Gauss rule on (0,1)^2."""
    p, w = _square01(n)
    return p.copy(), w.copy()


def parallelogram_rule(vertices, n):
    v = np.asarray(vertices, dtype=float)
    uv, w = _square01(n)
    a = v[1] - v[0]
    b = v[3] - v[0]
    area = abs(a[0] * b[1] - a[1] * b[0])
    return v[0] + uv[:, :1] * a + uv[:, 1:] * b, w * area


def graded_interval(n, ratio=GRADING_RATIO, layers=GRADING_LAYERS):
    """Composite Gauss rule on [0, 1] refined geometrically toward 0."""
    x, w = gauss01(n)
    breaks = ratio ** np.arange(layers + 1)
    breaks = np.concatenate([breaks, [0.0]])
    pts, wts = [], []
    for hi, lo in zip(breaks[:-1], breaks[1:]):
        pts.append(lo + (hi - lo) * x)
        wts.append((hi - lo) * w)
    return np.concatenate(pts), np.concatenate(wts)


def segment_rule(n, singular=(), ratio=GRADING_RATIO, layers=GRADING_LAYERS):
    """Rule on the parameter interval [0, 1].

    ``singular`` lists parameter values toward which the rule is graded
    (endpoints or interior points).
    """
    marks = sorted({float(s) for s in singular if -1e-12 <= s <= 1 + 1e-12})
    if not marks:
        return gauss01(n)
    cuts = sorted({0.0, 1.0, *[min(max(s, 0.0), 1.0) for s in marks]})
    gx, gw = graded_interval(n, ratio, layers)
    pts, wts = [], []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a < 1e-14:
            continue
        sa = any(abs(a - s) < 1e-12 for s in marks)
        sb = any(abs(b - s) < 1e-12 for s in marks)
        if sa and sb:
            m = 0.5 * (a + b)
            pts += [a + (m - a) * gx, b - (b - m) * gx]
            wts += [(m - a) * gw, (b - m) * gw]
        elif sa:
            pts.append(a + (b - a) * gx)
            wts.append((b - a) * gw)
        elif sb:
            pts.append(b - (b - a) * gx)
            wts.append((b - a) * gw)
        else:
            x, w = gauss01(n)
            pts.append(a + (b - a) * x)
            wts.append((b - a) * w)
    return np.concatenate(pts), np.concatenate(wts)


def graded_fan_rule(vertices, point, n, ratio=GRADING_RATIO, layers=GRADING_LAYERS):
    """Rule on a convex polygon graded toward ``point`` (inside or on it).

    The polygon is fanned into triangles with apex ``point``; each triangle
    is collapsed onto the apex and the radial variable is graded.
    """
    v = np.asarray(vertices, dtype=float)
    c = np.asarray(point, dtype=float)
    rho, wr = graded_interval(n, ratio, layers)
    t, wt = gauss01(n)
    R, Tt = np.meshgrid(rho, t, indexing="ij")
    W = np.outer(wr, wt)
    pts, wts = [], []
    for i in range(len(v)):
        a = v[i] - c
        b = v[(i + 1) % len(v)] - c
        area2 = a[0] * b[1] - a[1] * b[0]
        if abs(area2) < 1e-13:
            continue
        d = a[None, None, :] * (1.0 - Tt[..., None]) + b[None, None, :] * Tt[..., None]
        pts.append((c + R[..., None] * d).reshape(-1, 2))
        wts.append((abs(area2) * R * W).ravel())
    return np.concatenate(pts), np.concatenate(wts)
