"""Face-wise operator Q_hp, X-orthogonal projection P_hp and convergence studies."""
import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass
from dataclasses import field as dc_field

import numpy as np

from . import fields as F
from .efie import QuadratureConfig, WaveProblem, assemble, excitation_plane_wave, galerkin_residual, solve
from .interp import element_interpolants, project_div_global
from .mesh import build_mesh, initial_mesh, preset_surface, refine_uniform
from .normx import energy_gram, energy_norm, hdiv_error_sq
from .space import DiscreteField, RTSpace, embedding

CSV_HEADER = ["surface", "kind", "level", "h", "p", "N", "k", "err_X", "err_Hdiv", "best_X",
              "qo_ratio", "seconds", "status"]
STUDIES = ("interp", "projection", "efie", "qhp")


class RateError(ValueError):
    pass


# ----------------------------------------------------------------------------
# H(div) Gram and face-wise operator


def hdiv_gram(space, n_quad=None):
    """Global (u, v)_{H(div)} Gram matrix of an RT space."""
    mesh = space.mesh
    pts, w = mesh.kind.rule(n_quad or space.p + 2)
    vals, div = space.basis.eval(pts)
    V = np.einsum("jxc,fqc->jfqx", mesh.DT, vals) / mesh.J[:, None, None, None]
    blocks = np.einsum("jfqx,jgqx,q,j->jfg", V, V, w, mesh.J)
    blocks += np.einsum("fq,gq,q,j->jfg", div, div, w, 1.0 / mesh.J)
    return space.assemble_local(blocks)


def hdiv_load(space, field_, n_quad=None):
    """(u, b_i)_{H(div)} for a VectorField by element quadrature."""
    mesh = space.mesh
    pts, w = mesh.kind.rule(n_quad or space.p + 6)
    vals, div = space.basis.eval(pts)
    X = mesh.origin[:, None, :] + np.einsum("jxc,qc->jqx", mesh.DT, pts)
    U, D = F.sample(field_, X, mesh.normals)
    loc = np.einsum("jqx,jxc,fqc,q->jf", U, mesh.DT, vals, w)
    loc += np.einsum("jq,fq,q->jf", D, div, w)
    out = np.zeros(space.N)
    m = space.local_to_global >= 0
    np.add.at(out, space.local_to_global[m], (loc * space.local_sign)[m])
    return out


def face_boundary_dofs(space):
    """Dofs on edges lying on a face boundary (screen boundary or face-face edges)."""
    mesh = space.mesh
    mask = np.zeros(space.N, dtype=bool)
    for e, inc in enumerate(mesh.edge_incidences):
        faces = {int(mesh.element_face[j]) for j, _, _ in inc}
        if (len(inc) == 1 or len(faces) > 1) and space.edge_start[e] >= 0:
            s = space.edge_start[e]
            mask[s:s + space.p] = True
    return mask


def q_hp(field_, mesh, p, space=None):
    """Face-wise operator: Pi_hp normal traces on face boundaries, H(div) projection inside."""
    space = space or RTSpace(mesh, p, include_boundary=True)
    pi = project_div_global(field_, mesh, p, space)
    bnd = face_boundary_dofs(space)
    inner = ~bnd
    M = hdiv_gram(space)
    rhs = hdiv_load(space, field_) - M[:, bnd] @ pi.coeffs[bnd]
    c = pi.coeffs.copy()
    if inner.any():
        Mi = M[np.ix_(inner, inner)]
        try:
            c[inner] = np.linalg.solve(Mi, rhs[inner])
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular constrained H(div) system") from exc
    return DiscreteField(space, c)


# ----------------------------------------------------------------------------
# X-orthogonal projection


def p_hp(u_ref, space, gram, E=None):
    """X-orthogonal projection of a fine-space field onto ``space`` (coarse).

    ``u_ref`` lives in ``gram.space``; the projection solves
    E^T G E c = E^T G u_ref with E the coarse-to-fine embedding.
    """
    E = embedding(space, gram.space) if E is None else E
    G = gram.combined
    GE = np.asarray((E.T @ G).T) if hasattr(E, "T") else G @ E
    Ad = np.asarray(E.T @ GE)
    Ad = 0.5 * (Ad + Ad.T)
    try:
        L = np.linalg.cholesky(Ad)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("energy gram is not SPD on the coarse space") from exc
    rhs = GE.T @ u_ref.coeffs
    y = np.linalg.solve(L, rhs)
    c = np.linalg.solve(L.conj().T, y)
    return DiscreteField(space, c)


# ----------------------------------------------------------------------------
# Rates


def estimate_rate(records, axis="h"):
    """Least-squares slope of log(error) against log(h) or log(1/p).

    ``records`` is a sequence of ConvergenceRecords (err_X used if set,
    else err_Hdiv) or of (x, error) pairs.  Returns (slope, rms residual).
    """
    xs, ys = [], []
    for r in records:
        if isinstance(r, ConvergenceRecord):
            x = r.h if axis == "h" else r.p
            e = r.err_X if r.err_X is not None else r.err_Hdiv
        else:
            x, e = r
        if e is None or not np.isfinite(e) or e <= 0:
            continue
        xs.append(math.log(x) if axis == "h" else math.log(1.0 / x))
        ys.append(math.log(e))
    if axis not in ("h", "p"):
        raise ValueError("axis must be 'h' or 'p'")
    if len(xs) < 3:
        raise RateError("need at least 3 records to estimate a rate")
    A = np.column_stack([xs, np.ones(len(xs))])
    coef, *_ = np.linalg.lstsq(A, np.array(ys), rcond=None)
    res = np.array(ys) - A @ coef
    return float(coef[0]), float(np.sqrt(np.mean(res ** 2)))


# ----------------------------------------------------------------------------
# Study harness


@dataclass
class StudyConfig:
    surface: str = "UnitScreen"
    kind: str = "square"
    levels: list = dc_field(default_factory=lambda: [0, 1, 2])
    degrees: list = dc_field(default_factory=lambda: [1])
    study: str = "interp"
    field: str = "smooth"
    lam: float = 0.6
    k: float = 1.0
    direction: list = dc_field(default_factory=lambda: [0.0, 0.0, -1.0])
    polarization: list = dc_field(default_factory=lambda: [1.0, 0.0, 0.0])
    norms: list = dc_field(default_factory=lambda: ["X", "Hdiv"])
    reference: list = None  # [level, p]; default (max level + 1, max p + 1)
    singular_order: int = 8
    include_boundary: bool = None
    output: str = None
    seed: int = 0
    timings: bool = False

    def __post_init__(self):
        if not self.levels or not self.degrees:
            raise ValueError("levels and degrees must be nonempty")
        if self.study not in STUDIES:
            raise ValueError(f"study must be one of {STUDIES}")
        preset_surface(self.surface)

    @classmethod
    def from_json(cls, path_or_text):
        text = path_or_text
        if not str(path_or_text).lstrip().startswith("{"):
            with open(path_or_text) as fh:
                text = fh.read()
        return cls(**json.loads(text))

    @property
    def reference_cell(self):
        if self.reference:
            return int(self.reference[0]), int(self.reference[1])
        return max(self.levels) + 1, max(self.degrees) + 1


@dataclass
class ConvergenceRecord:
    surface: str
    kind: str
    level: int
    h: float
    p: int
    N: int
    k: float = None
    err_X: float = None
    err_Hdiv: float = None
    best_X: float = None
    qo_ratio: float = None
    seconds: float = None
    status: str = "ok"

    def row(self, timings=False):
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return f"{v:.12e}"
            return str(v)

        d = asdict(self)
        if not timings:
            d["seconds"] = None
        return [fmt(d[c]) for c in CSV_HEADER]


def study_field(config, geometry=None):
    name = config.field.lower()
    if name == "smooth":
        if config.surface.lower() == "cube":
            return F.closed_smooth(geometry or preset_surface("Cube"))
        return F.screen_smooth()
    if name in ("singular", "screen-singular", "lambda"):
        return F.screen_singular(config.lam)
    raise KeyError(f"unknown study field {config.field!r}")


def _mesh_chain(config, top):
    m = initial_mesh(preset_surface(config.surface), config.kind)
    chain = [m]
    for _ in range(top):
        m = refine_uniform(m)
        chain.append(m)
    return chain


def run_convergence(config, log=None):
    """Run a study; returns the records (also written as CSV if config.output is set)."""
    lref, pref = config.reference_cell
    need_ref = config.study != "interp" or "X" in config.norms and config.study == "interp"
    top = max(max(config.levels), lref if need_ref else 0)
    chain = _mesh_chain(config, top)
    fld = None if config.study == "efie" else study_field(config, chain[0].geometry)
    qc = QuadratureConfig(singular_order=config.singular_order)
    include_b = config.include_boundary
    if config.study == "qhp" and include_b is None:
        include_b = True
    ref_space = gram = u_ref = None
    if need_ref:
        ref_space = RTSpace(chain[lref], pref, include_b)
        gram = energy_gram(ref_space)
        if config.study == "efie":
            exc = excitation_plane_wave(config.k, config.direction, config.polarization)
            sysr = assemble(WaveProblem(chain[lref], pref, config.k, exc, include_b, qc))
            u_ref = solve(sysr)
        else:
            u_ref = project_div_global(fld, chain[lref], pref, ref_space)
    records = []
    for level in config.levels:
        for p in config.degrees:
            mesh = chain[level]
            t0 = time.perf_counter()
            rec = ConvergenceRecord(config.surface, config.kind, level, mesh.h, p, 0,
                                    config.k if config.study == "efie" else None)
            try:
                space = RTSpace(mesh, p, include_b)
                rec.N = space.N
                _run_cell(config, rec, space, fld, ref_space, gram, u_ref, qc)
            except Exception as exc:  # noqa: BLE001 - failure isolation per cell
                rec.status = f"failed: {type(exc).__name__}: {exc}".replace(",", ";")
            rec.seconds = time.perf_counter() - t0
            records.append(rec)
            if log:
                log(rec)
    if config.output:
        write_csv(records, config.output, config.timings)
    return records


def _run_cell(config, rec, space, fld, ref_space, gram, u_ref, qc):
    mesh = space.mesh
    study = config.study
    if study == "interp":
        pi = project_div_global(fld, mesh, space.p, space)
        rec.err_Hdiv = float(np.sqrt(hdiv_error_sq(fld, pi, mesh).sum()))
        if gram is not None:
            E = embedding(space, ref_space)
            rec.err_X = energy_norm(u_ref.coeffs - E @ pi.coeffs, gram)
        return
    E = embedding(space, ref_space)
    if study == "projection":
        ph = p_hp(u_ref, space, gram, E)
        rec.err_X = energy_norm(u_ref.coeffs - E @ ph.coeffs, gram)
        rec.best_X = rec.err_X
        rec.err_Hdiv = float(np.sqrt(hdiv_error_sq(fld, ph, mesh).sum()))
        return
    if study == "qhp":
        q = q_hp(fld, mesh, space.p, space)
        pi = project_div_global(fld, mesh, space.p, space)
        rec.err_X = energy_norm(u_ref.coeffs - E @ q.coeffs, gram)
        rec.err_Hdiv = float(np.sqrt(hdiv_error_sq(fld, pi, mesh).sum()))
        rec.best_X = energy_norm(u_ref.coeffs - E @ pi.coeffs, gram)
        rec.qo_ratio = rec.err_X / rec.err_Hdiv if rec.err_Hdiv > 0 else None
        return
    # efie
    exc = excitation_plane_wave(config.k, config.direction, config.polarization)
    system = assemble(WaveProblem(mesh, space.p, config.k, exc, space.include_boundary, qc))
    u = solve(system)
    rec.err_X = energy_norm(u_ref.coeffs - E @ u.coeffs, gram)
    best = p_hp(u_ref, space, gram, E)
    rec.best_X = energy_norm(u_ref.coeffs - E @ best.coeffs, gram)
    rec.qo_ratio = rec.err_X / rec.best_X if rec.best_X > 0 else None
    Mh = hdiv_gram(ref_space)
    d = u_ref.coeffs - E @ u.coeffs
    rec.err_Hdiv = float(np.sqrt(max(np.real(np.conj(d) @ Mh @ d), 0.0)))
    rec.galerkin_residual = galerkin_residual(system, u)


def write_csv(records, path_or_buffer, timings=False):
    own = isinstance(path_or_buffer, str)
    fh = open(path_or_buffer, "w", newline="") if own else path_or_buffer
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(r.row(timings))
    finally:
        if own:
            fh.close()


def records_to_csv(records, timings=False):
    buf = io.StringIO()
    write_csv(records, buf, timings)
    return buf.getvalue()


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            def num(key, cast=float):
                v = row.get(key, "")
                return cast(v) if v not in ("", None) else None

            out.append(ConvergenceRecord(row["surface"], row["kind"], int(row["level"]), float(row["h"]),
                                         int(row["p"]), int(row["N"]), num("k"), num("err_X"),
                                         num("err_Hdiv"), num("best_X"), num("qo_ratio"),
                                         num("seconds"), row.get("status", "ok")))
    return out


def rate_table(records, axis="h"):
    """Slopes grouped by the fixed variable (p for axis h, level for axis p)."""
    groups = {}
    for r in records:
        if r.status != "ok":
            continue
        key = r.p if axis == "h" else r.level
        groups.setdefault(key, []).append(r)
    rows = []
    for key in sorted(groups):
        recs = groups[key]
        try:
            s, res = estimate_rate(recs, axis)
        except RateError:
            continue
        rows.append((key, len(recs), s, res))
    return rows


# ----------------------------------------------------------------------------
# Quasi-optimality


def quasi_optimality_report(surface="UnitScreen", kind="triangle", levels=(0, 1, 2, 3), p=1, k=1.0,
                            reference=None, direction=(0.0, 0.0, -1.0), polarization=(1.0, 0.0, 0.0),
                            singular_order=8):
    """Galerkin-to-best-approximation ratios in the discrete X norm, per level."""
    cfg = StudyConfig(surface=surface, kind=kind, levels=list(levels), degrees=[p], study="efie",
                      k=k, direction=list(direction), polarization=list(polarization),
                      reference=list(reference) if reference else None, singular_order=singular_order)
    recs = run_convergence(cfg)
    return [{"level": r.level, "N": r.N, "h": r.h, "err_X": r.err_X, "best_X": r.best_X,
             "ratio": r.qo_ratio, "galerkin_residual": getattr(r, "galerkin_residual", None),
             "status": r.status} for r in recs]


__all__ = ["StudyConfig", "ConvergenceRecord", "q_hp", "p_hp", "run_convergence", "estimate_rate",
           "quasi_optimality_report", "hdiv_gram", "rate_table", "read_csv", "write_csv",
           "records_to_csv", "build_mesh"]
