"""Command line entry point: mesh, interp-study, efie-solve, converge, rates."""
import argparse
import csv
import sys

import numpy as np

from . import approx, efie, fields, interp, mesh as meshmod


def _floats(text, n=3):
    vals = [float(t) for t in text.split(",")]
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma separated numbers, got {text!r}")
    return vals


def parse_excitation(text):
    """'plane:dx,dy,dz:px,py,pz' -> (direction, polarization)."""
    parts = text.split(":")
    if len(parts) != 3 or parts[0] != "plane":
        raise argparse.ArgumentTypeError("excitation must look like plane:dx,dy,dz:px,py,pz")
    return _floats(parts[1]), _floats(parts[2])


def cmd_mesh(args):
    m = meshmod.build_mesh(args.preset, args.kind, args.levels)
    m.audit()
    m.dump_json(args.out)
    rep = meshmod.regularity_report(m)
    print(f"{m.n_elements} elements, h = {rep['h']:.6g}, max h/rho = {rep['max_h_over_rho']:.4f} -> {args.out}")
    return 0


def interp_rows(field_name, lam, kind, p_min, p_max):
    fld = fields.by_name(field_name, lam, kind=kind)
    rows = []
    for p in range(p_min, p_max + 1):
        br = interp.reference_interpolator(kind, p)(fld)
        l2, hdiv, _ = interp.reference_errors(fld, kind, p, br.total)
        ratio = interp.edge_error_ratio(fld, kind, p)
        rows.append((p, hdiv, l2, float(np.max(ratio))))
    return rows


def cmd_interp_study(args):
    rows = interp_rows(args.field, args.lam, args.kind, args.p_min, args.p_max)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["p", "err_hdiv", "err_l2", "edge_ratio_max"])
        for p, hdiv, l2, r in rows:
            w.writerow([p, f"{hdiv:.12e}", f"{l2:.12e}", f"{r:.12e}"])
    finally:
        if args.out:
            out.close()
    if len(rows) >= 3:
        slope, _ = approx.estimate_rate([(p, e) for p, e, _, _ in rows], "p")
        print(f"p-slope of err_hdiv: {slope:.3f}", file=sys.stderr)
    return 0


def cmd_efie_solve(args):
    m = meshmod.load_mesh(args.mesh)
    d, pol = args.excitation
    exc = efie.excitation_plane_wave(args.k, d, pol)
    system = efie.assemble(efie.WaveProblem(m, args.p, args.k, exc))
    u = efie.solve(system)
    efie.write_solution(args.out, u, system)
    print(f"N = {system.N}, rcond = {u.rcond:.3e}, Galerkin residual = {efie.galerkin_residual(system, u):.2e} -> {args.out}")
    return 0


def cmd_converge(args):
    cfg = approx.StudyConfig.from_json(args.config)
    if args.out:
        cfg.output = args.out

    def log(r):
        print(f"level {r.level} p {r.p} N {r.N} err_X {r.err_X} err_Hdiv {r.err_Hdiv} {r.status}", file=sys.stderr)

    recs = approx.run_convergence(cfg, log=log if args.verbose else None)
    if not cfg.output:
        sys.stdout.write(approx.records_to_csv(recs, cfg.timings))
    return 0 if all(r.status == "ok" for r in recs) else 1


def cmd_rates(args):
    recs = approx.read_csv(args.input)
    rows = approx.rate_table(recs, args.axis)
    fixed = "p" if args.axis == "h" else "level"
    print(f"{fixed:>6} {'n':>3} {'slope':>9} {'rms':>9}")
    for key, n, s, res in rows:
        print(f"{key:>6} {n:>3} {s:>9.4f} {res:>9.2e}")
    return 0 if rows else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="hpefie", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("mesh", help="write a refined preset mesh as JSON")
    s.add_argument("--preset", required=True, help="UnitScreen, LScreen or Cube")
    s.add_argument("--kind", default="square", choices=["triangle", "square"])
    s.add_argument("--levels", type=int, default=0, help="number of uniform refinements")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mesh)

    s = sub.add_parser("interp-study", help="p-convergence of the reference interpolant")
    s.add_argument("--field", default="vertex-singular")
    s.add_argument("--lambda", dest="lam", type=float, default=0.6)
    s.add_argument("--kind", default="triangle", choices=["triangle", "square"])
    s.add_argument("--p-min", type=int, default=1)
    s.add_argument("--p-max", type=int, default=8)
    s.add_argument("--out")
    s.set_defaults(func=cmd_interp_study)

    s = sub.add_parser("efie-solve", help="assemble and solve the EFIE on a mesh file")
    s.add_argument("--mesh", required=True)
    s.add_argument("--p", type=int, default=1)
    s.add_argument("--k", type=float, default=1.0)
    s.add_argument("--excitation", type=parse_excitation, default=parse_excitation("plane:0,0,-1:1,0,0"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_efie_solve)

    s = sub.add_parser("converge", help="run a convergence study from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", help="CSV path (overrides the config)")
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_converge)

    s = sub.add_parser("rates", help="print least-squares slopes of a study CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--axis", default="h", choices=["h", "p"])
    s.set_defaults(func=cmd_rates)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
