"""Command-line interface: ``nlsgraph {solve,verify,tadpole,ode,levels}``.

Exit codes: 0 success, 1 verification failure, 2 configuration or input
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .graph import GraphSpecError, kirchhoff_residual

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3

log = logging.getLogger("nlsgraph")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text: str, out: str | None, name: str) -> Path | None:
    """Write ``text`` to ``out/name`` (or to stdout without ``out``)."""
    if out is None:
        sys.stdout.write(text)
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    target = path / name
    target.write_text(text)
    print(f"wrote {target}")
    return target


def _table(rows: list[dict], columns: list[str]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.6g}"
        return str(v)

    cells = [[fmt(r[c]) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines) + "\n"


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- solve

def _config(args, supercritical: bool) -> RunConfig:
    keys = ("graph", "loop", "truncation", "p", "mu", "h", "core_refine", "rho_steps", "N", "seed", "out", "levels_h")
    overrides = {k: getattr(args, k, None) for k in keys}
    cfg = RunConfig.load(getattr(args, "config", None), overrides=overrides)
    return cfg.validate(supercritical=supercritical)


def cmd_solve(args) -> int:
    from .estimator import BoundStateSolver

    cfg = _config(args, supercritical=True)
    graph = cfg.build_graph()
    est = BoundStateSolver(p=cfg.p, mu=cfg.mu, h=cfg.h, core_refine=cfg.core_refine, N=cfg.Ns(),
                           rho_steps=cfg.rho_steps, tol=cfg.tol, levels_h=cfg.levels_h, random_state=cfg.seed)
    est.fit(graph)
    for N, msg in sorted(est.failures_.items()):
        print(f"N={N}: no new solution ({msg})", file=sys.stderr)
    if not est.reports_:
        print("error: no solution converged", file=sys.stderr)
        return EXIT_SOLVER
    out = Path(cfg.out)
    paths = est.write(out)
    rows = est.summary()
    (out / "summary.csv").write_text(_rows_csv(rows))
    (out / "run.json").write_text(json.dumps({
        "config": cfg.to_dict(),
        "levels": est.levels_,
        "failures": {str(k): v for k, v in est.failures_.items()},
        "reports": [p.name for p in paths],
    }, indent=2, sort_keys=True) + "\n")
    print(_table(rows, ["index", "N", "energy", "lambda", "morse", "constrained_morse", "nehari", "pohozaev", "link"]), end="")
    print(f"{len(paths)} solution(s) written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- verify

def cmd_verify(args) -> int:
    from .solver import verify_report

    status = EXIT_OK
    for path in args.reports:
        try:
            res = verify_report(path, spectral=not args.no_morse)
        except FileNotFoundError as exc:
            print(f"{path}: error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (ValueError, KeyError, GraphSpecError) as exc:
            print(f"{path}: parse error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        v = res["values"]
        failing = [k for k, ok in res["checks"].items() if not ok]
        verdict = "PASS" if res["ok"] else "FAIL (" + ", ".join(failing) + ")"
        print(f"{path}: {verdict}")
        for k in ("nehari", "pohozaev", "link", "gradient"):
            print(f"  {k:9s} {v[k]:.3e}  (threshold {v['threshold']:.3e})")
        if "morse" in v:
            print(f"  morse     {v['morse']}  constrained {v['constrained_morse']}")
        if not res["ok"]:
            status = EXIT_VERIFY
    return status


# ---------------------------------------------------------------- tadpole

def cmd_tadpole(args) -> int:
    from .analysis import morse_index
    from .discretization import assemble, gradient, identity_residuals
    from .ode import tadpole_solution
    from .solver import truncation_diagnostic

    if not args.p > 2:
        raise ConfigError("tadpole solution requires p > 2")
    u, graph = tadpole_solution(args.p, args.k, args.v0, args.h, args.truncation)
    ops = assemble(graph, args.h)
    x = ops.vector(u)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tadpole_graph.json").write_text(json.dumps(graph.to_dict(), indent=2) + "\n")
    u.to_csv(out / "tadpole.csv")
    grad = ops.dual_norm(gradient(ops, x, 1.0, args.p, 0.0))
    scale = max(1.0, ops.dual_norm(ops.stiffness @ x))
    record = {
        "kind": "exact",
        "graph": graph.to_dict(),
        "p": args.p,
        "mu": ops.mass(x),
        "rho": 1.0,
        "h": args.h,
        "edge_steps": {},
        "lambda": 0.0,
        "k": args.k,
        "v0": args.v0,
        "energy": 0.5 * ops.dirichlet_norm(x) - ops.core_lp(x, args.p) / args.p,
        "identities": identity_residuals(ops, u, 1.0, args.p, 0.0),
        "gradient_residual": grad / scale,
        "kirchhoff": kirchhoff_residual(u),
        "morse": morse_index(ops, x, 1.0, args.p, 0.0).morse,
        "constrained_morse": morse_index(ops, x, 1.0, args.p, 0.0, constrained=True).morse,
        "truncation": truncation_diagnostic(u),
        "profile": "tadpole.csv",
    }
    (out / "tadpole.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'tadpole.json'}, {out / 'tadpole.csv'}, {out / 'tadpole_graph.json'}")
    args.reports, args.no_morse = [out / "tadpole.json"], False
    return cmd_verify(args)


# ---------------------------------------------------------------- ode

def cmd_ode(args) -> int:
    from .ode import orbit_mass, period_table_csv, periodic_orbit

    if args.what == "periods":
        _emit(period_table_csv(args.p, args.alpha, args.u0), args.out, "periods.csv")
    elif args.what == "orbit":
        orbit = periodic_orbit(args.u0[0], args.alpha[0], args.p[0], n_samples=args.samples, periods=args.periods)
        _emit(orbit.to_csv(), args.out, "orbit.csv")
    else:
        rows = []
        for p in args.p:
            for a in args.alpha:
                for u0 in args.u0:
                    orb = periodic_orbit(u0, a, p)
                    m = orbit_mass(orb)
                    sup = orb.sup_norm
                    lo, hi = orb.tau * sup**2 / 8.0, orb.tau * sup**2
                    rows.append({"p": p, "alpha": a, "u0": u0, "tau": repr(orb.tau), "sup_norm": repr(sup),
                                 "mass": repr(m), "lower": repr(lo), "upper": repr(hi), "ok": lo <= m <= hi})
        _emit(_rows_csv(rows), args.out, "mass_bounds.csv")
    return EXIT_OK


# ---------------------------------------------------------------- levels

def cmd_levels(args) -> int:
    from .analysis import beta_levels, levels_csv, rayleigh_level
    from .discretization import assemble
    from .solver import core_dilation, minimax_estimate

    cfg = _config(args, supercritical=False)
    if not cfg.p > 6:
        raise ConfigError("level diagnostics require p > 6")
    graph = cfg.build_graph()
    Ns = cfg.Ns()
    ops = assemble(graph, cfg.levels_h)
    S = [rayleigh_level(ops, cfg.p, N, seed=cfg.seed) for N in Ns]
    lv = beta_levels(cfg.mu, cfg.p, S)
    c_upper = None
    if args.c_upper:
        c_upper = []
        for N, beta in zip(Ns, lv["beta"]):
            dil = core_dilation(graph, N - 1, 2.0 * beta, 1.0, cfg.mu, cfg.p, slots=N)
            step = min(cfg.levels_h, dil.width / 16.0)
            fine = assemble(graph, cfg.levels_h, {dil.edge: step})
            est = minimax_estimate(fine, cfg.p, cfg.mu, 1.0, N, float(beta), seed=cfg.seed)
            log.info("N=%d: core step %.3g, c_upper %.6g", N, step, est.c_upper)
            c_upper.append(est.c_upper)
    print(f"# L(p) = {lv['L']!r}", file=sys.stderr)
    _emit(levels_csv(Ns, S, lv["beta"], lv["b_lower"], c_upper), args.out, "levels.csv")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nlsgraph", description="Bound states of the NLS equation on metric graphs.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    def graph_options(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--graph", help="graph description (JSON); default: tadpole")
        p.add_argument("--loop", type=float, help="tadpole loop length (default 1)")
        p.add_argument("--truncation", type=float, help="half-line truncation R (default 30)")
        p.add_argument("--p", type=float, help="nonlinearity exponent (default 8)")
        p.add_argument("--mu", type=float, help="prescribed mass (default 1)")
        p.add_argument("--N", type=int, help="largest minimax parameter; runs N = 2..N")
        p.add_argument("--seed", type=int, help="random seed")
        p.add_argument("--out", help="output directory")

    s = sub.add_parser("solve", help="find bound states")
    graph_options(s)
    s.add_argument("--h", type=float, help="mesh step (default 1e-3)")
    s.add_argument("--core-refine", dest="core_refine", type=float, help="core edges use step h/core_refine (default 25)")
    s.add_argument("--rho-steps", dest="rho_steps", type=int, help="points of the rho grid on [1/2, 1] (default 11)")
    s.add_argument("--levels-h", dest="levels_h", type=float, help="mesh step for the level estimates (default 1e-2)")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="recheck stored reports")
    v.add_argument("reports", nargs="+", type=Path)
    v.add_argument("--no-morse", action="store_true", help="skip the Morse recount")
    v.set_defaults(func=cmd_verify)

    t = sub.add_parser("tadpole", help="exact zero-multiplier solution on a tadpole")
    t.add_argument("--p", type=float, default=8.0)
    t.add_argument("--k", type=int, default=1, help="number of periods on the loop")
    t.add_argument("--v0", type=float, default=1.0, help="slope at the vertex")
    t.add_argument("--h", type=float, default=1e-3)
    t.add_argument("--truncation", type=float, default=10.0)
    t.add_argument("--out", default="tadpole")
    t.set_defaults(func=cmd_tadpole)

    o = sub.add_parser("ode", help="tables for the one-dimensional problem")
    o.add_argument("what", choices=["periods", "orbit", "mass-bounds"])
    o.add_argument("--p", type=_floats, default=[4.0, 6.0, 8.0])
    o.add_argument("--alpha", type=_floats, default=[0.5, 1.0, 2.0])
    o.add_argument("--u0", type=_floats, default=[0.5, 1.0, 2.0])
    o.add_argument("--samples", type=int, default=256)
    o.add_argument("--periods", type=int, default=1)
    o.add_argument("--out")
    o.set_defaults(func=cmd_ode)

    lv = sub.add_parser("levels", help="S_N, beta_N, b_N and minimax upper bounds")
    graph_options(lv)
    lv.add_argument("--levels-h", "--h", dest="levels_h", type=float, help="mesh step (default 1e-2)")
    lv.add_argument("--c-upper", dest="c_upper", action="store_true", help="also sample minimax paths")
    lv.set_defaults(func=cmd_levels)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    from .solver import SolverError

    try:
        return args.func(args)
    except (ConfigError, GraphSpecError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
