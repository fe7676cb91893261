"""``ioc`` command line: gen, solve, verify, tables, export-sdpa.

Configuration precedence: command-line flags, then a JSON ``--config`` file,
then built-in defaults.  All randomness comes from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import bench
from .iocp import (CertificateError, LagrangianClass, assemble, bundle_solution, compare_lagrangians,
                   csv_row, dumps_bundle, hierarchy, result_bundle, solve_iocp, verify_certificate)
from .sdp import export_sdpa, size_estimate

DEFAULTS = {
    "problem": "exitnorm", "db": None, "n": 500, "s": 50, "seed": 0, "region": "ball", "p": 0,
    "subcase": "mixed", "rotations": 1, "cls": "1,1", "degphi": 2, "degrees": None,
    "weighting": "auto", "select": "lowest_degree", "grid": 10_000, "out": None, "jobs": 1,
}

CSV_HEADER = ["problem", "class", "deg_phi", "epsilon", "status", "similarity", "L"]


class UsageError(Exception):
    pass


def solver_ceiling() -> int:
    return int(os.environ.get("IOC_SOLVER_CEILING_DEGPHI", "8"))


# -- configuration -------------------------------------------------------------

def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["n"] is not None and int(cfg["n"]) < 1:
        raise UsageError("--n must be at least 1")
    if int(cfg["degphi"]) < 0 or int(cfg["s"]) < 0:
        raise UsageError("degrees and --s must be nonnegative")
    return cfg


def database(cfg: dict) -> bench.TrajectoryDatabase:
    if cfg["db"]:
        if not Path(cfg["db"]).exists():
            raise UsageError(f"database file not found: {cfg['db']}")
        return bench.TrajectoryDatabase.load(cfg["db"])
    return bench.generate(cfg["problem"], int(cfg["n"]), int(cfg["seed"]), int(cfg["s"]),
                          cfg["region"], int(cfg["p"]), cfg["subcase"], int(cfg["rotations"]))


def targets(db: bench.TrajectoryDatabase) -> dict:
    """Known Lagrangians to compare against, by name."""
    space = db.system.space
    out = {}
    try:
        out["target"] = bench.target_lagrangian(db.problem, space)
    except KeyError:
        pass
    if db.problem in ("exittime", "brockett") or db.problem.startswith("plp"):
        out["conserved"] = bench.conserved_lagrangian(space)
    return out


def similarities(L, db) -> dict:
    out = {}
    for name, ref in targets(db).items():
        try:
            out[name] = compare_lagrangians(L, ref).similarity
        except ValueError:
            out[name] = float("nan")
    return out


# -- subcommands -----------------------------------------------------------------

def cmd_gen(cfg: dict) -> int:
    if cfg["problem"] not in ("lq", "exitnorm", "exittime", "plp", "brockett"):
        raise UsageError(f"unknown problem {cfg['problem']!r}")
    db = database(dict(cfg, db=None))
    out = cfg["out"] or f"{db.problem}_n{len(db)}_seed{cfg['seed']}.json"
    db.save(out)
    issues = bench.check_database(db)
    print(f"wrote {out}: {len(db)} trajectories, {db.n_samples} samples, problem {db.problem}")
    print("invariant check: " + ("clean" if not issues else f"{len(issues)} issue(s)"))
    for msg in issues[:10]:
        print("  " + msg)
    return 0 if not issues else 1


def _solve_one(db, cls, d, cfg):
    return solve_iocp(db.system, db, cls, d, select=cfg["select"] or None,
                      weighting=cfg["weighting"])


def cmd_solve(cfg: dict) -> int:
    db = database(cfg)
    cls = LagrangianClass.parse(cfg["cls"])
    degrees = [int(v) for v in str(cfg["degrees"]).split(",")] if cfg["degrees"] else [int(cfg["degphi"])]
    out = Path(cfg["out"] or ".")
    out.mkdir(parents=True, exist_ok=True)
    ceiling = solver_ceiling()
    code = 0
    db_path = cfg["db"]
    if db_path is None:
        db_path = str(out / f"{db.problem}_n{len(db)}_seed{cfg['seed']}.json")
        db.save(db_path)
    runnable = [d for d in degrees if d <= ceiling]
    for d in degrees:
        if d > ceiling:
            asm = assemble(db.system, db, cls, d, weighting=cfg["weighting"])
            path = export_sdpa(asm.problem, out / f"{db.problem}_L{cls.a}{cls.b}_deg{d}.dat-s")
            print(f"deg_phi={d} exceeds the embedded ceiling {ceiling}: exported {path}")
            print(f"  size: {json.dumps(size_estimate(asm.problem))}; solve it with an external SDPA solver")
    sols = hierarchy(db.system, db, cls, runnable, select=cfg["select"] or None,
                     weighting=cfg["weighting"]) if len(runnable) > 1 else \
        [_solve_one(db, cls, d, cfg) for d in runnable]
    rows = []
    for sol in sols:
        sims = similarities(sol.L, db) if sol.status == "optimal" else {}
        bundle = result_bundle(sol, db.system, db.problem,
                               extra={"similarity": sims, "database": db_path})
        stem = f"{db.problem}_L{cls.a}{cls.b}_deg{sol.deg_phi}"
        (out / f"{stem}.json").write_text(dumps_bundle(bundle), encoding="utf-8")
        rows.append(csv_row(bundle, sims.get("target")))
        print(f"deg_phi={sol.deg_phi} class={cls} status={sol.status} eps*={sol.epsilon:.6g}")
        print(f"  L = {sol.L.to_string(4)}")
        for name, v in sims.items():
            print(f"  similarity to {name}: {v:.6f}")
        for note in sol.notes:
            print(f"  note: {note}")
        if sol.status != "optimal":
            code = 1
    with open(out / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        fh.writelines(rows)
    return code


def cmd_verify(cfg: dict, bundle_path: str | None) -> int:
    if not bundle_path or not Path(bundle_path).exists():
        raise UsageError("verify needs an existing --bundle file")
    text = Path(bundle_path).read_text(encoding="utf-8").strip()
    if not text:
        raise UsageError("empty result bundle")
    bundle = json.loads(text)
    if "L_terms" not in bundle:
        raise UsageError("file is not a result bundle")
    system, sol = bundle_solution(bundle)
    if not cfg["db"] and bundle.get("database") and Path(bundle["database"]).exists():
        cfg = dict(cfg, db=bundle["database"])
    db = database(cfg)
    rep = verify_certificate(system, db, sol, grid_points=int(cfg["grid"]))
    print(f"min H = {rep.min_H:.3e} at {rep.argmin_H}")
    print(f"max phi(T,.) on X_T = {rep.max_phi_XT:.3e}; terminal phi in [{rep.terminal_min:.3e}, "
          f"{rep.terminal_max:.3e}]; data integral {rep.integral:.6g} vs eps {rep.epsilon:.6g}")
    for v in rep.violations:
        print("VIOLATION: " + v)
    print("PASS" if rep.passed else "FAIL")
    return 0 if rep.passed else 2


def cmd_export(cfg: dict) -> int:
    db = database(cfg)
    cls = LagrangianClass.parse(cfg["cls"])
    asm = assemble(db.system, db, cls, int(cfg["degphi"]), weighting=cfg["weighting"])
    out = cfg["out"] or f"{db.problem}_L{cls.a}{cls.b}_deg{cfg['degphi']}.dat-s"
    export_sdpa(asm.problem, out)
    print(f"wrote {out}: {json.dumps(size_estimate(asm.problem))}")
    return 0


# -- table reproduction ----------------------------------------------------------

# (table, row, problem, options, class, deg_phi, reported eps, reported L)
TABLE_ROWS = [
    ("I", 1, "lq", {}, "1,1", 4, 7e-2, "0.78x1^2+0.82x1x2+2.11x2^2+1.12u^2"),
    ("I", 2, "lq", {}, "1,0", 10, 3.1e-1, "2.67x1^2-2.31x1x2+1.33x2^2"),
    ("I", 3, "lq", {}, "1,1", 10, 4.5e-6, "2x1^2+0.5x1x2+x2^2+u^2"),
    ("I", 4, "lq", {}, "2,2", 10, 4.5e-6, "2x1^2+0.5x1x2+x2^2+u^2"),
    ("II", 1, "exitnorm", {}, "1,1", 2, 0.0, "x1^2+x2^2+u1^2+u2^2"),
    ("II", 2, "exitnorm", {}, "2,2", 2, 0.0, "x1^2+x2^2+u1^2+u2^2"),
    ("II", 3, "exitnorm", {}, "1,1", 4, 0.0, "x1^2+x2^2+u1^2+u2^2"),
    ("II", 4, "exitnorm", {}, "2,2", 4, 0.0, "x1^2+x2^2+u1^2+u2^2"),
    ("II", 5, "exitnorm", {}, "0,1", 2, 2e-3, "1.97+0.54(u1^2+u2^2)"),
    ("III", 1, "exittime", {}, "0,1", 4, 1e-1, "0.31+0.34u1^2+0.36u2^2"),
    ("III", 2, "exittime", {}, "0,1", 12, 2e-2, "0.327+0.335u1^2+0.337u2^2"),
    ("III", 3, "exittime", {"region": "annulus"}, "0,1", 12, 2e-4, "0.338+0.326u1^2+0.336u2^2"),
    ("III", 4, "plp", {"p": 1, "s": 0, "rotations": 4}, "1,1", 2, 4.5e-2,
     "0.337u1^2+0.339u2^2+0.741x1^2+0.738x2^2"),
    ("III", 5, "exittime", {}, "1,1", 12, 3e-4, "x1^2+x2^2"),
    ("III", 6, "exittime", {}, "0,2", 4, 0.0, "(1-u1^2-u2^2)^2"),
    ("III", 7, "exittime", {}, "2,2", 4, 0.0, "(1-u1^2-u2^2)^2"),
    ("IV", 1, "brockett", {}, "0,1", 10, 8.31e-2, "0.313+0.339u1^2+0.348u2^2"),
    ("IV", 2, "brockett", {}, "0,1", 14, 4.36e-2, "0.323+0.338u1^2+0.339u2^2"),
    ("IV", 3, "brockett", {}, "0,2", 10, 0.0, "(1-u1^2-u2^2)^2"),
    ("IV", 4, "brockett", {}, "2,2", 10, 0.0, "(1-u1^2-u2^2)^2"),
    ("IV", 5, "brockett", {}, "1,1", 12, 1e-1, "m1(x)^T C1x m1(x)+0.31u1^2+0.35+0.33u2^2"),
]

TABLE_HEADER = ["table", "row", "problem", "options", "class", "deg_phi", "reported_eps", "eps",
                "status", "similarity_target", "similarity_conserved", "L", "reported_L", "sdpa_file"]


def _table_row(args):
    row, cfg, ceiling, outdir = args
    table, idx, problem, opts, cls_text, d, reported_eps, reported_L = row
    c = dict(cfg, problem=problem, db=None, region="ball", p=0, rotations=1)
    c.update(opts)
    db = database(c)
    cls = LagrangianClass.parse(cls_text)
    rec = {"table": table, "row": idx, "problem": problem, "options": json.dumps(opts, sort_keys=True),
           "class": cls_text, "deg_phi": d, "reported_eps": f"{reported_eps:.3g}", "eps": "",
           "status": "", "similarity_target": "", "similarity_conserved": "", "L": "",
           "reported_L": reported_L, "sdpa_file": ""}
    try:
        if d > ceiling:
            asm = assemble(db.system, db, cls, d)
            path = Path(outdir) / f"table{table}_row{idx}_deg{d}.dat-s"
            export_sdpa(asm.problem, path)
            rec["status"] = "exported"
            rec["sdpa_file"] = str(path)
            return rec
        sol = solve_iocp(db.system, db, cls, d)
        sims = similarities(sol.L, db) if sol.status == "optimal" else {}
        rec.update(eps=f"{sol.epsilon:.17g}", status=sol.status, L=sol.L.to_string(4),
                   similarity_target=f"{sims.get('target', float('nan')):.6f}",
                   similarity_conserved=f"{sims.get('conserved', float('nan')):.6f}"
                   if "conserved" in sims else "")
    except (CertificateError, ValueError, MemoryError) as exc:
        rec["status"] = f"error: {exc}"
    return rec


def cmd_tables(cfg: dict) -> int:
    outdir = Path(cfg["out"] or "tables")
    outdir.mkdir(parents=True, exist_ok=True)
    ceiling = solver_ceiling()
    work = [(row, cfg, ceiling, str(outdir)) for row in TABLE_ROWS]
    if int(cfg["jobs"]) > 1:
        with ProcessPoolExecutor(int(cfg["jobs"])) as ex:
            recs = list(ex.map(_table_row, work))   # map keeps (table, row) order
    else:
        recs = [_table_row(w) for w in work]
    for table in ("I", "II", "III", "IV"):
        path = outdir / f"table_{table}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, TABLE_HEADER)
            w.writeheader()
            w.writerows(r for r in recs if r["table"] == table)
        print(f"wrote {path}")
    for r in recs:
        print(f"  {r['table']:>3}.{r['row']} {r['problem']:9s} L_{{{r['class']}}} deg {r['deg_phi']:>2}: "
              f"{r['status']:9s} eps={r['eps'][:10]:10s} reported={r['reported_eps']}")
    return 0


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ioc", description="Inverse optimal control by relaxed HJB certificates")
    ap.add_argument("--config", help="JSON file with default option values")
    ap.add_argument("--dump-config", action="store_true", help="print the resolved configuration")
    sub = ap.add_subparsers(dest="command", required=True)

    def data_opts(p):
        p.add_argument("--problem", choices=["lq", "exitnorm", "exittime", "plp", "brockett"])
        p.add_argument("--db", help="database JSON (otherwise generated from the options)")
        p.add_argument("--n", type=int)
        p.add_argument("--s", type=int, help="samples per trajectory; 0 keeps start points only")
        p.add_argument("--seed", type=int)
        p.add_argument("--region", choices=["ball", "annulus"])
        p.add_argument("--p", type=int, help="exponent of the |x|^p family")
        p.add_argument("--subcase", choices=["planar", "axis", "mixed"])
        p.add_argument("--rotations", type=int, help="add rotated copies of every draw")
        p.add_argument("--out")

    def model_opts(p):
        p.add_argument("--class", dest="cls", help="Lagrangian class a,b")
        p.add_argument("--degphi", type=int)
        p.add_argument("--weighting", choices=["auto", "time", "samples"])

    data_opts(sub.add_parser("gen", help="generate a trajectory database"))
    p = sub.add_parser("solve", help="solve the inverse problem")
    data_opts(p)
    model_opts(p)
    p.add_argument("--degrees", help="comma-separated deg_phi list (hierarchy)")
    p.add_argument("--select", choices=["lowest_degree", ""], help="selection on exact faces")
    p = sub.add_parser("verify", help="check a result bundle against its database")
    data_opts(p)
    p.add_argument("--bundle")
    p.add_argument("--grid", type=int)
    p = sub.add_parser("tables", help="reproduce the four benchmark tables")
    p.add_argument("--out")
    p.add_argument("--jobs", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--s", type=int)
    p.add_argument("--seed", type=int)
    p = sub.add_parser("export-sdpa", help="write the SDP in SDPA sparse format")
    data_opts(p)
    model_opts(p)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.dump_config:
            print(json.dumps(dict(cfg, command=args.command), indent=1, sort_keys=True))
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "verify":
            return cmd_verify(cfg, args.bundle)
        if args.command == "tables":
            return cmd_tables(cfg)
        return cmd_export(cfg)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"ioc: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CertificateError, OSError) as exc:
        print(f"ioc: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
