"""Command line interface.

    twoscale run <cfg> [--out DIR] [--snapshot-every N] [--set key=value ...]
    twoscale errors <cfg> <ref-cfg> [--out FILE]
    twoscale sweep <cfg> --key NAME --values a,b,c [--reference REF] [--out FILE]
    twoscale cell <cfg> [--u U] [--steps N] [--theta a,b,c] [--out FILE]

Exit codes: 0 success, 2 configuration error, 3 solver failure.  The number
of worker processes for the cell problems is read from TWOSCALE_WORKERS.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .adaptivity import MicroMeshes
from .cell_problems import CellProblemError, effective_update
from .config import ConfigError, bundled_config, parse_config, parse_shape
from .coupling import CouplingError, shape_profile
from .experiments import (
    CELL_STUDY_COLUMNS,
    ERROR_COLUMNS,
    CellStudy,
    compare_runs,
    run,
    write_rows,
)
from .macro import MacroSolveError
from .mesh import MeshError, unit_cell
from .phasefield import PhaseFieldError, solve_phasefield

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
SOLVER_ERRORS = (CouplingError, PhaseFieldError, CellProblemError, MacroSolveError, MeshError, np.linalg.LinAlgError)

log = logging.getLogger("twoscale")


def _read(path):
    p = Path(path)
    if not p.exists() and not p.is_absolute() and bundled_config(path).exists():
        p = bundled_config(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"]) from None
    return text, str(p)


def load(path, overrides=()):
    """Load a configuration file (or a bundled one by name) with overrides."""
    text, source = _read(path)
    extra = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError([f"override {item!r} needs key=value"])
        k, v = item.split("=", 1)
        extra.append(f"{k.strip()} = {v.strip()}")
    return parse_config(text + "\n" + "\n".join(extra), source)


def _print_rows(rows, columns):
    print(",".join(columns))
    for r in rows:
        print(",".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in columns))


def cmd_run(args):
    cfg = load(args.config, args.set)
    out = args.out if args.out is not None else (cfg.output_dir or f"runs/{cfg.name}")
    rep = run(cfg, output_dir=out, snapshot_every=args.snapshot_every)
    last = rep.rows[-1] if rep.rows else None
    print(f"{cfg.name}: {len(rep.rows)} steps in {rep.wall_time:.1f}s, output in {out}")
    if last:
        print(
            f"t={last.t:g} u in [{last.u_min:.4g}, {last.u_max:.4g}] "
            f"porosity in [{last.por_min:.4g}, {last.por_max:.4g}] mean active {rep.mean_active:.1f}"
        )
    return EXIT_OK


def cmd_errors(args):
    cfg = load(args.config, args.set)
    ref_cfg = load(args.reference, args.set)
    if tuple(cfg.macro_domain) != tuple(ref_cfg.macro_domain) or tuple(cfg.macro_n) != tuple(ref_cfg.macro_n):
        raise ConfigError(["configuration and reference use different macro domains"])
    ref = run(ref_cfg, output_dir="")
    row = compare_runs(run(cfg, output_dir=""), ref)
    _print_rows([row], ERROR_COLUMNS)
    if args.out:
        write_rows(args.out, [row], ERROR_COLUMNS)
    return EXIT_OK


def cmd_sweep(args):
    load(args.config, args.set)  # fail early on a bad base configuration
    ref = run(load(args.reference, args.set), output_dir="") if args.reference else None
    rows = []
    for v in args.values.split(","):
        c = load(args.config, [*args.set, f"{args.key}={v}"])
        rep = run(c, output_dir="")
        row = {args.key: v, "wall_time": rep.wall_time, "active": rep.mean_active}
        if ref is not None:
            row.update(compare_runs(rep, ref))
        rows.append(row)
        log.info("%s=%s done in %.1fs", args.key, v, rep.wall_time)
    cols = list(rows[0])
    _print_rows(rows, cols)
    if args.out:
        write_rows(args.out, rows, cols)
    return EXIT_OK


def cmd_cell(args):
    cfg = load(args.config, args.set)
    if args.theta:
        study = CellStudy(u=args.u, dt=cfg.dt, T=args.steps * cfg.dt if args.steps else cfg.T,
                          shape=_first_shape(cfg.phi_init), coarse_n=cfg.micro_n, h_min=cfg.h_min,
                          params=cfg.params)
        rows = study.table([float(t) for t in args.theta.split(",")])
        _print_rows(rows, CELL_STUDY_COLUMNS)
        if args.out:
            write_rows(args.out, rows, CELL_STUDY_COLUMNS)
        return EXIT_OK
    shape = parse_shape(cfg.phi_init)
    shapes = [shape[2], shape[3]] if shape[0] == "split" else [shape]
    meshes = MicroMeshes(unit_cell(cfg.micro_n), cfg.cell_h_min, cfg.theta_r, cfg.lam)
    knobs = cfg.knobs
    out = []
    for s in shapes:
        phi = meshes.initial(shape_profile(s, cfg.lam))
        for _ in range(args.steps):
            phi, _ = solve_phasefield(phi, phi, args.u, cfg.dt, knobs, cfg.params)
        t = effective_update(phi, cfg.params, cfg.mu_f, with_permeability=True)
        out.append({"shape": str(s), "elements": phi.mesh.n_elements, "porosity": t.porosity,
                    "A": t.A.tolist(), "K": t.K.tolist()})
    text = json.dumps(out, indent=2)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def _first_shape(text):
    shape = parse_shape(text)
    if shape[0] == "split":
        raise ConfigError(["the theta study needs a single initial shape"])
    return text


def build_parser():
    p = argparse.ArgumentParser(prog="twoscale", description="Two-scale precipitation/dissolution simulator")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="configuration file (or name of a bundled one, e.g. test1.cfg)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a setting")

    r = sub.add_parser("run", help="run a simulation and write its outputs")
    common(r)
    r.add_argument("--out", help="output directory (default: output_dir or runs/<name>)")
    r.add_argument("--snapshot-every", type=int, default=None, help="VTK snapshot interval in steps")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("errors", help="space-time errors against a reference configuration")
    common(e)
    e.add_argument("reference")
    e.add_argument("--out")
    e.set_defaults(func=cmd_errors)

    s = sub.add_parser("sweep", help="run one configuration for several values of a key")
    common(s)
    s.add_argument("--key", required=True)
    s.add_argument("--values", required=True, help="comma separated values")
    s.add_argument("--reference", help="reference configuration for error columns")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("cell", help="effective tensors of single cells, or a micro adaptivity study")
    common(c)
    c.add_argument("--u", type=float, default=0.0, help="fixed concentration for the cell evolution")
    c.add_argument("--steps", type=int, default=0, help="phase-field steps before evaluating the tensors")
    c.add_argument("--theta", help="comma separated theta_r values: adaptive vs fine reference table")
    c.add_argument("--out")
    c.set_defaults(func=cmd_cell)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        hist = getattr(exc, "history", None)
        if hist:
            print("eps_M history: " + " ".join(f"{h:.3e}" for h in hist), file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
