"""Command-line driver: ``gregsolid {synth,build,optimize,report}``.

Exit codes: 0 success, 1 usage error, 2 model ingestion or I/O failure,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time

from . import __version__
from .domain import generate_parametric_grid
from .errors import FittingError, IngestionError, NumericError
from .gregory import GregorySolid, map_grid
from .modelio import SYNTH_KINDS, dumps_model, load_model, model_from_dict, synth_model
from .optimize import SolverConfig, admm_solve, worker_count
from .quality import jacobian_vector, quality_report
from .report import dumps_report, make_report, optimization_section, quality_section, save_report
from .vtk import export_vtk

EXIT_OK, EXIT_USAGE, EXIT_INGEST, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("gregsolid")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_grid(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    try:
        res = tuple(int(p) for p in parts)
    except ValueError:
        res = ()
    if len(res) != 3 or min(res) < 1:
        raise argparse.ArgumentTypeError(f"grid must look like MxNxL with positive integers, got {text!r}")
    return res


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gregsolid", description="Gregory-solid volume parameterization toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic model file")
    s.add_argument("kind", choices=SYNTH_KINDS)
    s.add_argument("--magnitude", type=float, default=0.0)
    s.add_argument("--resolution", type=int, default=16, help="samples per face edge for sampled-grid patches")
    s.add_argument("-o", "--output", default="-", help="model file (default stdout)")

    def common(q, grid_default=None):
        q.add_argument("model", help="model file, or - for stdin")
        q.add_argument("--grid", type=parse_grid, default=grid_default, required=grid_default is None, help="per-block resolution MxNxL")
        q.add_argument("--samples", type=int, default=20, help="cross-tangent samples per field")

    b = sub.add_parser("build", help="build the Gregory solid and its hex grid")
    common(b)
    b.add_argument("-o", "--output", help="VTK file for the mapped grid")
    b.add_argument("--report", help="JSON report path (default: print to stdout)")

    o = sub.add_parser("optimize", help="build, then optimize the tangent patches")
    common(o)
    defaults = SolverConfig()
    o.add_argument("--mu", type=float, default=defaults.mu)
    o.add_argument("--nu", type=float, default=defaults.nu)
    o.add_argument("--rho", type=float, default=defaults.rho)
    o.add_argument("--epsilon", type=float, default=defaults.epsilon)
    o.add_argument("--max-iters", type=int, default=defaults.max_outer)
    o.add_argument("--tol", type=float, default=defaults.tol_factor, help="residual tolerance factor (times sqrt of the variable count)")
    o.add_argument("-o", "--output", help="VTK file for the optimized grid")
    o.add_argument("--report", help="JSON report path (default: print to stdout)")

    r = sub.add_parser("report", help="print grid quality of the initial Gregory solid")
    common(r, grid_default=(4, 4, 4))
    return p


def _load(path):
    if path == "-":
        try:
            return model_from_dict(json.loads(sys.stdin.read()))
        except json.JSONDecodeError as exc:
            raise IngestionError(f"stdin: invalid JSON ({exc})") from exc
    return load_model(path)


def _build(args):
    model = _load(args.model)
    d = model.domain
    t0 = time.perf_counter()
    solid = GregorySolid.from_patches(d, model.patches, samples=args.samples)
    grid = generate_parametric_grid(d, *args.grid)
    mesh = map_grid(solid, grid)
    seconds = time.perf_counter() - t0
    log.info("built %s: %d vertices, %d cells in %.2f s", model.metadata.get("name", d.name), grid.n_points, grid.n_cells, seconds)
    return model, solid, grid, mesh, seconds


def _emit(rep, path):
    if path:
        save_report(rep, path)
    else:
        sys.stdout.write(dumps_report(rep))


def cmd_synth(args):
    text = dumps_model(synth_model(args.kind, args.magnitude, args.resolution))
    if args.output == "-":
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_build(args, quality_only=False):
    model, solid, grid, mesh, seconds = _build(args)
    q = quality_report(mesh, seconds)
    if not quality_only and args.output:
        export_vtk(mesh, jacobian_vector(mesh), args.output)
    rep = make_report(model.metadata.get("name", model.domain.name), model.domain.name, quality_section(q, len(model.patches)))
    _emit(rep, None if quality_only else args.report)
    return EXIT_OK


def cmd_optimize(args):
    cfg = SolverConfig(mu=args.mu, nu=args.nu, rho=args.rho, epsilon=args.epsilon, max_outer=args.max_iters, tol_factor=args.tol)
    model, solid, grid, mesh, build_s = _build(args)
    q0 = quality_report(mesh, build_s)
    t0 = time.perf_counter()
    result = admm_solve(solid, grid, cfg)
    opt_s = time.perf_counter() - t0
    out = map_grid(result.solid, grid)
    q1 = quality_report(out, build_s + opt_s)
    log.info("optimized: l0 %d -> %d in %d iterations", result.initial["sparse_l0"], result.final["sparse_l0"], result.iterations)
    if args.output:
        export_vtk(out, jacobian_vector(out), args.output)
    n = len(model.patches)
    rep = make_report(
        model.metadata.get("name", model.domain.name),
        model.domain.name,
        quality_section(q1, n),
        initial_quality=quality_section(q0, n),
        optimization=optimization_section(result, cfg, opt_s),
    )
    _emit(rep, args.report)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        worker_count()  # validates GREGSOLID_THREADS
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "build":
            return cmd_build(args)
        if args.command == "optimize":
            return cmd_optimize(args)
        return cmd_build(args, quality_only=True)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except (NumericError, FittingError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
