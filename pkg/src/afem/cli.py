"""``afem`` command line: run, oracle, verify and mesh-info.

Exit codes: 0 success, 1 usage or input error, 2 verification failure,
3 budget or convergence failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import (AfemError, BudgetExceeded, GuaranteeViolated, NoConvergence,
                     PrecisionExhausted)

EXIT_OK, EXIT_USAGE, EXIT_VERIFY, EXIT_BUDGET = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with status 2
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(text: str) -> int:
    v = int(float(text))
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _add_domain(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--mesh", metavar="FILE", help="initial mesh file")
    g.add_argument("--problem", metavar="NAME", help="catalog problem")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="afem", description="Adaptive P1 FEM with newest vertex bisection",
                     allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    r = sub.add_parser("run", help="run the adaptive loop", allow_abbrev=False)
    _add_domain(r)
    r.add_argument("--mu", type=float, default=0.5)
    r.add_argument("--marker", choices=("reference", "linear"), default="linear")
    r.add_argument("--max-dofs", type=_positive_int)
    r.add_argument("--max-iters", type=_positive_int)
    r.add_argument("--est-tol", type=float)
    r.add_argument("--cg-tol", type=float, default=1e-12)
    r.add_argument("--report", metavar="PATH", help="CSV report, or JSON when PATH ends in .json")
    r.add_argument("--svg-dir", metavar="DIR")
    r.add_argument("--threads", type=_positive_int, default=1)
    r.add_argument("--seed", type=int, default=0)

    o = sub.add_parser("oracle", help="brute-force optimal energies", allow_abbrev=False)
    _add_domain(o)
    o.add_argument("--m-max", type=int, default=6)
    o.add_argument("--report", metavar="PATH")
    o.add_argument("--threads", type=_positive_int, default=1)
    o.add_argument("--seed", type=int, default=0)

    v = sub.add_parser("verify", help="randomised verification suites", allow_abbrev=False)
    v.add_argument("--suite", required=True)
    v.add_argument("--n", type=_positive_int)
    v.add_argument("--seed", type=int, default=7)
    v.add_argument("--threads", type=_positive_int, default=1)

    m = sub.add_parser("mesh-info", help="summary of an initial mesh", allow_abbrev=False)
    _add_domain(m)
    m.add_argument("--k-max", type=int, default=0, help="generation bound for shape regularity")
    m.add_argument("--svg-dir", metavar="DIR")
    return parser


def _cmd_run(args) -> int:
    from .driver import AfemConfig, ReportWriter, run
    if args.mesh is None and args.problem is None:
        args.problem = "square-ones"
    cfg = AfemConfig(problem=args.problem, mesh=args.mesh, mu=args.mu, marker=args.marker,
                     max_dofs=args.max_dofs, max_iters=args.max_iters, est_tol=args.est_tol,
                     cg_tol=args.cg_tol, seed=args.seed, svg_dir=args.svg_dir)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    writer = ReportWriter(args.report) if args.report else None
    res = run(cfg, on_record=writer)
    last = res.records[-1]
    print(f"status={res.status} iterations={len(res.records)} leaves={last.leaves} "
          f"dofs={last.dofs} G={last.G!r} est2={last.est2!r}")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    from .fem import CATALOG, constant_source
    from .forest import load_initial
    from .oracle import enumerate_populations, g_opt_table, gopt_csv
    if args.mesh is not None:
        forest, source = load_initial(Path(args.mesh)), constant_source(1.0, "ones")
    else:
        name = args.problem or "square-ones"
        if name not in CATALOG:
            raise UsageError(f"unknown problem {name!r}")
        forest, source = load_initial(CATALOG[name].mesh_text), CATALOG[name].source
    if args.m_max < 0:
        raise UsageError("--m-max must be >= 0")
    table = g_opt_table(enumerate_populations(forest, args.m_max), source)
    text = gopt_csv(table, args.report)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_verify(args) -> int:
    from .verify import SUITES, run_suite
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    for name in names:
        if name not in SUITES:
            raise UsageError(f"unknown suite {name!r}; choose from {', '.join(sorted(SUITES))} or all")
    ok = True
    for name in names:
        res = run_suite(name, args.n, args.seed)
        print(res.table())
        ok &= res.passed
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_mesh_info(args) -> int:
    from .fem import CATALOG
    from .forest import load_initial, shape_regularity
    from .triangulation import Triangulation, emit_svg, matching_violations
    if args.mesh is not None:
        forest = load_initial(Path(args.mesh))
    else:
        name = args.problem or "square-ones"
        if name not in CATALOG:
            raise UsageError(f"unknown problem {name!r}")
        forest = load_initial(CATALOG[name].mesh_text)
    tri = Triangulation.bottom(forest)
    mesh = tri.mesh
    print(f"vertices {forest.n_root_vertices}")
    print(f"triangles {len(forest.roots)}")
    print(f"edges {mesh.n_edges} (interior {int(mesh.interior.sum())})")
    print(f"interior nodes {int((~mesh.boundary_node).sum())}")
    print(f"max denominator exponent {forest.e0}")
    print(f"shape regularity (k<={args.k_max}) {shape_regularity(forest, args.k_max)!r}")
    print(f"matching violations {len(matching_violations(tri))}")
    if args.svg_dir:
        d = Path(args.svg_dir)
        d.mkdir(parents=True, exist_ok=True)
        emit_svg(tri, d / "initial.svg")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "oracle": _cmd_oracle, "verify": _cmd_verify,
            "mesh-info": _cmd_mesh_info}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GuaranteeViolated as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except (NoConvergence, BudgetExceeded, PrecisionExhausted) as exc:
        print(f"budget or convergence failure: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (AfemError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
