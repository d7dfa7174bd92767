"""Command line front end (`ct`)."""

from __future__ import annotations

import argparse
import json
import sys

from . import bench, codes, fdb
from .dsem import DDProblemSpec, dd_sample_H
from .expr import ExprError, parse
from .mc import RunConfig, SampleFailure, run_estimate, run_repeated
from .rng import SampleStream
from .tree import ProblemSpec, format_trace, sample_H


def _points(args) -> list[float]:
    if args.grid:
        return bench.parse_grid(args.grid)
    out = []
    for chunk in args.x:
        out.extend(float(v) for v in chunk.split(",") if v.strip())
    return out


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", type=int, default=10**5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--runs", type=int, default=1, help="independent repetitions")
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--no-strict", action="store_true",
                   help="count failed samples and drop them instead of aborting (biased)")


def _spec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--f", required=True, help="nonlinearity")
    p.add_argument("--t0", type=float, default=0.0)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--x", action="append", default=[], help="point(s), comma separated")
    p.add_argument("--grid", help="lo:hi:steps")
    p.add_argument("--rho-rate", type=float, default=1.0)
    p.add_argument("--max-nodes", type=int, default=10**7)
    p.add_argument("--dump-tree", action="store_true",
                   help="print sample 0 of the first point as an indented tree on stderr")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ct", description="Coding-tree Monte Carlo PDE solver")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("solve", help="1-D problem u_t + u_xx/2 + f(u, ..., d^n u) = 0")
    _spec_flags(p)
    p.add_argument("--phi", required=True, help="terminal condition in x")
    p.add_argument("--n", type=int, required=True, help="highest derivative order in f")
    p.add_argument("--code", default="Id", help="root code: Id, D<k> or F(l0,...,ln)")
    _run_flags(p)

    p = sub.add_parser("solve-dd", help="d-dimensional semilinear problem")
    _spec_flags(p)
    p.add_argument("--phi", required=True, help="terminal profile in s (ridge) or q (radial)")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--phi-form", choices=("ridge", "radial"), default="ridge")
    _run_flags(p)

    p = sub.add_parser("preset", help="run a catalog problem")
    p.add_argument("name", nargs="?", help="preset name; omit to list presets")
    p.add_argument("--T", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--d", type=int)
    p.add_argument("--phi0", type=float)
    p.add_argument("--rho-rate", type=float)
    p.add_argument("--grid", help="lo:hi:steps, or 'default' for the preset's grid")
    p.add_argument("--x", action="append", default=[])
    _run_flags(p)

    p = sub.add_parser("table", help="reproduce a comparison table")
    p.add_argument("name", choices=sorted(bench.TABLES))
    p.add_argument("--samples", type=int)
    p.add_argument("--runs", type=int, default=5, help="table2 only")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")

    p = sub.add_parser("cole-hopf", help="Monte Carlo reference for u_t + Δu = |∇u|^2")
    p.add_argument("--phi", required=True, help="terminal condition in x (d=1) or q (d>1)")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--x", type=float, default=0.0)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--samples", type=int, default=10**6)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("check-bounds", help="sufficient condition for |H| <= 1")
    p.add_argument("--K", type=float, required=True)
    p.add_argument("--rho-rate", type=float, required=True)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--order-cap", type=int, default=8)

    p = sub.add_parser("fdb-dump", help="Faà di Bruno table as CSV")
    p.add_argument("m", type=int)
    p.add_argument("k", type=int)

    p = sub.add_parser("mech-dump", help="list the mechanism atoms of a code")
    p.add_argument("code", help="Id, D<k> or F(l0,...,ln)")
    p.add_argument("--n", type=int, required=True)
    return ap


def _emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _report(rows, config, name, fmt, out) -> int:
    rep = bench.Report(name, config, rows)
    _emit(rep.to_csv() if fmt == "csv" else rep.to_json(), out)
    return 0 if rep.failed == 0 else 1


def _solve(args, dd: bool) -> int:
    xs = _points(args) or [0.0]
    if dd:
        spec = DDProblemSpec.from_text(
            args.f, args.phi, args.phi_form, args.dim, mu=args.mu, sigma=args.sigma, T=args.T,
            t0=args.t0, rho_rate=args.rho_rate, max_nodes=args.max_nodes,
        )
        code, sampler = codes.IDENTITY, dd_sample_H
    else:
        spec = ProblemSpec.from_text(args.f, args.phi, args.n, args.T, t0=args.t0,
                                     rho_rate=args.rho_rate, max_nodes=args.max_nodes)
        code, sampler = codes.parse_code(args.code), sample_H
    if args.dump_tree:
        trace = []
        sampler(spec, args.t0, xs[0], code, SampleStream.create(args.seed, 0, 0), trace=trace)
        if dd:
            text = "\n".join(f"{'  ' * r[0]}{r[1]}  t=[{r[2]:.6g}, {r[3]:.6g}]  factor={r[4]:.6g}"
                             f"  {'leaf' if r[5] else 'branch -> ' + str(r[6])}" for r in trace)
        else:
            text = format_trace(trace)
        print(text, file=sys.stderr)
    cfg = RunConfig(spec, [(args.t0, x) for x in xs], samples=args.samples, seed=args.seed,
                    threads=args.threads, runs=args.runs, strict_failures=not args.no_strict,
                    code=code)
    per_run = run_repeated(cfg) if cfg.runs > 1 else [run_estimate(cfg)]
    prob = bench.Problem("custom", spec, None, {})
    config = {k: v for k, v in vars(args).items() if k not in ("x", "grid")} | {"points": xs}
    return _report(bench.make_rows(prob, args.t0, xs, per_run), config, "custom",
                   args.format, args.out)


def _preset(args) -> int:
    if not args.name:
        for p in bench.preset_catalog():
            print(f"{p.name:16s} {p.engine:10s} {p.summary}")
        return 0
    preset = bench.get_preset(args.name)
    overrides = {k: getattr(args, k) for k in ("T", "alpha", "d", "phi0", "rho_rate")
                 if getattr(args, k) is not None}
    if args.grid:
        overrides["grid"] = preset.defaults["grid"] if args.grid == "default" else args.grid
    overrides.update(samples=args.samples, seed=args.seed, threads=args.threads, runs=args.runs,
                     strict=not args.no_strict)
    points = _points(argparse.Namespace(grid=None, x=args.x)) if args.x else None
    rep = bench.run_preset(args.name, overrides, args.out, args.format, points=points)
    if args.out is None:
        _emit(rep.to_csv() if args.format == "csv" else rep.to_json(), None)
    return 0 if rep.failed == 0 else 1


def _table(args) -> int:
    kw = {"seed": args.seed, "threads": args.threads}
    if args.samples is not None:
        kw["samples"] = args.samples
    if args.name == "table2":
        kw["runs"] = args.runs
    rows = bench.TABLES[args.name](**kw)
    _emit(json.dumps(rows, indent=2), args.out)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.cmd == "solve":
            return _solve(args, dd=False)
        if args.cmd == "solve-dd":
            return _solve(args, dd=True)
        if args.cmd == "preset":
            return _preset(args)
        if args.cmd == "table":
            return _table(args)
        if args.cmd == "cole-hopf":
            phi = parse(args.phi, ["x"] if args.dim == 1 else ["q"])
            value, se = bench.cole_hopf_oracle(phi, args.T, args.x, args.samples, args.seed,
                                               d=args.dim)
            print(f"{value!r},{se!r}")
            return 0
        if args.cmd == "check-bounds":
            print(codes.check_bounds(args.K, args.rho_rate, args.T, args.n, args.order_cap).value)
            return 0
        if args.cmd == "fdb-dump":
            _emit(fdb.dump_csv(args.m, args.k), None)
            return 0
        if args.cmd == "mech-dump":
            print(codes.dump_mechanism(codes.parse_code(args.code), args.n))
            return 0
    except SampleFailure as exc:
        print(f"ct: {exc}", file=sys.stderr)
        return 1
    except (ExprError, ValueError) as exc:
        print(f"ct: error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
