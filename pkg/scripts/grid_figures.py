#!/usr/bin/env python3
"""Grid data for every preset with a closed form, one CSV per preset.

Plot with docs/grid.gp, e.g. gnuplot -e "f='grids/tan_1d.csv'" docs/grid.gp
"""

import argparse
from pathlib import Path

from codingtree.bench import get_preset, preset_catalog, run_preset


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("outdir", nargs="?", default="grids")
    ap.add_argument("--samples", type=int, default=10**5)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--only", nargs="*", help="preset names")
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    names = args.only or [p.name for p in preset_catalog() if p.engine == "general1d"]
    for name in names:
        grid = get_preset(name).defaults["grid"]
        rep = run_preset(name, {"samples": args.samples, "threads": args.threads, "grid": grid,
                                "strict": False}, output=str(out / f"{name}.csv"))
        errs = [r["rel_error"] for r in rep.rows if r["rel_error"] is not None]
        worst = f"{max(errs):.4f}" if errs else "n/a"
        print(f"{name}: {len(rep.rows)} points, max relative error {worst}, failed {rep.failed}")


if __name__ == "__main__":
    main()
