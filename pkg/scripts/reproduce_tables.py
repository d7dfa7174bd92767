#!/usr/bin/env python3
"""Write the three comparison tables as JSON next to each other.

Usage: reproduce_tables.py [outdir] [--samples N] [--threads W]
"""

import argparse
import json
from pathlib import Path

from codingtree.bench import TABLES


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("outdir", nargs="?", default="tables")
    ap.add_argument("--samples", type=int)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, fn in TABLES.items():
        kw = {"seed": args.seed, "threads": args.threads}
        if args.samples:
            kw["samples"] = args.samples
        rows = fn(**kw)
        (out / f"{name}.json").write_text(json.dumps(rows, indent=2))
        print(f"{name}: {len(rows)} rows -> {out / (name + '.json')}")


if __name__ == "__main__":
    main()
