#!/usr/bin/env python3
"""Print the divergence table: bounded inputs, doubly exponential rate, and
a solution that outruns every admissibility bound."""

import argparse
import json
import os
import tempfile

from dicholab.cli import run


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n-max", type=int, default=10,
                    help="last index of the table (default 10)")
    ap.add_argument("--out-dir", default=None,
                    help="report directory (default: a fresh temp dir)")
    args = ap.parse_args()
    out = args.out_dir or tempfile.mkdtemp(prefix="counterexample_")
    cfg = {"scenario": "counterexample",
           "counterexample": {"n_max": args.n_max}}
    rc = run(cfg, out_dir=out)
    with open(os.path.join(out, "report.json"), encoding="utf-8") as fh:
        rows = json.load(fh)["results"]["counterexample"]["rows"]
    print(f"{'n':>3}  {'log x_n':>20}  {'log lower bound':>20}")
    for r in rows:
        print(f"{r['n']:>3}  {r['log_x']:>20.10f}  {r['log_bound']:>20.10f}")
    print(f"\nreports written to {out}")
    return rc


if __name__ == "__main__":
    raise SystemExit(main())
