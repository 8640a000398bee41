#!/usr/bin/env python3
"""Honest vs poisoned federations, IID and non-IID, as an accuracy table.

    python scripts/reproduce_table4.py [--config configs/table4.yaml] [--out DIR]
"""

import argparse
from pathlib import Path

from fedpoison.config import parse_config
from fedpoison.experiment import emit_plotdata, run_matrix

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "table4.yaml")
    ap.add_argument("--out", default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    specs = parse_config(args.config, seed=args.seed, output=args.out)
    reports = run_matrix(specs, args.out, jobs=args.jobs)
    emit_plotdata(reports, Path(args.out or specs[0].output) / "plotdata")

    print(f"{'run':<28}{'accuracy':>10}{'Normal recall':>15}{'Normal rate':>13}")
    for rep in reports:
        if rep.get("failed"):
            print(f"{rep['run_id']:<28}  FAILED: {rep['error']}")
            continue
        fm = rep["final_metrics"]
        normal = next(c for c in fm["per_class"] if c["class"] == "Normal")
        rate = (rep.get("attack_rates") or {}).get("Normal")
        shown = "-" if rate is None else f"{100 * rate:.1f}%"
        print(f"{rep['run_id']:<28}{100 * fm['accuracy']:>9.2f}%{100 * normal['recall']:>14.1f}%"
              f"{shown:>13}")


if __name__ == "__main__":
    main()
