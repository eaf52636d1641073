#!/usr/bin/env python3
"""Convert a legacy MIL feature table into the canonical bag CSV.

Input rows are headerless: ``label,bag_id,x0,x1,...`` (the layout used by the
``mil`` PyPI package under ``mil/data/datasets/csv``). Labels are mapped to
0/1 (anything <= 0 becomes 0). Rows of one bag must be contiguous.

    python3 tools/convert_mil_csv.py musk1.csv data/musk1.csv --prefix musk1
"""
import argparse
import csv
import sys


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("src")
    ap.add_argument("dst")
    ap.add_argument("--prefix", default="bag")
    args = ap.parse_args()

    with open(args.src, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    if not rows:
        print("empty input", file=sys.stderr)
        return 1
    dim = len(rows[0]) - 2
    seen = set()
    last = None
    with open(args.dst, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["bag_id", "label"] + [f"f{i}" for i in range(dim)])
        for line, r in enumerate(rows, start=1):
            if len(r) - 2 != dim:
                print(f"line {line}: ragged row", file=sys.stderr)
                return 1
            bag = f"{args.prefix}_{int(float(r[1]))}"
            if bag != last:
                if bag in seen:
                    print(f"line {line}: bag {bag} is not contiguous", file=sys.stderr)
                    return 1
                seen.add(bag)
                last = bag
            label = 1 if float(r[0]) > 0 else 0
            w.writerow([bag, label] + r[2:])
    return 0


if __name__ == "__main__":
    sys.exit(main())
