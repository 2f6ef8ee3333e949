"""Print an f1.csv sweep (from run_study.py or `eelsvae sweep`) as a magnitude x method table.

    python scripts/f1_table.py runs/study/f1.csv
"""
from __future__ import annotations

import csv
import sys


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    with open(argv[0], newline="") as fh:
        rows = list(csv.DictReader(fh))
    methods = list(dict.fromkeys(r["method"] for r in rows))
    mags = sorted({float(r["magnitude"]) for r in rows})
    f1 = {(r["method"], float(r["magnitude"])): float(r["f1"]) for r in rows}
    print("shift_eV " + " ".join(f"{m:>6s}" for m in methods))
    for g in mags:
        print(f"{g:8.1f} " + " ".join(f"{f1[(m, g)]:6.2f}" for m in methods))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
