#!/usr/bin/env python3
"""Hits and misses of the tailored policies and LRU/LFU/FIFO on the P2, P3 and P4 traces."""

import argparse
import csv
import time
from pathlib import Path

from fedcache.experiments import format_table3, table3


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=2000)
    ap.add_argument("--p3-rounds", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/table3.csv")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rows = table3(seed=args.seed, rounds=args.rounds, p3_rounds=args.p3_rounds)
    print(format_table3(rows))
    print(f"\n{time.perf_counter() - t0:.1f}s")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "trace", "hits", "misses", "total", "hit_rate"])
        for r in rows:
            w.writerow([r.policy, r.trace, r.hits, r.misses, r.total, f"{r.hit_rate:.4f}"])


if __name__ == "__main__":
    main()
