#!/usr/bin/env python3
"""Latency and modelled cost: unified plane vs aggregator + object store / in-memory cache."""

import argparse
import csv
import dataclasses
import statistics
from pathlib import Path

from fedcache.config import Config
from fedcache.experiments import CompareRow, compare, reductions


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=20)
    ap.add_argument("--config", help="TOML config file")
    ap.add_argument("--out", default="results/compare.csv")
    args = ap.parse_args()

    cfg = Config.load(args.config)
    rows = compare(cfg, rounds=args.rounds)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.name for f in dataclasses.fields(CompareRow)])
        w.writerows(dataclasses.astuple(r) for r in rows)

    red = reductions(rows)
    print(f"{'workload':<20} {'vs objstore':>12} {'vs cache':>10}")
    for name, v in red.items():
        print(f"{name:<20} {v['objstore']:>12.1%} {v['cache']:>10.1%}")
    for mode in ("objstore", "cache"):
        vals = [v[mode] for v in red.values()]
        print(f"{mode}: mean reduction {statistics.mean(vals):.1%}, median {statistics.median(vals):.1%}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
