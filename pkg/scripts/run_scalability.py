#!/usr/bin/env python3
"""p50 latency of 1..N concurrent requests against a fixed number of cached copies."""

import argparse
import json
from pathlib import Path

from fedcache.config import Config
from fedcache.experiments import scalability


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--instances", type=int, default=5)
    ap.add_argument("--max-concurrency", type=int, default=10)
    ap.add_argument("--out", default="results/scalability.json")
    args = ap.parse_args()

    p50 = scalability(Config(), instances=args.instances, concurrency=range(1, args.max_concurrency + 1))
    base = p50[1]
    for n, v in p50.items():
        print(f"{n:>3} concurrent: p50 {v:.4f}s ({v / base - 1:+.1%})")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"instances": args.instances, "p50_s": p50}, indent=2) + "\n")


if __name__ == "__main__":
    main()
