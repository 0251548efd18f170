#!/usr/bin/env python3
"""P2 replay under seeded Zipfian reclamations with 3 replicas and with none."""

import argparse
import json
from pathlib import Path

from fedcache.config import Config
from fedcache.experiments import FAULT_RATE_PER_S, FAULT_SLOTS, fault_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rounds", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--rate", type=float, default=FAULT_RATE_PER_S, help="reclamations per simulated second")
    ap.add_argument("--zipf-s", type=float, default=1.0)
    ap.add_argument("--slots", type=int, default=FAULT_SLOTS, help="ranked function slots faults target")
    ap.add_argument("--out", default="results/faults.json")
    args = ap.parse_args()

    runs = fault_experiment(Config(), rounds=args.rounds, seed=args.seed, rate_per_s=args.rate,
                            zipf_s=args.zipf_s, n_functions=args.slots)
    summary = {}
    for name, r in runs.items():
        agg = r.report.aggregates()
        summary[name] = {"replicas": r.replicas, "faults": r.faults, "completion": r.completion,
                         "p50_s": agg["p50_s"], "p99_s": agg["p99_s"], "mean_s": agg["mean_s"],
                         "reroutes": r.report.info["reroutes"], "refetched": r.report.info["refetched"],
                         "consistency_errors": len(r.consistency_errors)}
        print(f"{name:<10} faults={r.faults:<4} completion={r.completion:.0%} p50={agg['p50_s']:.3f}s "
              f"p99={agg['p99_s']:.3f}s reroutes={r.report.info['reroutes']} refetched={r.report.info['refetched']}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
