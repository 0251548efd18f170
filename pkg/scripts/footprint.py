#!/usr/bin/env python3
"""Memory and function count to keep every update in memory vs the P2 resident window."""

import argparse

from fedcache.config import Config
from fedcache.metrics import footprint_tailored, footprint_untailored
from fedcache.traces import JobSpec


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clients", type=int, default=1000, help="updates per round")
    ap.add_argument("--rounds", type=int, default=1000)
    ap.add_argument("--replay-rounds", type=int, default=30, help="rounds replayed to measure the P2 peak")
    args = ap.parse_args()

    cfg = Config()
    spec = JobSpec(pool_size=args.clients, per_round=args.clients, rounds=args.rounds,
                   model_size_bytes=cfg.model_size_bytes)
    nbytes, fns = footprint_untailored(spec, cfg.effective_capacity_bytes)
    print(f"keep everything: {nbytes / 1e12:.1f}e12 B = {nbytes / 2**40:.2f} TiB, {fns} functions "
          f"at {cfg.effective_capacity_gib} GiB usable each")

    small = cfg.job_spec(rounds=args.replay_rounds)
    peak, peak_fns = footprint_tailored(small, "p2")
    print(f"P2 window ({small.per_round} updates/round, {args.replay_rounds} rounds replayed): "
          f"peak {peak / 1e9:.2f} GB in {peak_fns} functions (replicas included)")


if __name__ == "__main__":
    main()
