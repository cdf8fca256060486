"""Price both join branches at every point of a sweep and compare with DYN.

Prints, per sweep value, the completion time with the join pinned to each
branch, the relative gap, and what the join node actually picked.  This is
how the T1/T2 thresholds in configs/ were chosen.

    python3 scripts/join_oracle.py join_size_sweep
    python3 scripts/join_oracle.py tpcds_subquery --T1 10 --T2 4
"""

import argparse
import dataclasses

from extfaas.bench.oracle import oracle_grid
from extfaas.bench.scenarios import default_config, run_scenario


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("scenario", choices=["join_size_sweep", "join_cluster_sweep", "tpcds_subquery"])
    p.add_argument("--T1", type=float)
    p.add_argument("--T2", type=int)
    args = p.parse_args()
    cfg = default_config(args.scenario, strategy=["DYN"])
    over = {k: v for k, v in (("T1", args.T1), ("T2", args.T2)) if v is not None}
    if over:
        cfg = dataclasses.replace(cfg, join=dataclasses.replace(cfg.join, **over))
    picked = {r.sweep_value: r.chosen_join for r in run_scenario(cfg)}
    print(f"{cfg.sweep_axis:>14} {'merge_join':>11} {'hash_join':>10} {'gap':>6}  cheaper     picked")
    for c in oracle_grid(cfg):
        mark = "" if picked[c.sweep_value] == c.cheaper or c.gap <= 0.10 else "  <- mismatch"
        print(f"{c.sweep_value!s:>14} {c.merge_join:11.2f} {c.hash_join:10.2f} {c.gap:6.1%}  "
              f"{c.cheaper:<11} {picked[c.sweep_value]}{mark}")


if __name__ == "__main__":
    main()
