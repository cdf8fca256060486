"""Run every scenario with its defaults and summarize the results.

    python3 scripts/run_all.py --out results
"""

import argparse

from extfaas.bench.cli import run_suite
from extfaas.bench.report import format_summary, report


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="results")
    p.add_argument("--seed", type=int)
    args = p.parse_args()
    for d in run_suite(args.out, args.seed):
        print(d)
    print(format_summary(report(args.out)))


if __name__ == "__main__":
    main()
