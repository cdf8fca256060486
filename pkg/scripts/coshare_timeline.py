"""Print the shared-cell allocation timeline as a text chart.

    python3 scripts/coshare_timeline.py
"""

from extfaas.bench.scenarios import default_config, run_point


def main():
    cfg = default_config("coshare")
    alone = run_point(cfg, "DYN", 0)
    shared = run_point(cfg, "DYN", 1)
    total = shared.detail.cluster.spec.total_slots
    for t, hi, lo in shared.detail.metrics.timeline:
        bar = "#" * hi + "." * lo
        print(f"{t:4d} {hi:3d} {lo:3d} {(hi + lo) / total:5.0%} {bar}")
    print(f"completion alone {alone.completion_s:.2f}s, with filler {shared.completion_s:.2f}s "
          f"({shared.completion_s / alone.completion_s:.3f}x)")


if __name__ == "__main__":
    main()
