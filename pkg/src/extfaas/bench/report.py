"""Summaries over result directories: normalized cost, crossovers, DYN ratios."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .io import read_results
from .scenarios import ScenarioError


class NoResults(ScenarioError):
    pass


def _num(v: str):
    try:
        f = float(v)
    except ValueError:
        return v
    return int(f) if f.is_integer() and "." not in v else f


def normalize(costs: list[float]) -> list[float]:
    """Each cost over the largest in its sweep; all-zero input maps to 1.0."""
    top = max(costs, default=0.0)
    if top <= 0:
        return [1.0] * len(costs)
    return [c / top for c in costs]


def crossover(values: list, first: list[float], second: list[float]):
    """First sweep value where the ordering of ``first`` vs ``second`` flips, else None."""
    sign0 = None
    for v, a, b in zip(values, first, second):
        if a == b:
            continue
        sign = a < b
        if sign0 is None:
            sign0 = sign
        elif sign != sign0:
            return v
    return None


def flips(first: list[float], second: list[float]) -> int:
    signs = [a < b for a, b in zip(first, second) if a != b]
    return sum(1 for x, y in zip(signs, signs[1:]) if x != y)


def dyn_ratios(by_strategy: dict[str, dict]) -> dict:
    """DYN completion over the best static completion, per sweep point."""
    dyn = by_strategy.get("DYN", {})
    statics = [by_strategy[s] for s in ("S-M", "S-H") if s in by_strategy]
    out = {}
    for v, t in dyn.items():
        best = [s[v] for s in statics if v in s]
        if best:
            out[v] = t / min(best)
    return out


@dataclass
class ScenarioSummary:
    scenario: str
    rows: list[dict]
    crossover: object
    flips: int
    pair: tuple[str, str] | None
    dyn_ratio: dict


def summarize(rows: list[dict]) -> list[ScenarioSummary]:
    by_scenario: dict[str, list[dict]] = defaultdict(list)
    for r in rows:
        by_scenario[r["scenario"]].append(r)
    out = []
    for scenario, rs in by_scenario.items():
        for r, n in zip(rs, normalize([float(r["cost_slot_s"]) for r in rs])):
            r["norm_cost"] = n
        strategies = list(dict.fromkeys(r["strategy"] for r in rs))
        values = list(dict.fromkeys(_num(r["sweep_value"]) for r in rs))
        times: dict[str, dict] = defaultdict(dict)
        for r in rs:
            times[r["strategy"]][_num(r["sweep_value"])] = float(r["completion_s"])
        pair = None
        cross, nflips = None, 0
        statics = [s for s in strategies if s != "DYN"]
        if len(statics) >= 2:
            pair = ("S-H", "S-M") if {"S-H", "S-M"} <= set(statics) else (statics[0], statics[1])
            a = [times[pair[0]].get(v) for v in values]
            b = [times[pair[1]].get(v) for v in values]
            if None not in a and None not in b:
                cross, nflips = crossover(values, a, b), flips(a, b)
        ratios = dyn_ratios(times)
        for r in rs:
            r["dyn_ratio"] = ratios.get(_num(r["sweep_value"]), "") if r["strategy"] == "DYN" else ""
        out.append(ScenarioSummary(scenario, rs, cross, nflips, pair, ratios))
    return out


def report(in_dir: str | Path) -> list[ScenarioSummary]:
    """Summarize every results.csv under ``in_dir`` and write summary.csv next to it."""
    root = Path(in_dir)
    files = sorted(root.rglob("results.csv")) if root.is_dir() else []
    rows = [r for f in files for r in read_results(f)]
    if not rows:
        raise NoResults(f"no results under {in_dir}")
    sums = summarize(rows)
    with open(root / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "strategy", "sweep_value", "completion_s", "cost_slot_s", "norm_cost", "dyn_ratio",
                    "chosen_join"])
        for s in sums:
            for r in s.rows:
                ratio = f"{r['dyn_ratio']:.4f}" if r["dyn_ratio"] != "" else ""
                w.writerow([s.scenario, r["strategy"], r["sweep_value"], r["completion_s"], r["cost_slot_s"],
                            f"{r['norm_cost']:.4f}", ratio, r["chosen_join"]])
    with open(root / "crossovers.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "first", "second", "crossover", "flips"])
        for s in sums:
            if s.pair:
                w.writerow([s.scenario, s.pair[0], s.pair[1], "" if s.crossover is None else s.crossover, s.flips])
    return sums


def format_summary(sums: list[ScenarioSummary]) -> str:
    lines = []
    for s in sums:
        lines.append(f"[{s.scenario}] {len(s.rows)} rows")
        if s.pair:
            where = "none" if s.crossover is None else s.crossover
            lines.append(f"  {s.pair[0]} vs {s.pair[1]}: crossover at {where} ({s.flips} flip(s))")
        for v, r in s.dyn_ratio.items():
            lines.append(f"  DYN / best static at {v}: {r:.3f}")
    return "\n".join(lines)
