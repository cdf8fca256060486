"""Config files and CSV outputs."""

from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from ..controlplane import ChainSpec
from ..core import ClusterSpec
from ..decision import JoinDecisionConfig
from .scenarios import ResultRow, RunDetail, ScenarioConfig, ScenarioError, default_config
from .workload import TableSpec

RESULTS_FIELDS = ResultRow.CSV_FIELDS
TIMELINE_FIELDS = ("t_s", "alloc_high", "alloc_low", "total_slots")
EVENTS_FIELDS = ("t_s", "app", "action", "node", "count", "priority", "version")

_NESTED = {"cluster": ClusterSpec, "join": JoinDecisionConfig, "chain": ChainSpec}


def _replace(obj, overrides: Mapping[str, Any], where: str):
    names = {f.name for f in dataclasses.fields(obj)}
    unknown = set(overrides) - names
    if unknown:
        raise ScenarioError(f"unknown {where} keys: {sorted(unknown)}")
    return dataclasses.replace(obj, **overrides)


def config_from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    """Overlay a key tree on the scenario's defaults; every key is a ScenarioConfig field."""
    if "scenario" not in raw:
        raise ScenarioError("config needs a 'scenario' key")
    raw = dict(raw)
    base = default_config(raw.pop("scenario"))
    fields = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = set(raw) - fields
    if unknown:
        raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
    over: dict[str, Any] = {}
    for key, value in raw.items():
        if key in _NESTED:
            over[key] = _replace(getattr(base, key), value or {}, key)
        elif key == "tables":
            over[key] = [TableSpec(**t) for t in value]
        elif key == "strategy" and isinstance(value, str):
            over[key] = [value]
        else:
            over[key] = value
    return dataclasses.replace(base, **over)


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: expected a mapping at the top level")
    return config_from_dict(raw)


def config_to_dict(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ScenarioConfig, path: str | Path):
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def _write(path: Path, header: Iterable[str], rows: Iterable[Iterable]):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_results(path: str | Path, rows: list[ResultRow]):
    _write(Path(path), RESULTS_FIELDS, (r.csv_row() for r in rows))


def timeline_rows(detail: RunDetail):
    total = detail.cluster.spec.total_slots
    return [(t, hi, lo, total) for t, hi, lo in detail.metrics.timeline]


def event_rows(detail: RunDetail):
    ctl = getattr(detail.admission, "controller", None)
    if ctl is None:
        return []
    return [(f"{e.t:.6f}", e.app, e.action, e.node, e.count, e.priority.name.lower(), e.version) for e in ctl.log]


def write_outputs(cfg: ScenarioConfig, rows: list[ResultRow], out_dir: str | Path) -> list[Path]:
    """results.csv always; timeline.csv and events.csv for the shared-cell run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "results.csv"]
    write_results(written[0], rows)
    if cfg.scenario == "coshare" and rows:
        detail = rows[-1].detail
        _write(out / "timeline.csv", TIMELINE_FIELDS, timeline_rows(detail))
        _write(out / "events.csv", EVENTS_FIELDS, event_rows(detail))
        written += [out / "timeline.csv", out / "events.csv"]
    dump_config(cfg, out / "config.yaml")
    return written


def read_results(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
