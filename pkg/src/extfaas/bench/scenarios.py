"""The benchmark scenarios and the three query strategies (S-M, S-H, DYN)."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

from ..controlplane import BackgroundFiller, ChainSpec, SharedCellAdmission
from ..core import MB, ClusterSpec, ExtFaasError, Metrics
from ..dataplane import Cluster
from ..decision import (
    DecisionWorkflow,
    JoinDecisionConfig,
    MapStep,
    Stage,
    WorkflowResult,
    consolidating_node,
    default_decision,
    join_decision_node,
    run_workflow,
    scheduling_choice_node,
)
from .workload import TableSpec, gen_from_spec

SCENARIOS = ("join_size_sweep", "join_cluster_sweep", "sched_skew", "tpcds_subquery", "coshare")
STRATEGIES = ("S-M", "S-H", "DYN")


class ScenarioError(ExtFaasError):
    pass


@dataclass
class ScenarioConfig:
    scenario: str
    cluster: ClusterSpec
    tables: list[TableSpec]
    strategy: list[str]
    sweep_axis: str
    sweep_values: list
    seed: int = 7
    out_dir: str = "results"
    join: JoinDecisionConfig = field(default_factory=lambda: JoinDecisionConfig(T1=32.0, T2=1, a=40 * MB))
    static_mb_per_instance: float = 60.0
    dyn_mb_per_node: float = 450.0
    skew_threshold: float = 0.5
    skew_scale: int = 8
    selectivity: float = 0.5
    combine: bool = True
    chain: ChainSpec = field(default_factory=ChainSpec)
    size_nodes: dict | None = None  # tpcds_subquery: input GB -> node count, e.g. {2: 2, 4: 4, 6: 6}

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ScenarioError(f"unknown scenario {self.scenario!r}")
        numeric = [v for v in self.sweep_values if isinstance(v, (int, float))]
        if len(numeric) == len(self.sweep_values) and any(b <= a for a, b in zip(numeric, numeric[1:])):
            raise ScenarioError("sweep values must be strictly increasing")

    def table(self, name: str) -> TableSpec:
        for t in self.tables:
            if t.name == name:
                return t
        raise ScenarioError(f"scenario {self.scenario!r} has no table {name!r}")


@dataclass
class ResultRow:
    scenario: str
    strategy: str
    sweep_value: Any
    completion_s: float
    cost_slot_s: float
    chosen_join: str
    seed: int
    detail: Any = field(default=None, repr=False, compare=False)

    CSV_FIELDS = ("scenario", "strategy", "sweep_value", "completion_s", "cost_slot_s", "chosen_join", "seed")

    def csv_row(self) -> list:
        return [self.scenario, self.strategy, self.sweep_value, f"{self.completion_s:.6f}",
                f"{self.cost_slot_s:.6f}", self.chosen_join, self.seed]


@dataclass
class RunDetail:
    result: WorkflowResult
    cluster: Cluster
    admission: Any = None
    filler: BackgroundFiller | None = None

    @property
    def metrics(self) -> Metrics:
        return self.result.metrics


def default_config(scenario: str, **overrides) -> ScenarioConfig:
    mk = _DEFAULTS.get(scenario)
    if mk is None:
        raise ScenarioError(f"unknown scenario {scenario!r}")
    cfg = mk()
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _join_defaults(scenario, nodes, values, axis):
    return ScenarioConfig(
        scenario=scenario,
        cluster=ClusterSpec(node_count=nodes, slots_per_node=8, net_bandwidth=100 * MB,
                            compute_rate=100 * MB, sort_factor=1.5, net_latency=0.0),
        tables=[TableSpec("A", 400, 4000, key_space=20000),
                TableSpec("B", 80, 800, key_space=20000, partitions=1, home=0)],
        strategy=["S-M", "S-H"],
        sweep_axis=axis,
        sweep_values=values,
    )


def _sched_defaults():
    return ScenarioConfig(
        scenario="sched_skew",
        # the skewed node's ingress, not its compute, has to be the cheaper path
        cluster=ClusterSpec(node_count=8, slots_per_node=8, net_bandwidth=200 * MB),
        tables=[TableSpec("A", 400, 4000, key_space=20000),
                TableSpec("B", 20, 200, key_space=20000, partitions=1, home=0)],
        strategy=["round-robin", "packing"],
        sweep_axis="key_dist",
        sweep_values=["uniform", "pareto"],
    )


def _tpcds_defaults(scenario="tpcds_subquery", values=(2, 4, 6), strategies=("S-M", "S-H", "DYN")):
    # aggregates are near-equal in size, so only the node threshold separates
    # the branches; T2=2 lets a two-node reduce keep the local hash join
    return ScenarioConfig(
        scenario=scenario,
        # slow per-slot rates put the 6 GB query at about a minute, so 1 s
        # background tasks are short next to a stage
        cluster=ClusterSpec(node_count=6, slots_per_node=8, compute_rate=4 * MB, net_bandwidth=50 * MB),
        tables=[TableSpec("T1", 750, 15000, key_space=800, partitions=48, layout="rows"),
                TableSpec("T2", 750, 15000, key_space=800, partitions=48, layout="rows")],
        strategy=list(strategies),
        sweep_axis="input_gb",
        sweep_values=list(values),
        join=JoinDecisionConfig(T1=32.0, T2=2, a=40 * MB),
    )


_DEFAULTS = {
    "join_size_sweep": lambda: _join_defaults("join_size_sweep", 12, list(range(10, 101, 10)), "small_table_mb"),
    "join_cluster_sweep": lambda: _join_defaults("join_cluster_sweep", 12, list(range(2, 17, 2)), "nodes"),
    "sched_skew": _sched_defaults,
    "tpcds_subquery": _tpcds_defaults,
    "coshare": lambda: dataclasses.replace(_tpcds_defaults("coshare", values=[0, 1], strategies=("DYN",)),
                                           sweep_axis="filler"),
}


# -- workflows ----------------------------------------------------------------

def join_workflow(strategy: str, cfg: ScenarioConfig, force_join: str | None = None) -> DecisionWorkflow:
    bpi = cfg.static_mb_per_instance * MB
    node = {
        "S-M": lambda: default_decision("merge_join", bytes_per_instance=bpi),
        "S-H": lambda: default_decision("hash_join", bytes_per_instance=bpi),
        "DYN": lambda: join_decision_node(cfg.join, force=force_join),
    }[strategy]()
    return DecisionWorkflow([Stage("join", node, ("A", "B"), "AB", "auto")], base_tables=("A", "B"))


def skew_workflow(strategy: str, cfg: ScenarioConfig) -> DecisionWorkflow:
    force = {"round-robin": "round-robin", "packing": "packing", "DYN": None}[strategy]
    node = scheduling_choice_node("hash_join", cfg.skew_scale, cfg.skew_threshold, force)
    return DecisionWorkflow([Stage("join", node, ("A", "B"), "AB", "broadcast")], base_tables=("A", "B"))


def tpcds_workflow(strategy: str, cfg: ScenarioConfig, force_join: str | None = None) -> DecisionWorkflow:
    """Two scan+aggregate phases feeding a join."""
    static_bpi = cfg.static_mb_per_instance * MB
    if strategy == "DYN":
        agg = lambda: consolidating_node("group_by", cfg.dyn_mb_per_node * MB)
        join = join_decision_node(cfg.join, force=force_join)
    else:
        agg = lambda: default_decision("group_by", bytes_per_instance=static_bpi)
        join = default_decision("merge_join" if strategy == "S-M" else "hash_join", bytes_per_instance=static_bpi)
    if cfg.combine:
        # partial counts at the map side, folded by the reducers
        scan = MapStep("scan_group_by", {"selectivity": cfg.selectivity, "agg": "count"})
        reduce = {"agg": "sum_tag"}
    else:
        scan = MapStep("scan_map", {"selectivity": cfg.selectivity})
        reduce = {"agg": "count"}
    stages = [
        Stage("q1", agg(), ("T1",), "agg1", "all-to-all", reduce, scan),
        Stage("q2", agg(), ("T2",), "agg2", "all-to-all", reduce, scan),
        Stage("q3", join, ("agg1", "agg2"), "joined", "auto"),
    ]
    return DecisionWorkflow(stages, base_tables=("T1", "T2"))


# -- running ------------------------------------------------------------------

def _load(cluster: Cluster, specs: list[TableSpec], seed: int):
    for i, spec in enumerate(specs):
        parts, placement = gen_from_spec(spec, seed + 1000 * i, cluster.spec.node_count)
        cluster.load_table(spec.name, parts, placement)


def _scaled(spec: TableSpec, size_mb: float) -> TableSpec:
    rows = max(1, round(spec.rows * size_mb / spec.size_mb))
    return dataclasses.replace(spec, size_mb=size_mb, rows=rows)


def _chosen_join(res: WorkflowResult) -> str:
    for rep in reversed(res.report):
        if rep.decision.func in ("merge_join", "hash_join"):
            return rep.decision.func
    return ""


def run_point(cfg: ScenarioConfig, strategy: str, value, force_join: str | None = None) -> ResultRow:
    """One grid point on a fresh cluster.

    ``force_join`` pins DYN's join decision to one branch, which is how the
    cost oracle prices the branch DYN did not take.
    """
    spec = cfg.cluster
    tables = list(cfg.tables)
    filler = None
    admission = None
    if cfg.scenario == "join_size_sweep":
        tables = [tables[0], _scaled(cfg.table("B"), value)]
        wf = join_workflow(strategy, cfg, force_join)
    elif cfg.scenario == "join_cluster_sweep":
        spec = dataclasses.replace(spec, node_count=int(value))
        wf = join_workflow(strategy, cfg, force_join)
    elif cfg.scenario == "sched_skew":
        a = dataclasses.replace(cfg.table("A"), dist=value)
        tables = [a] + [t for t in tables if t.name != "A"]
        wf = skew_workflow(strategy, cfg)
    elif cfg.scenario == "tpcds_subquery":
        if cfg.size_nodes and value in cfg.size_nodes:
            spec = dataclasses.replace(spec, node_count=int(cfg.size_nodes[value]))
        tables = _tpcds_tables(cfg, value)
        wf = tpcds_workflow(strategy, cfg, force_join)
    else:
        tables = _tpcds_tables(cfg, 6)
        wf = tpcds_workflow(strategy, cfg, force_join)
        if int(value):
            filler = BackgroundFiller(dataclasses.replace(cfg.chain))
        admission = SharedCellAdmission("query", filler)
    cluster = Cluster(spec, admission)
    _load(cluster, tables, cfg.seed)
    on_done = (lambda c: filler.stop()) if filler is not None else None
    res = run_workflow(wf, cluster, on_done=on_done)
    m = res.metrics
    return ResultRow(cfg.scenario, strategy, value, m.completion_time, m.cost_high, _chosen_join(res), cfg.seed,
                     RunDetail(res, cluster, admission, filler))


def _tpcds_tables(cfg: ScenarioConfig, input_gb: float) -> list[TableSpec]:
    """Scale the configured tables so together they hold ``input_gb``.

    Key cardinality grows with the data, as dimension tables do with scale factor.
    """
    f = input_gb * 1000 / sum(t.size_mb for t in cfg.tables)
    return [dataclasses.replace(_scaled(t, t.size_mb * f), key_space=max(1, round(t.key_space * f)))
            for t in cfg.tables]


def run_scenario(cfg: ScenarioConfig) -> list[ResultRow]:
    rows = []
    for value in cfg.sweep_values:
        for strategy in cfg.strategy:
            try:
                rows.append(run_point(cfg, strategy, value))
            except ExtFaasError as e:
                raise ScenarioError(f"{cfg.scenario} [{cfg.sweep_axis}={value}, strategy={strategy}]: {e}") from e
    return rows
