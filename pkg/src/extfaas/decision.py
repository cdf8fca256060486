"""Decision nodes and decision workflows.

A decision node maps a runtime view (data distribution plus slot status) to a
``DecisionTuple``; the workflow runner compiles each tuple into an execution
plan, runs it on the data plane and feeds the resulting distribution back into
the next decision.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .core import (
    ClusterSpec,
    DataDistribution,
    DecisionTuple,
    ExecutionPlan,
    ExtFaasError,
    InputRef,
    Metrics,
    NodeStatus,
    Placement,
    PolicyKind,
    Priority,
    SchedulePolicy,
    num_avail_slots,
    table_nodes,
    total_table_size,
)
from .dataplane import Cluster
from .operators import REGISTRY


class InvalidDecision(ExtFaasError):
    pass


class EmptyCandidateSet(ExtFaasError, ValueError):
    pass


class ExchangeArityMismatch(ExtFaasError):
    pass


class InvalidWorkflow(ExtFaasError):
    pass


class StageFailed(ExtFaasError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class RuntimeView:
    data_dist: DataDistribution
    node_status: NodeStatus
    cluster: ClusterSpec
    inputs: tuple[str, ...] = ()

    @property
    def all_nodes(self) -> tuple[int, ...]:
        return tuple(self.node_status)


@dataclass(frozen=True)
class DecisionNode:
    name: str
    logic: Callable[[RuntimeView, Mapping], DecisionTuple]
    config: Mapping = field(default_factory=dict)


def evaluate(node: DecisionNode, view: RuntimeView) -> DecisionTuple:
    try:
        out = node.logic(view, node.config)
    except ValueError as e:
        # SchedulePolicy rejects empty/duplicate candidate sets at construction
        raise InvalidDecision(f"invalid decision from node {node.name!r}: {e}") from e
    if not isinstance(out, DecisionTuple):
        raise InvalidDecision(f"invalid decision from node {node.name!r}: got {out!r}")
    if out.scale < 1:
        raise InvalidDecision(f"invalid decision from node {node.name!r}: scale {out.scale} < 1")
    if out.func not in REGISTRY:
        raise InvalidDecision(f"invalid decision from node {node.name!r}: unknown function {out.func!r}")
    if not out.schedule.candidate_nodes:
        raise InvalidDecision(f"invalid decision from node {node.name!r}: empty candidate set")
    return out


# -- placement ----------------------------------------------------------------

def place_round_robin(scale: int, nodes: Sequence[int], status: NodeStatus | None = None) -> list[int]:
    if not nodes:
        raise EmptyCandidateSet("empty candidate set")
    order = sorted(nodes)
    return [order[i % len(order)] for i in range(scale)]


def place_packing(scale: int, nodes: Sequence[int], status: NodeStatus) -> list[int]:
    """Fill the roomiest nodes first; overflow cycles over the same order and queues."""
    if not nodes:
        raise EmptyCandidateSet("empty candidate set")
    order = sorted(nodes, key=lambda n: (-status.free(n), n))
    out = []
    for n in order:
        take = min(status.free(n), scale - len(out))
        out.extend([n] * take)
    i = 0
    while len(out) < scale:
        out.append(order[i % len(order)])
        i += 1
    return out


def place(policy: SchedulePolicy, scale: int, status: NodeStatus) -> list[int]:
    if policy.kind == PolicyKind.ROUND_ROBIN:
        return place_round_robin(scale, policy.candidate_nodes, status)
    return place_packing(scale, policy.candidate_nodes, status)


# -- built-in decision logic --------------------------------------------------

@dataclass(frozen=True)
class JoinDecisionConfig:
    T1: float = 10.0
    T2: int = 4
    a: float = 40_000_000

    def __post_init__(self):
        if not (self.T1 > 0 and self.T2 >= 1 and self.a > 0):
            raise ValueError(f"invalid join decision config {self}")


def _join_inputs(view: RuntimeView, a_table, b_table):
    a_table = a_table or view.inputs[0]
    b_table = b_table or view.inputs[1]
    return (total_table_size(view.data_dist, a_table), total_table_size(view.data_dist, b_table),
            table_nodes(view.data_dist, a_table), table_nodes(view.data_dist, b_table))


def join_branches(view: RuntimeView, cfg: JoinDecisionConfig, a_table: str | None = None,
                  b_table: str | None = None) -> dict[str, DecisionTuple]:
    """Both tuples the join decision can emit for this view, keyed by function."""
    size_a, size_b, nodes_a, nodes_b = _join_inputs(view, a_table, b_table)
    merge_scale = max(1, math.ceil((size_a + size_b) / cfg.a))
    merge_nodes = tuple(sorted(set(nodes_a) | set(nodes_b))) or view.all_nodes
    hash_nodes = tuple(nodes_a) or view.all_nodes
    return {
        "merge_join": DecisionTuple("merge_join", merge_scale, SchedulePolicy(PolicyKind.ROUND_ROBIN, merge_nodes)),
        "hash_join": DecisionTuple("hash_join", max(1, num_avail_slots(view.node_status, hash_nodes)),
                                   SchedulePolicy(PolicyKind.PACKING, hash_nodes)),
    }


def builtin_join_decision(view: RuntimeView, cfg: JoinDecisionConfig,
                          a_table: str | None = None, b_table: str | None = None) -> DecisionTuple:
    """Merge join when the tables are comparable and A is spread wide, else broadcast hash join."""
    size_a, size_b, nodes_a, _ = _join_inputs(view, a_table, b_table)
    ratio = size_a / size_b if size_b > 0 else math.inf
    branches = join_branches(view, cfg, a_table, b_table)
    if ratio < cfg.T1 and len(nodes_a) > cfg.T2:
        return branches["merge_join"]
    return branches["hash_join"]


def join_decision_node(cfg: JoinDecisionConfig | None = None, name: str = "join_decision",
                       force: str | None = None) -> DecisionNode:
    """The built-in join node; ``force`` pins one branch (used to price the alternative)."""
    cfg = cfg or JoinDecisionConfig()
    if force is None:
        return DecisionNode(name, lambda view, conf: builtin_join_decision(view, conf["cfg"]), {"cfg": cfg})
    return DecisionNode(name, lambda view, conf: join_branches(view, conf["cfg"])[conf["force"]],
                        {"cfg": cfg, "force": force})


def _input_size(view: RuntimeView) -> int:
    return sum(total_table_size(view.data_dist, t) for t in view.inputs)


def default_decision(func: str, scale: int | None = None, bytes_per_instance: float | None = None,
                     name: str = "static") -> DecisionNode:
    """Fallback node: a fixed function, round-robin over every node.

    With ``bytes_per_instance`` the instance count follows the stage's input
    size, which is how the static join strategies scale.
    """
    if (scale is None) == (bytes_per_instance is None):
        raise ValueError("give exactly one of scale or bytes_per_instance")

    def logic(view, conf):
        n = conf["scale"]
        if n is None:
            n = max(1, math.ceil(_input_size(view) / conf["bytes_per_instance"]))
        return DecisionTuple(conf["func"], n, SchedulePolicy(PolicyKind.ROUND_ROBIN, view.all_nodes))

    return DecisionNode(name, logic, {"func": func, "scale": scale, "bytes_per_instance": bytes_per_instance})


def heaviest_nodes(view: RuntimeView, table: str, scale: int) -> tuple[int, ...]:
    """Nodes by descending local bytes of ``table``, just enough to seat ``scale`` instances."""
    by_bytes = sorted(view.all_nodes, key=lambda n: (-view.data_dist.bytes_on(table, n), n))
    out, room = [], 0
    for n in by_bytes:
        if room >= scale:
            break
        out.append(n)
        room += view.node_status.free(n)
    return tuple(out)


def max_node_share(view: RuntimeView, table: str) -> float:
    total = total_table_size(view.data_dist, table)
    if total == 0:
        return 0.0
    return max(view.data_dist.bytes_on(table, n) for n in table_nodes(view.data_dist, table)) / total


def scheduling_choice(view: RuntimeView, func: str, scale: int, skew_threshold: float = 0.5,
                      force: str | None = None) -> DecisionTuple:
    """Round-robin over all nodes, or packing onto the data-heavy nodes when the input is skewed."""
    table = view.inputs[0]
    use_packing = force == "packing" or (force is None and max_node_share(view, table) > skew_threshold)
    if use_packing:
        return DecisionTuple(func, scale, SchedulePolicy(PolicyKind.PACKING, heaviest_nodes(view, table, scale)))
    return DecisionTuple(func, scale, SchedulePolicy(PolicyKind.ROUND_ROBIN, view.all_nodes))


def scheduling_choice_node(func: str, scale: int, skew_threshold: float = 0.5, force: str | None = None,
                           name: str = "scheduling_choice") -> DecisionNode:
    return DecisionNode(name, lambda view, c: scheduling_choice(view, **c),
                        {"func": func, "scale": scale, "skew_threshold": skew_threshold, "force": force})


def consolidating_shuffle(view: RuntimeView, func: str, bytes_per_node: float) -> DecisionTuple:
    """Consolidate a stage onto as few nodes as its input needs.

    Takes ``ceil(input / bytes_per_node)`` nodes, most free slots first, and
    runs one instance per slot of their capacity, so a small
    stage collapses onto a single node and its exchange stays local.  Sizing
    by capacity rather than by free slots keeps the stage whole when
    low-priority work briefly holds those slots; it is admitted ahead of it.
    """
    need = max(1, math.ceil(_input_size(view) / bytes_per_node))
    order = sorted(view.all_nodes, key=lambda n: (-view.node_status.free(n), n))
    chosen = tuple(sorted(order[:need]))
    scale = sum(view.node_status[n].total_slots for n in chosen)
    # capacity-sized, so round-robin over the chosen nodes fills each exactly
    return DecisionTuple(func, scale, SchedulePolicy(PolicyKind.ROUND_ROBIN, chosen))


def consolidating_node(func: str, bytes_per_node: float, name: str = "consolidate") -> DecisionNode:
    return DecisionNode(name, lambda view, c: consolidating_shuffle(view, **c),
                        {"func": func, "bytes_per_node": bytes_per_node})


BUILTIN_NODES = {
    "static": default_decision,
    "join_decision": join_decision_node,
    "scheduling_choice": scheduling_choice_node,
    "consolidate": consolidating_node,
}


# -- workflows ----------------------------------------------------------------

PATTERNS = ("all-to-all", "broadcast", "one-to-one", "auto")
# "auto" stages take the exchange their chosen function needs
FUNC_PATTERN = {"merge_join": "all-to-all", "hash_join": "broadcast"}


@dataclass(frozen=True)
class MapStep:
    """Per-partition pre-processing run at each partition's home before the stage decides."""

    func: str = "scan_map"
    params: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class Stage:
    name: str
    node: DecisionNode
    inputs: tuple[str, ...]
    output: str
    pattern: str = "all-to-all"
    params: Mapping = field(default_factory=dict)
    map_step: MapStep | None = None

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise InvalidWorkflow(f"stage {self.name!r}: unknown exchange pattern {self.pattern!r}")


class DecisionWorkflow:
    def __init__(self, stages: Sequence[Stage], base_tables: Sequence[str] = ()):
        self.stages = list(stages)
        self.base_tables = tuple(base_tables)
        self.order = self._toposort()

    def _toposort(self) -> list[Stage]:
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise InvalidWorkflow("duplicate stage names")
        producer = {}
        for s in self.stages:
            if s.output in producer or s.output in self.base_tables:
                raise InvalidWorkflow(f"table {s.output!r} produced twice")
            producer[s.output] = s
        deps = {}
        for s in self.stages:
            d = set()
            for t in s.inputs:
                if t in producer:
                    d.add(producer[t].name)
                elif t not in self.base_tables:
                    raise InvalidWorkflow(f"stage {s.name!r} reads {t!r}, which is neither a base table nor produced")
            deps[s.name] = d
        order, done = [], set()
        while len(order) < len(self.stages):
            ready = [s for s in self.stages if s.name not in done and deps[s.name] <= done]
            if not ready:
                raise InvalidWorkflow("workflow has a cycle")
            order.append(ready[0])
            done.add(ready[0].name)
        return order


def _parts(dist: DataDistribution, table: str) -> list[tuple[int, int]]:
    """(part_id, home) pairs of a table, ascending by part id."""
    out = [(pid, share.node) for share in dist.entries(table) for pid in share.part_ids]
    return sorted(out)


def compile_plan(decision: DecisionTuple, view: RuntimeView, stage: Stage) -> ExecutionPlan:
    nodes = place(decision.schedule, decision.scale, view.node_status)
    dist = view.data_dist
    refs: list[list[InputRef]] = [[] for _ in nodes]
    pattern = stage.pattern
    if pattern == "auto":
        pattern = FUNC_PATTERN.get(decision.func, "all-to-all")
    if pattern == "all-to-all":
        for table in stage.inputs:
            for pid, _ in _parts(dist, table):
                for i in range(len(nodes)):
                    refs[i].append(InputRef(table, pid, "bucket", i, len(nodes)))
    elif pattern == "one-to-one":
        parts = _parts(dist, stage.inputs[0])
        if len(parts) != len(nodes):
            raise ExchangeArityMismatch(
                f"exchange arity mismatch in {stage.name!r}: {len(nodes)} instances, {len(parts)} producers")
        for i, (pid, _) in enumerate(parts):
            refs[i].append(InputRef(stage.inputs[0], pid, "full"))
    else:
        if len(stage.inputs) != 2:
            raise ExchangeArityMismatch(f"exchange arity mismatch in {stage.name!r}: broadcast needs two inputs")
        big, small = stage.inputs
        on_node: dict[int, list[int]] = {}
        for i, n in enumerate(nodes):
            on_node.setdefault(n, []).append(i)
        for pid, home in _parts(dist, big):
            local = on_node.get(home)
            if local:
                for j, i in enumerate(local):
                    refs[i].append(InputRef(big, pid, "chunk", j, len(local)))
            else:
                for i in range(len(nodes)):
                    refs[i].append(InputRef(big, pid, "chunk", i, len(nodes)))
        for pid, _ in _parts(dist, small):
            for i in range(len(nodes)):
                refs[i].append(InputRef(small, pid, "full"))
    placements = [Placement(i, decision.func, n, tuple(r)) for i, (n, r) in enumerate(zip(nodes, refs))]
    params = dict(stage.params)
    params["inputs"] = tuple(stage.inputs)
    return ExecutionPlan(stage.name, placements, stage.output, params).validate(decision)


def map_plan(stage: Stage, dist: DataDistribution, table: str) -> ExecutionPlan:
    step = stage.map_step
    placements = [Placement(i, step.func, home, (InputRef(table, pid, "full"),))
                  for i, (pid, home) in enumerate(_parts(dist, table))]
    params = dict(step.params)
    params["inputs"] = (table,)
    return ExecutionPlan(f"{stage.name}.map.{table}", placements, f"{stage.name}.map.{table}", params)


@dataclass
class StageReport:
    stage: str
    decision: DecisionTuple
    submitted_at: float
    started_at: float | None
    finished_at: float
    shuffle_bytes: int
    transfers: int
    nodes_used: tuple[int, ...]


@dataclass
class WorkflowResult:
    results: dict[str, list]
    metrics: Metrics
    report: list[StageReport]


def snapshot_view(cluster: Cluster, inputs: Sequence[str]) -> RuntimeView:
    return RuntimeView(cluster.dist.copy(), cluster.snapshot_status(), cluster.spec, tuple(inputs))


def run_stage(stage: Stage, cluster: Cluster, priority: Priority = Priority.HIGH, app: str = "query") -> StageReport:
    inputs = list(stage.inputs)
    if stage.map_step is not None:
        maps = []
        for table in stage.inputs:
            plan = map_plan(stage, cluster.dist, table)
            maps.append(cluster.submit_plan(plan, priority, app=app))
        cluster.run_until(lambda: all(m.done for m in maps))
        inputs = [m.plan.output_table for m in maps]
        stage = Stage(stage.name, stage.node, tuple(inputs), stage.output, stage.pattern, stage.params)
    view = snapshot_view(cluster, inputs)
    decision = evaluate(stage.node, view)
    plan = compile_plan(decision, view, stage)
    st = cluster.submit_plan(plan, priority, decision, app=app)
    cluster.run_until(lambda: st.done)
    return StageReport(stage.name, decision, st.submitted_at, st.first_start, st.finished_at,
                       st.shuffle_bytes, st.transfers, tuple(sorted({p.node for p in plan.placements})))


def run_workflow(workflow: DecisionWorkflow, cluster: Cluster, priority: Priority = Priority.HIGH,
                 app: str = "query", drain: bool = True, on_done: Callable | None = None) -> WorkflowResult:
    report = []
    for stage in workflow.order:
        try:
            report.append(run_stage(stage, cluster, priority, app))
        except ExtFaasError as e:
            raise StageFailed(stage.name, e) from e
    if on_done is not None:
        on_done(cluster)
    metrics = cluster.run_to_completion() if drain else cluster.metrics()
    results = {s.output: [r for p in cluster.table_partitions(s.output) for r in p.rows] for s in workflow.order}
    return WorkflowResult(results, metrics, report)
