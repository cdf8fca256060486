"""Deterministic discrete-event cluster.

Instances hold one slot while computing.  Data moves between nodes through an
exchange store whose transfers do not hold slots: every cross-node transfer
occupies the sender's egress link and the receiver's ingress link for
``net_latency + bytes / net_bandwidth`` seconds, links serving transfers in
issue order.  Intra-node exchange is free.  Operators run for real on the rows,
only time is simulated.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from . import operators
from .core import (
    ClusterSpec,
    DataDistribution,
    DecisionTuple,
    ExecutionPlan,
    ExtFaasError,
    InputRef,
    InvalidPlan,
    Metrics,
    NodeNotFound,
    NodeSlots,
    NodeStatus,
    Partition,
    Priority,
    TableNotFound,
)


class StageAlreadySubmitted(ExtFaasError):
    pass


class StalledExchange(ExtFaasError):
    def __init__(self, instances):
        self.instances = list(instances)
        desc = ", ".join(f"{i.stage_id}#{i.index}@n{i.node}" for i in self.instances[:5])
        super().__init__(f"stalled exchange: {len(self.instances)} instance(s) wait on inputs never produced: {desc}")


QUEUED, RUNNING, DONE = "Queued", "Running", "Done"


@dataclass(eq=False)
class TaskInstance:
    iid: int
    stage_id: str
    index: int
    func: str
    node: int
    priority: Priority
    app: str = "query"
    state: str = QUEUED
    start: float | None = None
    end: float | None = None
    inputs: tuple[InputRef, ...] = ()
    missing: int = 0
    duration: float | None = None
    delivered: int = 0
    declared: int = 0

    @property
    def ready(self) -> bool:
        return self.state == QUEUED and self.missing == 0


@dataclass(eq=False)
class StageState:
    plan: ExecutionPlan
    priority: Priority
    app: str
    instances: list[TaskInstance]
    remaining: int
    outputs: dict[int, Partition] = field(default_factory=dict)
    submitted_at: float = 0.0
    finished_at: float | None = None
    first_start: float | None = None
    shuffle_bytes: int = 0
    transfers: int = 0

    @property
    def done(self) -> bool:
        return self.remaining == 0


@dataclass
class Transfer:
    src: int
    dst: int
    nbytes: int
    start: float
    end: float


def network_time(spec: ClusterSpec, transfers: Iterable[tuple[int, int, int]]) -> float:
    """Bottleneck time of a transfer set: max over nodes of egress or ingress load.

    ``transfers`` holds ``(src, dst, bytes)``; same-node entries are free.
    """
    egress = defaultdict(float)
    ingress = defaultdict(float)
    for src, dst, nbytes in transfers:
        if src == dst:
            continue
        t = spec.net_latency + nbytes / spec.net_bandwidth
        egress[src] += t
        ingress[dst] += t
    return max(itertools.chain(egress.values(), ingress.values()), default=0.0)


def charge_task_time(spec: ClusterSpec, func: str, input_bytes: float,
                     output_route: Sequence[tuple[int, int, int]] = ()) -> float:
    """Analytic time of one task: compute over its input plus its data movement."""
    if func == "merge_join":
        work = input_bytes * (1 + spec.sort_factor)
    else:
        work = input_bytes
    return work / spec.compute_rate + network_time(spec, output_route)


class LocalAdmission:
    """Per-node FIFO within priority, High before Low."""

    def attach(self, cluster: "Cluster"):
        self.cluster = cluster

    def round(self, cluster: "Cluster"):
        for node in range(cluster.spec.node_count):
            while cluster.free_slots(node) > 0:
                inst = cluster.next_ready(node)
                if inst is None:
                    break
                cluster.start(inst)

    def on_finish(self, inst: TaskInstance):
        pass


class Cluster:
    """Handle to one simulated cluster; not safe for concurrent mutation."""

    def __init__(self, spec: ClusterSpec, admission=None):
        self.spec = spec.validate()
        n = spec.node_count
        self.clock = 0.0
        self._events: list = []
        self._seq = itertools.count()
        self._iid = itertools.count()
        self.running = [[0, 0] for _ in range(n)]  # per node: [high, low]
        self._ready = [(deque(), deque()) for _ in range(n)]
        self.egress_free = [0.0] * n
        self.ingress_free = [0.0] * n
        self.partitions: dict[tuple[str, int], Partition] = {}
        self.dist = DataDistribution()
        self.stages: dict[str, StageState] = {}
        self.instances: list[TaskInstance] = []
        self.transfers: list[Transfer] = []
        # exchange store: delivery key -> waiting instances / delivered flag
        self._waiting: dict[tuple, list[TaskInstance]] = defaultdict(list)
        self._delivered: set[tuple] = set()
        self._pending_refs: dict[str, list[tuple]] = defaultdict(list)
        self._slices: dict[tuple, list] = {}
        self.allocation_log: list[tuple[int, int, int]] = []
        self._next_tick = 0
        self._deferred = False
        self.listeners: list[Callable] = []
        self.admission = admission or LocalAdmission()
        self.admission.attach(self)

    # -- data -------------------------------------------------------------
    def _check_node(self, node: int):
        if not 0 <= node < self.spec.node_count:
            raise NodeNotFound(node)

    def load_table(self, name: str, partitions: Sequence[Partition], placement: Sequence[int]) -> DataDistribution:
        if len(partitions) != len(placement):
            raise ValueError(f"{len(partitions)} partitions but {len(placement)} placements")
        for node in placement:
            self._check_node(node)
        parts = []
        for i, (p, node) in enumerate(zip(partitions, placement)):
            q = Partition(name, i, list(p.rows), int(node))
            self.partitions[(name, i)] = q
            parts.append(q)
        self.dist.add_partitions(name, parts)
        return self.dist.copy()

    def table_partitions(self, name: str) -> list[Partition]:
        if name not in self.dist:
            raise TableNotFound(name)
        return [p for (t, _), p in sorted(self.partitions.items(), key=lambda kv: kv[0][1]) if t == name]

    # -- ledger -----------------------------------------------------------
    def free_slots(self, node: int) -> int:
        h, l = self.running[node]
        return self.spec.slots_per_node - h - l

    def snapshot_status(self) -> NodeStatus:
        out = {}
        for n in range(self.spec.node_count):
            queued = sum(1 for i in self.instances if i.node == n and i.state == QUEUED)
            out[n] = NodeSlots(self.spec.slots_per_node, self.free_slots(n), queued)
        return NodeStatus(out)

    def ready_count(self, node: int, priority: Priority) -> int:
        return len(self._ready[node][priority])

    def next_ready(self, node: int, priority: Priority | None = None) -> TaskInstance | None:
        queues = self._ready[node]
        for pr in (Priority.HIGH, Priority.LOW) if priority is None else (priority,):
            if queues[pr]:
                return queues[pr][0]
        return None

    # -- submission -------------------------------------------------------
    def submit_plan(self, plan: ExecutionPlan, priority: Priority = Priority.HIGH,
                    decision: DecisionTuple | None = None, app: str = "query") -> StageState:
        if plan.stage_id in self.stages:
            raise StageAlreadySubmitted(f"stage already submitted: {plan.stage_id!r}")
        plan.validate(decision)
        for p in plan.placements:
            self._check_node(p.node)
            operators.get_function(p.func)
        insts = []
        for p in plan.placements:
            inst = TaskInstance(next(self._iid), plan.stage_id, p.instance_id, p.func, p.node,
                                Priority(priority), app, inputs=tuple(p.inputs), duration=plan.duration)
            insts.append(inst)
            self.instances.append(inst)
        stage = StageState(plan, Priority(priority), app, insts, len(insts), submitted_at=self.clock)
        self.stages[plan.stage_id] = stage
        batch = []
        for inst in insts:
            keys = []
            for ref in inst.inputs:
                key = (plan.stage_id, ref.table, ref.part_id, ref.mode, ref.index, ref.of, inst.node)
                if key not in keys:
                    keys.append(key)
            inst.declared = len(keys)
            inst.missing = len(keys)
            for key in keys:
                first = key not in self._waiting and key not in self._delivered
                self._waiting[key].append(inst)
                if first:
                    batch.append(key)
        self._request(batch)
        if not insts:
            stage.finished_at = self.clock
        for inst in insts:
            if inst.declared == 0:
                self._make_ready(inst)
        self._deferred = False
        self._dispatch()
        return stage

    def _request(self, keys: list[tuple]):
        issue = []
        for key in keys:
            table, part_id = key[1], key[2]
            if (table, part_id) in self.partitions:
                issue.append(key)
            elif table in self.dist:
                raise InvalidPlan(f"partition {part_id} of table {table!r} does not exist")
            else:
                self._pending_refs[table].append(key)
        local, remote = [], []
        for key in issue:
            src = self.partitions[(key[1], key[2])].home
            (local if src == key[6] else remote).append((src, key))
        for _, key in local:
            self._deliver(key)
        # conflict-free rotation order for all-to-all batches
        n = self.spec.node_count
        remote.sort(key=lambda sk: ((sk[1][6] - sk[0]) % n, sk[0], sk[1][6]))
        for src, key in remote:
            rows = self._slice(key)
            nbytes = sum(r.payload_bytes for r in rows)
            dst = key[6]
            start = max(self.clock, self.egress_free[src], self.ingress_free[dst])
            end = start + self.spec.net_latency + nbytes / self.spec.net_bandwidth
            self.egress_free[src] = self.ingress_free[dst] = end
            self.transfers.append(Transfer(src, dst, nbytes, start, end))
            stage = self.stages.get(key[0])
            if stage is not None:
                stage.shuffle_bytes += nbytes
                stage.transfers += 1
            self._push(end, "deliver", key)

    def _slice(self, key: tuple) -> list:
        skey = key[1:6]
        if skey not in self._slices:
            table, part_id, mode, index, of = skey
            rows = self.partitions[(table, part_id)].rows
            if mode == "full":
                out = rows
            elif mode == "bucket":
                out = [r for r in rows if r.key % of == index]
            elif mode == "chunk":
                out = rows[index::of]
            else:
                raise InvalidPlan(f"unknown input mode {mode!r}")
            self._slices[skey] = out
        return self._slices[skey]

    # -- events -----------------------------------------------------------
    def _push(self, t: float, kind: str, payload):
        heapq.heappush(self._events, (t, next(self._seq), kind, payload))

    def _deliver(self, key):
        self._delivered.add(key)
        for inst in self._waiting.pop(key, []):
            inst.missing -= 1
            inst.delivered += 1
            if inst.ready:
                self._make_ready(inst)

    def _make_ready(self, inst: TaskInstance):
        self._ready[inst.node][inst.priority].append(inst)

    def start(self, inst: TaskInstance):
        assert inst.ready and self.free_slots(inst.node) > 0, inst
        assert inst.delivered == inst.declared, "barrier violated"
        q = self._ready[inst.node][inst.priority]
        if q and q[0] is inst:
            q.popleft()
        else:
            q.remove(inst)
        self.running[inst.node][inst.priority] += 1
        inst.state = RUNNING
        inst.start = self.clock
        stage = self.stages[inst.stage_id]
        if stage.first_start is None:
            stage.first_start = self.clock
        rows, work = self._execute(inst, stage)
        stage.outputs[inst.index] = Partition(stage.plan.output_table or inst.stage_id, inst.index, rows, inst.node)
        dur = inst.duration if inst.duration is not None else work / self.spec.compute_rate
        self._push(self.clock + dur, "finish", inst)

    def _execute(self, inst: TaskInstance, stage: StageState):
        declared = stage.plan.params.get("inputs", ())
        inputs = {name: [] for name in declared}
        for ref in inst.inputs:
            key = (inst.stage_id, ref.table, ref.part_id, ref.mode, ref.index, ref.of, inst.node)
            inputs.setdefault(ref.table, []).extend(self._slice(key))
        fn = operators.get_function(inst.func)
        return fn.run(inputs, stage.plan.params, self.spec.sort_factor)

    def _finish(self, inst: TaskInstance):
        inst.state = DONE
        inst.end = self.clock
        self.running[inst.node][inst.priority] -= 1
        self.admission.on_finish(inst)
        stage = self.stages[inst.stage_id]
        stage.remaining -= 1
        if stage.done:
            stage.finished_at = self.clock
            out = stage.plan.output_table
            if out:
                parts = [stage.outputs[i.index] for i in stage.instances]
                for p in parts:
                    self.partitions[(out, p.part_id)] = p
                self.dist.add_partitions(out, parts)
                self._request(self._pending_refs.pop(out, []))
        for fn in self.listeners:
            fn(self, inst)

    def _sample_until(self, t: float):
        while self._next_tick < t:
            high = sum(r[0] for r in self.running)
            low = sum(r[1] for r in self.running)
            self.allocation_log.append((self._next_tick, high, low))
            self._next_tick += 1

    def _dispatch(self):
        self.admission.round(self)

    def _advance(self) -> bool:
        """Process every event at the next event time, without an admission round."""
        self._flush()
        if not self._events:
            return False
        t = self._events[0][0]
        self._sample_until(t)
        assert t >= self.clock
        self.clock = t
        while self._events and self._events[0][0] == t:
            _, _, kind, payload = heapq.heappop(self._events)
            if kind == "deliver":
                self._deliver(payload)
            elif kind == "finish":
                self._finish(payload)
            elif kind == "call":
                payload(self)
        return True

    def _flush(self):
        if self._deferred:
            self._deferred = False
            self._dispatch()

    def step(self) -> bool:
        """Process every event at the next event time, then run an admission round."""
        if not self._advance():
            return False
        self._dispatch()
        return True

    def call_at(self, t: float, fn: Callable):
        self._push(max(t, self.clock), "call", fn)

    def run_until(self, done: Callable[[], bool]):
        """Step until ``done()``.

        The admission round of the final instant is held back, so a caller that
        submits the next stage right away decides before freed slots are
        handed out; any later step or submission runs it first.
        """
        while not done():
            if not self._advance():
                self._raise_stall()
                break
            if done():
                self._deferred = True
                break
            self._dispatch()

    def _raise_stall(self):
        stuck = [i for i in self.instances if i.state == QUEUED]
        if stuck:
            waiting = [i for i in stuck if i.missing > 0]
            raise StalledExchange(waiting or stuck)

    def spawn(self, func: str, node: int, priority: Priority, duration: float, app: str, tag: str) -> TaskInstance:
        """Create a single input-less instance (background work), returned ready."""
        plan = ExecutionPlan(tag, [], None, duration=duration)
        inst = TaskInstance(next(self._iid), tag, 0, func, node, Priority(priority), app, duration=duration)
        self.instances.append(inst)
        self.stages[tag] = StageState(plan, Priority(priority), app, [inst], 1, submitted_at=self.clock)
        self._make_ready(inst)
        return inst

    def run_to_completion(self) -> Metrics:
        if not self.stages:
            raise ExtFaasError("nothing submitted")
        while self.step():
            pass
        self._raise_stall()
        self._sample_until(math.floor(self.clock) + 1)
        return self.metrics()

    def metrics(self) -> Metrics:
        done = [i for i in self.instances if i.state == DONE]
        high = [i for i in done if i.priority == Priority.HIGH]
        completion = max((i.end for i in high), default=0.0)
        cost_h = sum(i.end - i.start for i in high)
        cost_l = sum(i.end - i.start for i in done if i.priority == Priority.LOW)
        return Metrics(completion, cost_h + cost_l, cost_h, cost_l, list(self.allocation_log))


def init_cluster(spec: ClusterSpec, admission=None) -> Cluster:
    return Cluster(spec, admission)
