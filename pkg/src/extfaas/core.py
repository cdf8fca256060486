"""Shared data model: rows, partitions, distributions, slot ledgers, decisions, plans, metrics."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

MB = 1_000_000


class ExtFaasError(Exception):
    """Base class for every error raised by this package."""


class TableNotFound(ExtFaasError, KeyError):
    def __init__(self, table):
        super().__init__(f"table not found: {table!r}")
        self.table = table

    def __str__(self):
        return self.args[0]


class NodeNotFound(ExtFaasError, KeyError):
    def __init__(self, node):
        super().__init__(f"node not found: {node!r}")
        self.node = node

    def __str__(self):
        return self.args[0]


class InvalidClusterSpec(ExtFaasError, ValueError):
    pass


class InvalidPlan(ExtFaasError, ValueError):
    pass


@dataclass(frozen=True, slots=True)
class Row:
    key: int
    payload_bytes: int
    payload_tag: int = 0

    def __post_init__(self):
        if self.payload_bytes < 1:
            raise ValueError("payload_bytes must be >= 1")


@dataclass(frozen=True, slots=True)
class JoinedRow:
    key: int
    left_tag: int
    right_tag: int
    payload_bytes: int


@dataclass(slots=True)
class Partition:
    table: str
    part_id: int
    rows: list
    home: int = 0
    size_bytes: int = -1

    def __post_init__(self):
        if self.size_bytes < 0:
            self.size_bytes = sum(r.payload_bytes for r in self.rows)

    def recount(self) -> int:
        return sum(r.payload_bytes for r in self.rows)


@dataclass(frozen=True)
class NodeShare:
    node: int
    size_bytes: int
    part_ids: tuple = ()


class DataDistribution:
    """Per-table placement: which nodes hold how many bytes of which partitions."""

    def __init__(self, tables: Mapping[str, Iterable] | None = None):
        self._tables: dict[str, list[NodeShare]] = {}
        for name, entries in (tables or {}).items():
            self.set_table(name, entries)

    def set_table(self, name: str, entries: Iterable):
        shares = []
        for e in entries:
            if isinstance(e, NodeShare):
                shares.append(e)
            else:
                node, size, *rest = e
                shares.append(NodeShare(int(node), int(size), tuple(rest[0]) if rest else ()))
        self._tables[name] = shares

    @classmethod
    def from_partitions(cls, partitions_by_table: Mapping[str, Sequence[Partition]]) -> "DataDistribution":
        dist = cls()
        for name, parts in partitions_by_table.items():
            dist.add_partitions(name, parts)
        return dist

    def add_partitions(self, name: str, parts: Sequence[Partition]):
        per_node: dict[int, list] = {}
        for p in parts:
            size, ids = per_node.get(p.home, (0, []))
            per_node[p.home] = (size + p.size_bytes, ids + [p.part_id])
        self._tables[name] = [NodeShare(n, s, tuple(ids)) for n, (s, ids) in sorted(per_node.items())]

    def entries(self, table: str) -> list[NodeShare]:
        try:
            return list(self._tables[table])
        except KeyError:
            raise TableNotFound(table) from None

    def tables(self) -> list[str]:
        return sorted(self._tables)

    def nodes(self) -> set[int]:
        return {s.node for shares in self._tables.values() for s in shares}

    def bytes_on(self, table: str, node: int) -> int:
        return sum(s.size_bytes for s in self.entries(table) if s.node == node)

    def __contains__(self, table):
        return table in self._tables

    def copy(self) -> "DataDistribution":
        out = DataDistribution()
        out._tables = {k: list(v) for k, v in self._tables.items()}
        return out

    def validate(self, node_count: int):
        for shares in self._tables.values():
            for s in shares:
                if not 0 <= s.node < node_count:
                    raise NodeNotFound(s.node)

    def __repr__(self):
        return f"DataDistribution({self._tables!r})"


def total_table_size(dist: DataDistribution, table: str) -> int:
    return sum(s.size_bytes for s in dist.entries(table))


def table_nodes(dist: DataDistribution, table: str) -> list[int]:
    """Ascending, duplicate-free node ids holding at least one byte of ``table``."""
    return sorted({s.node for s in dist.entries(table) if s.size_bytes > 0})


@dataclass(frozen=True)
class NodeSlots:
    total_slots: int
    free_slots: int
    queued_tasks: int = 0


class NodeStatus:
    """Point-in-time slot ledger keyed by node id."""

    def __init__(self, nodes: Mapping[int, NodeSlots]):
        for n, s in nodes.items():
            if s.total_slots < 1 or not 0 <= s.free_slots <= s.total_slots or s.queued_tasks < 0:
                raise ValueError(f"inconsistent slot ledger for node {n}: {s}")
        self._nodes = dict(sorted(nodes.items()))

    @classmethod
    def uniform(cls, node_count: int, slots: int) -> "NodeStatus":
        return cls({n: NodeSlots(slots, slots) for n in range(node_count)})

    @classmethod
    def from_free(cls, free: Mapping[int, int], total: int | Mapping[int, int] | None = None) -> "NodeStatus":
        def tot(n):
            if total is None:
                return max(free[n], 1)
            return total[n] if isinstance(total, Mapping) else total
        return cls({n: NodeSlots(tot(n), f) for n, f in free.items()})

    def __getitem__(self, node: int) -> NodeSlots:
        try:
            return self._nodes[node]
        except KeyError:
            raise NodeNotFound(node) from None

    def __iter__(self):
        return iter(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def items(self):
        return self._nodes.items()

    def free(self, node: int) -> int:
        return self[node].free_slots

    def total_free(self) -> int:
        return sum(s.free_slots for s in self._nodes.values())

    def total_slots(self) -> int:
        return sum(s.total_slots for s in self._nodes.values())

    def __eq__(self, other):
        return isinstance(other, NodeStatus) and self._nodes == other._nodes

    def __repr__(self):
        return f"NodeStatus({self._nodes!r})"


def num_avail_slots(status: NodeStatus, nodes: Iterable[int]) -> int:
    return sum(status[n].free_slots for n in set(nodes))


@dataclass(frozen=True)
class ClusterSpec:
    node_count: int = 6
    slots_per_node: int = 8
    net_bandwidth: float = 100 * MB
    compute_rate: float = 100 * MB
    sort_factor: float = 1.5
    net_latency: float = 0.0
    rng_seed: int = 0

    def validate(self):
        if self.node_count < 1 or self.slots_per_node < 1:
            raise InvalidClusterSpec(f"invalid cluster spec: need >=1 node and slot, got {self}")
        if min(self.net_bandwidth, self.compute_rate, self.sort_factor) <= 0 or self.net_latency < 0:
            raise InvalidClusterSpec(f"invalid cluster spec: rates must be positive, got {self}")
        return self

    @property
    def total_slots(self) -> int:
        return self.node_count * self.slots_per_node


class PolicyKind(str, enum.Enum):
    ROUND_ROBIN = "round-robin"
    PACKING = "packing"


@dataclass(frozen=True)
class SchedulePolicy:
    kind: PolicyKind
    candidate_nodes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        nodes = tuple(int(n) for n in self.candidate_nodes)
        if not nodes:
            raise ValueError("empty candidate set")
        if len(set(nodes)) != len(nodes):
            raise ValueError(f"duplicate candidate nodes: {nodes}")
        object.__setattr__(self, "candidate_nodes", nodes)


@dataclass(frozen=True)
class DecisionTuple:
    func: str
    scale: int
    schedule: SchedulePolicy


class Priority(enum.IntEnum):
    # lower value sorts first
    HIGH = 0
    LOW = 1


@dataclass(frozen=True)
class InputRef:
    """One slice of an upstream partition consumed by an instance.

    ``mode`` is ``"full"``, ``"bucket"`` (rows with ``key % of == index``) or
    ``"chunk"`` (rows whose position ``% of == index``).
    """

    table: str
    part_id: int
    mode: str = "full"
    index: int = 0
    of: int = 1


@dataclass(frozen=True)
class Placement:
    instance_id: int
    func: str
    node: int
    inputs: tuple[InputRef, ...] = ()


@dataclass
class ExecutionPlan:
    stage_id: str
    placements: list[Placement]
    output_table: str | None = None
    params: dict = field(default_factory=dict)
    duration: float | None = None  # fixed per-instance runtime; bypasses the cost model

    def validate(self, decision: DecisionTuple | None = None):
        if decision is not None:
            if len(self.placements) != decision.scale:
                raise InvalidPlan(f"{self.stage_id}: {len(self.placements)} placements for scale {decision.scale}")
            allowed = set(decision.schedule.candidate_nodes)
            for p in self.placements:
                if p.node not in allowed:
                    raise InvalidPlan(f"{self.stage_id}: instance {p.instance_id} on node {p.node} outside candidate set")
        return self


@dataclass
class Metrics:
    completion_time: float = 0.0
    resource_time_cost: float = 0.0
    cost_high: float = 0.0
    cost_low: float = 0.0
    timeline: list[tuple[int, int, int]] = field(default_factory=list)
