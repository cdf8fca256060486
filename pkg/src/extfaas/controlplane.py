"""Two-tier control plane with Omega-style optimistic commits.

The global controller owns a versioned slot ledger (the cell).  Private
controllers snapshot it, plan against the snapshot and commit; a commit fails
with ``Conflict`` when any node it touches changed after the snapshot.  Conflicts
between applications are settled by retry order: High before Low, then arrival.
Running work is never preempted.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .core import ExtFaasError, Priority
from .dataplane import Cluster, TaskInstance


class AppExists(ExtFaasError):
    pass


class AppNotRegistered(ExtFaasError):
    pass


class ReleaseExceedsHolding(ExtFaasError):
    pass


@dataclass(frozen=True)
class AllocationRequest:
    app: str
    demand: Mapping[int, int]
    priority: Priority
    based_on_version: int

    def __post_init__(self):
        if any(c < 1 for c in self.demand.values()):
            raise ValueError(f"demand counts must be >= 1: {dict(self.demand)}")


@dataclass(frozen=True)
class Committed:
    version: int


@dataclass(frozen=True)
class Conflict:
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class Insufficient:
    nodes: tuple[int, ...]


@dataclass(frozen=True)
class CellSnapshot:
    free: dict[int, int]
    version: int


class CellState:
    """Per-node slot ledger of committed allocations."""

    def __init__(self, node_count: int, slots_per_node: int):
        self.total = {n: slots_per_node for n in range(node_count)}
        self.committed: dict[int, dict[tuple[str, Priority], int]] = {n: {} for n in range(node_count)}
        self.version = 0
        self.node_version = {n: 0 for n in range(node_count)}

    def used(self, node: int) -> int:
        return sum(self.committed[node].values())

    def free(self, node: int) -> int:
        return self.total[node] - self.used(node)

    def holding(self, app: str, node: int) -> int:
        return sum(c for (a, _), c in self.committed[node].items() if a == app)

    def apply(self, app: str, priority: Priority, counts: Mapping[int, int], sign: int):
        self.version += 1
        for n, c in counts.items():
            key = (app, priority)
            left = self.committed[n].get(key, 0) + sign * c
            if left:
                self.committed[n][key] = left
            else:
                self.committed[n].pop(key, None)
            self.node_version[n] = self.version

    def as_dict(self):
        return {n: dict(sorted(c.items())) for n, c in self.committed.items()}


@dataclass
class PrivateController:
    app: str
    priority: Priority
    workflow: object = None
    holdings: dict[int, int] = field(default_factory=dict)
    arrival: int = 0


@dataclass(frozen=True)
class CellEvent:
    t: float
    app: str
    action: str
    node: int
    count: int
    priority: Priority
    version: int


class GlobalController:
    def __init__(self, node_count: int, slots_per_node: int, clock: Callable[[], float] = lambda: 0.0):
        self.cell = CellState(node_count, slots_per_node)
        self.apps: dict[str, PrivateController] = {}
        self.clock = clock
        self.log: list[CellEvent] = []
        # ordered record of successful mutations, for replay
        self.history: list[tuple[str, Priority, dict[int, int], int]] = []
        self._arrivals = itertools.count()

    def register_app(self, app: str, priority: Priority, workflow=None) -> PrivateController:
        if app in self.apps:
            raise AppExists(f"app exists: {app!r}")
        ctl = PrivateController(app, Priority(priority), workflow, arrival=next(self._arrivals))
        self.apps[app] = ctl
        return ctl

    def snapshot_cell(self) -> CellSnapshot:
        return CellSnapshot({n: self.cell.free(n) for n in self.cell.total}, self.cell.version)

    def _log(self, app, action, counts, priority):
        for n, c in sorted(counts.items()):
            self.log.append(CellEvent(self.clock(), app, action, n, c, Priority(priority), self.cell.version))

    def try_commit(self, req: AllocationRequest):
        ctl = self.apps.get(req.app)
        if ctl is None:
            raise AppNotRegistered(f"app not registered: {req.app!r}")
        demand = {int(n): int(c) for n, c in req.demand.items()}
        stale = tuple(sorted(n for n in demand if self.cell.node_version[n] > req.based_on_version))
        if stale:
            self._log(req.app, "conflict", {n: demand[n] for n in stale}, req.priority)
            return Conflict(stale)
        short = tuple(sorted(n for n, c in demand.items() if self.cell.free(n) < c))
        if short:
            self._log(req.app, "insufficient", {n: demand[n] for n in short}, req.priority)
            return Insufficient(short)
        self.cell.apply(req.app, req.priority, demand, +1)
        for n, c in demand.items():
            ctl.holdings[n] = ctl.holdings.get(n, 0) + c
        self.history.append((req.app, req.priority, demand, +1))
        self._log(req.app, "commit", demand, req.priority)
        return Committed(self.cell.version)

    def release(self, app: str, counts: Mapping[int, int]) -> int:
        ctl = self.apps.get(app)
        if ctl is None:
            raise AppNotRegistered(f"app not registered: {app!r}")
        for n, c in counts.items():
            if c < 0 or ctl.holdings.get(n, 0) < c:
                raise ReleaseExceedsHolding(f"release exceeds holding: {app!r} holds {ctl.holdings.get(n, 0)} on node {n}, releasing {c}")
        counts = {int(n): int(c) for n, c in counts.items() if c}
        self.cell.apply(app, ctl.priority, counts, -1)
        for n, c in counts.items():
            ctl.holdings[n] -= c
            if not ctl.holdings[n]:
                del ctl.holdings[n]
        self.history.append((app, ctl.priority, counts, -1))
        self._log(app, "release", counts, ctl.priority)
        return self.cell.version

    def resolve_priority(self, pending: Sequence[AllocationRequest]) -> list[AllocationRequest]:
        """Retry order: High first, then by the requesting app's arrival."""
        return sorted(pending, key=lambda r: (r.priority, self.apps[r.app].arrival))

    def replay(self) -> CellState:
        cell = CellState(len(self.cell.total), next(iter(self.cell.total.values())))
        for app, prio, counts, sign in self.history:
            cell.apply(app, prio, counts, sign)
        return cell


def schedule_round(ctl: GlobalController, wants: Sequence[tuple[str, Callable[[CellSnapshot], dict]]],
                   launch: Callable[[str, dict], None], max_retries: int = 4) -> list:
    """One optimistic scheduling round.

    Every app plans against the same snapshot; commits are attempted in
    priority order and a stale or short request re-plans on a fresh snapshot.
    ``wants`` holds ``(app, plan_fn)`` where ``plan_fn(snapshot)`` returns a
    node -> count demand already clipped to the snapshot's free slots.
    """
    snap = ctl.snapshot_cell()
    reqs = []
    plans = {app: (lambda s, f=plan_fn: {n: c for n, c in f(s).items() if c > 0}) for app, plan_fn in wants}
    for app, _ in wants:
        demand = plans[app](snap)
        if demand:
            reqs.append(AllocationRequest(app, demand, ctl.apps[app].priority, snap.version))
    outcomes = []
    for req in ctl.resolve_priority(reqs):
        for _ in range(max_retries):
            res = ctl.try_commit(req)
            outcomes.append((req, res))
            if isinstance(res, Committed):
                launch(req.app, dict(req.demand))
                break
            fresh = ctl.snapshot_cell()
            demand = plans[req.app](fresh)
            if not demand:
                break
            req = AllocationRequest(req.app, demand, req.priority, fresh.version)
    return outcomes


@dataclass
class ChainSpec:
    length: int = 4
    duration: float = 1.0
    wave: int = 48

    def __post_init__(self):
        if self.length < 1 or self.duration <= 0 or self.wave < 1:
            raise ValueError(f"invalid chain spec {self}")


class BackgroundFiller:
    """Low-priority chains of fixed-duration tasks that soak up free slots."""

    def __init__(self, spec: ChainSpec, app: str = "background"):
        self.spec = spec
        self.app = app
        self.active = 0  # chains started and not finished
        self.continuations = 0  # chains waiting for a slot for their next task
        self.stopped = False
        self.chains_started = 0
        self.tasks_run = 0
        self._left: dict[int, int] = {}
        self._waiting: list[int] = []
        self._ids = itertools.count()

    def stop(self):
        self.stopped = True

    def wanted(self) -> int:
        new = 0 if self.stopped else self.spec.wave - self.active
        return len(self._waiting) + max(new, 0)

    def plan(self, snap: CellSnapshot, reserved: Mapping[int, int]) -> dict[int, int]:
        want = self.wanted()
        demand = {}
        for n in sorted(snap.free):
            if want <= 0:
                break
            room = snap.free[n] - reserved.get(n, 0)
            if room > 0:
                take = min(room, want)
                demand[n] = take
                want -= take
        return demand

    def next_task(self) -> int:
        if self._waiting:
            return self._waiting.pop(0)
        cid = next(self._ids)
        self._left[cid] = self.spec.length
        self.active += 1
        self.chains_started += 1
        return cid

    def task_done(self, chain: int):
        self.tasks_run += 1
        self._left[chain] -= 1
        if self._left[chain] > 0:
            self._waiting.append(chain)
        else:
            del self._left[chain]
            self.active -= 1


class SharedCellAdmission:
    """Data-plane admission that routes every slot grant through the global controller."""

    def __init__(self, high_app: str = "query", filler: BackgroundFiller | None = None, max_retries: int = 4):
        self.high_app = high_app
        self.filler = filler
        self.max_retries = max_retries
        self._chain_of: dict[int, int] = {}
        self._tags = itertools.count()

    def attach(self, cluster: Cluster):
        self.cluster = cluster
        self.controller = GlobalController(cluster.spec.node_count, cluster.spec.slots_per_node,
                                           clock=lambda: cluster.clock)
        self.controller.register_app(self.high_app, Priority.HIGH)
        if self.filler is not None:
            self.controller.register_app(self.filler.app, Priority.LOW)

    def _awaited(self) -> dict[int, int]:
        c = self.cluster
        return {n: c.ready_count(n, Priority.HIGH) for n in range(c.spec.node_count)}

    def _plan_high(self, snap: CellSnapshot) -> dict[int, int]:
        demand = {}
        for n, need in self._awaited().items():
            take = min(need, snap.free[n])
            if take > 0:
                demand[n] = take
        return demand

    def _plan_low(self, snap: CellSnapshot) -> dict[int, int]:
        # slots a High instance is waiting for are not offered to Low work
        return self.filler.plan(snap, self._awaited())

    def _launch(self, app: str, demand: dict[int, int]):
        c = self.cluster
        for n, k in sorted(demand.items()):
            for _ in range(k):
                if app == self.high_app:
                    c.start(c.next_ready(n, Priority.HIGH))
                else:
                    chain = self.filler.next_task()
                    inst = c.spawn("noop", n, Priority.LOW, self.filler.spec.duration, app,
                                   f"bg.{chain}.{next(self._tags)}")
                    self._chain_of[inst.iid] = chain
                    c.start(inst)

    def round(self, cluster: Cluster):
        wants = [(self.high_app, self._plan_high)]
        if self.filler is not None:
            wants.append((self.filler.app, self._plan_low))
        schedule_round(self.controller, wants, self._launch, self.max_retries)

    def on_finish(self, inst: TaskInstance):
        self.controller.release(inst.app, {inst.node: 1})
        if inst.app != self.high_app and self.filler is not None:
            self.filler.task_done(self._chain_of.pop(inst.iid))
