from collections import defaultdict

import pytest
from hypothesis import given, settings, strategies as st

from extfaas.core import (
    MB,
    ClusterSpec,
    DecisionTuple,
    ExecutionPlan,
    InputRef,
    InvalidClusterSpec,
    InvalidPlan,
    NodeNotFound,
    Partition,
    Placement,
    PolicyKind,
    Priority,
    Row,
    SchedulePolicy,
    table_nodes,
)
from extfaas.dataplane import (
    DONE,
    QUEUED,
    RUNNING,
    StageAlreadySubmitted,
    StalledExchange,
    charge_task_time,
    init_cluster,
    network_time,
)


def timed(stage, nodes, duration=1.0, func="noop", inputs=None):
    placements = [Placement(i, func, n, tuple(inputs[i]) if inputs else ()) for i, n in enumerate(nodes)]
    return ExecutionPlan(stage, placements, duration=duration)


def spec(nodes=1, slots=1, **kw):
    return ClusterSpec(node_count=nodes, slots_per_node=slots, **kw)


@pytest.mark.parametrize("n,s", [(6, 8), (1, 1), (12, 4)])
def test_init_all_free(n, s):
    c = init_cluster(spec(n, s))
    assert c.snapshot_status().total_free() == n * s
    assert c.clock == 0.0


def test_init_rejects_bad_spec():
    with pytest.raises(InvalidClusterSpec):
        init_cluster(spec(0, 8))


def test_load_table_placements():
    parts = [Partition("A", i, [Row(i, 10)]) for i in range(4)]
    c = init_cluster(spec(4, 1))
    dist = c.load_table("A", parts, [0, 1, 2, 3])
    assert [(s.node, len(s.part_ids)) for s in dist.entries("A")] == [(0, 1), (1, 1), (2, 1), (3, 1)]
    dist = init_cluster(spec(4, 1)).load_table("A", parts, [0, 0, 0, 0])
    assert table_nodes(dist, "A") == [0]
    with pytest.raises(NodeNotFound):
        init_cluster(spec(2, 1)).load_table("A", parts, [0, 1, 2, 3])
    assert c.clock == 0.0


@given(st.lists(st.integers(0, 5), min_size=1, max_size=10))
def test_load_table_nodes_equal_placement_set(placement):
    parts = [Partition("A", i, [Row(i, 3)]) for i in range(len(placement))]
    dist = init_cluster(spec(6, 1)).load_table("A", parts, placement)
    assert table_nodes(dist, "A") == sorted(set(placement))


def test_slot_cap():
    c = init_cluster(spec(1, 2))
    st_ = c.submit_plan(timed("s", [0, 0, 0, 0]))
    assert [i.state for i in st_.instances] == [RUNNING, RUNNING, QUEUED, QUEUED]
    m = c.run_to_completion()
    assert m.completion_time == 2.0


def test_high_before_low():
    c = init_cluster(spec(1, 1))
    c.submit_plan(timed("busy", [0]))
    low = c.submit_plan(timed("low", [0]), Priority.LOW)
    high = c.submit_plan(timed("high", [0]), Priority.HIGH)
    c.run_to_completion()
    assert high.instances[0].start == 1.0
    assert low.instances[0].start == 2.0


def test_plan_outside_candidates_rejected():
    c = init_cluster(spec(2, 1))
    dec = DecisionTuple("noop", 1, SchedulePolicy(PolicyKind.ROUND_ROBIN, (0,)))
    with pytest.raises(InvalidPlan):
        c.submit_plan(timed("s", [1]), decision=dec)
    assert c.instances == []


def test_duplicate_stage():
    c = init_cluster(spec())
    c.submit_plan(timed("s", [0]))
    with pytest.raises(StageAlreadySubmitted, match="stage already submitted"):
        c.submit_plan(timed("s", [0]))


def test_one_task():
    c = init_cluster(spec())
    c.submit_plan(timed("s", [0]))
    m = c.run_to_completion()
    assert (m.completion_time, m.resource_time_cost) == (1.0, 1.0)


def test_two_tasks_serialize_on_one_slot():
    c = init_cluster(spec(1, 1))
    c.submit_plan(timed("s", [0, 0]))
    m = c.run_to_completion()
    assert (m.completion_time, m.resource_time_cost) == (2.0, 2.0)


def test_two_tasks_parallel_on_two_nodes():
    c = init_cluster(spec(2, 1))
    c.submit_plan(timed("s", [0, 1]))
    m = c.run_to_completion()
    assert (m.completion_time, m.resource_time_cost) == (1.0, 2.0)


def test_run_without_plans():
    with pytest.raises(Exception, match="nothing submitted"):
        init_cluster(spec()).run_to_completion()


def test_snapshot_ledger():
    c = init_cluster(spec(2, 8))
    assert c.snapshot_status().free(0) == 8
    c.submit_plan(timed("s", [0, 0, 0]))
    snap = c.snapshot_status()
    assert snap.free(0) == 5 and snap.free(1) == 8
    assert snap.total_free() == sum(snap.free(n) for n in snap)


# -- cost model ---------------------------------------------------------------

def test_local_transfer_is_free():
    s = spec(2, 1)
    assert network_time(s, [(0, 0, 10**12)]) == 0.0


def test_scan_compute_time():
    s = spec(compute_rate=10 * MB)
    assert charge_task_time(s, "scan_map", 10 * MB) == 1.0


def test_merge_join_sort_factor():
    s = spec(compute_rate=10 * MB, sort_factor=1.5)
    assert charge_task_time(s, "merge_join", 10 * MB) == pytest.approx(2.5)


def _tally(transfers, bw):
    eg, ing = defaultdict(float), defaultdict(float)
    for src, dst, b in transfers:
        if src != dst:
            eg[src] += b / bw
            ing[dst] += b / bw
    return max(list(eg.values()) + list(ing.values()) + [0.0])


def test_broadcast_bottleneck_analytic():
    s = spec(12, 8, net_bandwidth=100 * MB)
    route = [(0, d, 80 * MB) for d in range(12)]
    assert network_time(s, route) == pytest.approx(8.8)
    assert _tally(route, s.net_bandwidth) == pytest.approx(8.8)
    assert charge_task_time(s, "hash_join", 0, route) == pytest.approx(8.8)


def test_broadcast_bottleneck_simulated():
    # B (80 MB, one partition on node 0) shipped to one instance per node
    s = spec(12, 8, net_bandwidth=100 * MB)
    c = init_cluster(s)
    c.load_table("B", [Partition("B", 0, [Row(0, 80 * MB)])], [0])
    refs = [[InputRef("B", 0, "full")] for _ in range(12)]
    c.submit_plan(timed("bcast", list(range(12)), duration=0.0, inputs=refs))
    m = c.run_to_completion()
    assert m.completion_time == pytest.approx(8.8)
    per_link = _tally([(t.src, t.dst, t.nbytes) for t in c.transfers], s.net_bandwidth)
    assert per_link == pytest.approx(8.8)


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4), st.integers(1, 10**8)), max_size=20))
def test_network_time_matches_tally(route):
    s = spec(5, 1, net_bandwidth=50 * MB)
    assert network_time(s, route) == pytest.approx(_tally(route, s.net_bandwidth))


# -- exchange -----------------------------------------------------------------

def test_stalled_exchange_names_instance():
    c = init_cluster(spec(1, 1))
    c.submit_plan(timed("wait", [0], inputs=[[InputRef("ghost", 0)]]))
    with pytest.raises(StalledExchange, match=r"wait#0@n0"):
        c.run_to_completion()


def test_missing_partition_of_known_table():
    c = init_cluster(spec(1, 1))
    c.load_table("A", [Partition("A", 0, [Row(1, 1)])], [0])
    with pytest.raises(InvalidPlan):
        c.submit_plan(timed("s", [0], inputs=[[InputRef("A", 3)]]))


def test_consumer_waits_for_producer_stage():
    c = init_cluster(spec(2, 1, compute_rate=1 * MB, net_bandwidth=1 * MB))
    c.load_table("A", [Partition("A", 0, [Row(1, 1 * MB)])], [0])
    prod = ExecutionPlan("p", [Placement(0, "scan_map", 0, (InputRef("A", 0),))], "mid", {"inputs": ("A",)})
    cons = ExecutionPlan("c", [Placement(0, "scan_map", 1, (InputRef("mid", 0),))], "out", {"inputs": ("mid",)})
    c.submit_plan(cons)
    c.submit_plan(prod)
    m = c.run_to_completion()
    (inst,) = c.stages["c"].instances
    assert inst.start == pytest.approx(2.0)  # 1 s compute, then 1 s transfer
    assert m.completion_time == pytest.approx(3.0)
    assert [r.key for r in c.table_partitions("out")[0].rows] == [1]


def test_run_until_defers_final_admission():
    c = init_cluster(spec(1, 1))
    a = c.submit_plan(timed("a", [0]))
    c.submit_plan(timed("bg", [0]), Priority.LOW)
    c.run_until(lambda: a.done)
    # the freed slot is still free for a decision made now
    assert c.free_slots(0) == 1
    b = c.submit_plan(timed("b", [0]))
    assert b.instances[0].state == RUNNING


# -- invariants ---------------------------------------------------------------

def random_workload(data):
    n = data.draw(st.integers(1, 3))
    slots = data.draw(st.integers(1, 3))
    c = init_cluster(spec(n, slots))
    for k in range(data.draw(st.integers(1, 4))):
        nodes = data.draw(st.lists(st.integers(0, n - 1), min_size=1, max_size=6))
        dur = data.draw(st.sampled_from([0.5, 1.0, 1.5, 2.0]))
        prio = data.draw(st.sampled_from(list(Priority)))
        c.submit_plan(timed(f"s{k}", nodes, dur), prio)
    return c


@settings(max_examples=60)
@given(st.data())
def test_slot_conservation_and_cap(data):
    c = random_workload(data)
    total = c.spec.total_slots
    while c.step():
        running = sum(h + l for h, l in c.running)
        assert c.snapshot_status().total_free() + running == total
        for n in range(c.spec.node_count):
            busy = sum(1 for i in c.instances if i.node == n and i.state == RUNNING)
            assert busy <= c.spec.slots_per_node
            # work conservation: no idle slot next to a ready instance
            if c.free_slots(n) > 0:
                assert c.next_ready(n) is None
    m = c.metrics()
    assert all(i.state == DONE for i in c.instances)
    assert m.resource_time_cost == pytest.approx(sum(i.end - i.start for i in c.instances))
    ticks = [t for t, _, _ in m.timeline]
    assert ticks == sorted(set(ticks))
    assert all(h + l <= total for _, h, l in m.timeline)


@settings(max_examples=30)
@given(st.lists(st.tuples(st.lists(st.integers(0, 1), min_size=1, max_size=4), st.sampled_from([0.5, 1.0])),
                min_size=1, max_size=3))
def test_deterministic(stages):
    runs = []
    for _ in range(2):
        c = init_cluster(spec(2, 2))
        for k, (nodes, dur) in enumerate(stages):
            c.submit_plan(timed(f"s{k}", nodes, dur))
        m = c.run_to_completion()
        runs.append((m, [(i.iid, i.start, i.end) for i in c.instances]))
    assert runs[0] == runs[1]
