"""Independent reference implementations used by the test-suite."""

import itertools
import math

from extfaas.core import MB, ClusterSpec, DataDistribution, NodeStatus
from extfaas.decision import RuntimeView


def literal_join_rule(size_a, size_b, nodes_a, T1, T2):
    """The join node's conditional, written out literally."""
    if size_b == 0:
        return "hash_join"
    if size_a / size_b < T1 and nodes_a > T2:
        return "merge_join"
    return "hash_join"


def join_view(size_a, size_b, nodes_a, node_count=8, slots=8, b_node=0, free=None):
    """A spread evenly over the first ``nodes_a`` nodes, B whole on ``b_node``."""
    share = size_a // nodes_a
    a = [(n, share + (size_a - share * nodes_a if n == nodes_a - 1 else 0)) for n in range(nodes_a)]
    dist = DataDistribution({"A": a, "B": [(b_node, size_b)]})
    status = NodeStatus.from_free(free or {n: slots for n in range(node_count)}, total=slots)
    return RuntimeView(dist, status, ClusterSpec(node_count, slots), ("A", "B"))


def min_nodes_to_seat(scale, free):
    """Fewest nodes whose free slots add up to ``scale``, by exhaustive search."""
    nodes = list(free)
    for k in range(1, len(nodes) + 1):
        if any(sum(free[n] for n in combo) >= scale for combo in itertools.combinations(nodes, k)):
            return k
    return None


def check_round_robin(out, scale, nodes):
    assert len(out) == scale
    assert set(out) <= set(nodes)
    counts = [out.count(n) for n in nodes]
    assert max(counts) - min(counts) <= 1


def check_packing(out, scale, nodes, free):
    assert len(out) == scale
    assert set(out) <= set(nodes)
    if sum(free[n] for n in nodes) >= scale:
        assert all(out.count(n) <= free[n] for n in set(out))
        assert len(set(out)) == min_nodes_to_seat(scale, {n: free[n] for n in nodes})


SIZES_MB = [10 * (i + 1) for i in range(20)]


def join_rule_grid():
    for a in SIZES_MB:
        for b in SIZES_MB:
            for k in range(1, 9):
                yield a * MB, b * MB, k


def merge_scale(size_a, size_b, a):
    return max(1, math.ceil((size_a + size_b) / a))
