"""Analytics functions run by the data plane.

Each registered function takes the instance's input rows grouped by source
table and returns ``(output_rows, work_bytes)``; ``work_bytes`` is what the cost
model charges as compute.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .core import JoinedRow, Partition, Row


def _size(rows: Iterable) -> int:
    return sum(r.payload_bytes for r in rows)


def _join(key, left, right) -> JoinedRow:
    return JoinedRow(key, _tag(left), _tag(right), left.payload_bytes + right.payload_bytes)


def _tag(r) -> int:
    return r.payload_tag if isinstance(r, Row) else r.left_tag


def scan_map(part: Partition, selectivity: float) -> Partition:
    """Keep the ``ceil(selectivity * n)`` rows with the smallest keys."""
    if not 0.0 <= selectivity <= 1.0:
        raise ValueError(f"selectivity must be in [0, 1], got {selectivity}")
    keep = math.ceil(selectivity * len(part.rows))
    rows = sorted(part.rows, key=lambda r: r.key)[:keep]
    return Partition(part.table, part.part_id, rows, part.home)


def hash_partition(part: Partition, buckets: int) -> list[Partition]:
    if buckets < 1:
        raise ValueError("buckets must be >= 1")
    out = [[] for _ in range(buckets)]
    for r in part.rows:
        out[r.key % buckets].append(r)
    return [Partition(part.table, i, rows, part.home) for i, rows in enumerate(out)]


def _concat(parts) -> list:
    rows = []
    for p in parts:
        rows.extend(p.rows if isinstance(p, Partition) else p)
    return rows


def _rows(x) -> list:
    # a Partition, a list of rows, or a list of buckets (Partitions / row lists)
    if isinstance(x, Partition):
        return list(x.rows)
    x = list(x)
    if x and isinstance(x[0], (Partition, list, tuple)):
        return _concat(x)
    return x


def sort_merge_join(left_buckets, right_buckets) -> list[JoinedRow]:
    """Equi-join of co-partitioned inputs; output ascending by key, left-major within a key."""
    left = sorted(_rows(left_buckets), key=lambda r: r.key)
    right = sorted(_rows(right_buckets), key=lambda r: r.key)
    out = []
    i = j = 0
    while i < len(left) and j < len(right):
        lk, rk = left[i].key, right[j].key
        if lk < rk:
            i += 1
        elif lk > rk:
            j += 1
        else:
            i_end = i
            while i_end < len(left) and left[i_end].key == lk:
                i_end += 1
            j_end = j
            while j_end < len(right) and right[j_end].key == lk:
                j_end += 1
            for lrow in left[i:i_end]:
                for rrow in right[j:j_end]:
                    out.append(_join(lk, lrow, rrow))
            i, j = i_end, j_end
    return out


def hash_join_broadcast(build, probe) -> list[JoinedRow]:
    """Build a hash table on ``build`` and stream ``probe`` through it, keeping probe order."""
    table = defaultdict(list)
    for r in _rows(build):
        table[r.key].append(r)
    out = []
    for p in _rows(probe):
        for b in table.get(p.key, ()):
            out.append(_join(p.key, p, b))
    return out


# "sum_tag" folds partial counts, so count -> sum_tag is a map-side combiner
AGGREGATES = ("count", "sum_bytes", "sum_tag")


def group_by_aggregate(part: Partition, agg: str = "count") -> Partition:
    """One row per distinct key, ascending.

    The aggregate row keeps the largest member row's ``payload_bytes`` so the
    output models a representative record plus the aggregate column.
    """
    if agg not in AGGREGATES:
        raise ValueError(f"unknown aggregate {agg!r}")
    groups: dict[int, list] = {}
    for r in part.rows:
        groups.setdefault(r.key, []).append(r)
    rows = []
    for k in sorted(groups):
        members = groups[k]
        if agg == "count":
            tag = len(members)
        elif agg == "sum_bytes":
            tag = sum(m.payload_bytes for m in members)
        else:
            tag = sum(m.payload_tag for m in members)
        rows.append(Row(k, max(m.payload_bytes for m in members), tag))
    return Partition(part.table, part.part_id, rows, part.home)


def nested_loop_join_oracle(left: Sequence, right: Sequence) -> list[JoinedRow]:
    return [_join(l.key, l, r) for l in left for r in right if l.key == r.key]


def join_multiset(rows: Iterable[JoinedRow]) -> list[tuple]:
    """Canonical sortable form for multiset comparison of join outputs."""
    return sorted((r.key, r.left_tag, r.right_tag, r.payload_bytes) for r in rows)


# -- registry -----------------------------------------------------------------
# A registered function receives ``inputs`` as {table name: [rows]} in the
# stage's declared input order plus the stage params and the sort factor.


@dataclass(frozen=True)
class Function:
    name: str
    run: Callable[[dict, dict, float], tuple[list, float]]


def _run_scan(inputs, params, sort_factor):
    rows = _concat(inputs.values())
    out = scan_map(Partition("", 0, rows), params.get("selectivity", 1.0))
    return out.rows, _size(rows)


def _run_group_by(inputs, params, sort_factor):
    rows = _concat(inputs.values())
    out = group_by_aggregate(Partition("", 0, rows), params.get("agg", "count"))
    return out.rows, _size(rows)


def _run_scan_group_by(inputs, params, sort_factor):
    rows = _concat(inputs.values())
    scanned = scan_map(Partition("", 0, rows), params.get("selectivity", 1.0))
    out = group_by_aggregate(scanned, params.get("agg", "count"))
    return out.rows, _size(rows) + scanned.size_bytes


def _two_sides(inputs):
    names = list(inputs)
    if len(names) != 2:
        raise ValueError(f"join expects two input tables, got {names}")
    return inputs[names[0]], inputs[names[1]]


def _run_merge_join(inputs, params, sort_factor):
    left, right = _two_sides(inputs)
    n = _size(left) + _size(right)
    return sort_merge_join(left, right), n + sort_factor * n


def _run_hash_join(inputs, params, sort_factor):
    probe, build = _two_sides(inputs)
    return hash_join_broadcast(build, probe), _size(build) + _size(probe)


def _run_noop(inputs, params, sort_factor):
    return [], 0.0


REGISTRY: dict[str, Function] = {}


def register(name: str, run: Callable) -> Function:
    fn = Function(name, run)
    REGISTRY[name] = fn
    return fn


register("scan_map", _run_scan)
register("group_by", _run_group_by)
register("scan_group_by", _run_scan_group_by)
register("merge_join", _run_merge_join)
register("hash_join", _run_hash_join)
register("noop", _run_noop)


def get_function(name: str) -> Function:
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(f"function not registered: {name!r}") from None
