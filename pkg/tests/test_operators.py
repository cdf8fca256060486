from collections import Counter

import pytest
from hypothesis import given, strategies as st

from extfaas.core import JoinedRow, Partition, Row
from extfaas.operators import (
    get_function,
    group_by_aggregate,
    hash_join_broadcast,
    hash_partition,
    join_multiset,
    nested_loop_join_oracle,
    scan_map,
    sort_merge_join,
)


def rows_st(max_size=40, keys=12):
    return st.lists(st.builds(Row, st.integers(0, keys), st.integers(1, 1000), st.integers(0, 10**6)),
                    max_size=max_size)


def part(rows, table="T"):
    return Partition(table, 0, list(rows))


def tags(rows):
    return [(r.key, r.payload_tag) for r in rows]


# -- scan_map -----------------------------------------------------------------

def test_scan_identity_and_empty():
    p = part([Row(3, 1, 0), Row(1, 1, 1), Row(2, 1, 2)])
    assert sorted(tags(scan_map(p, 1.0).rows)) == sorted(tags(p.rows))
    assert scan_map(p, 0.0).rows == []


def test_scan_half_keeps_smallest_keys():
    p = part([Row(k, 1, k) for k in (9, 3, 7, 1, 5, 0, 8, 2, 6, 4)])
    assert [r.key for r in scan_map(p, 0.5).rows] == [0, 1, 2, 3, 4]


def test_scan_rejects_bad_selectivity():
    with pytest.raises(ValueError):
        scan_map(part([]), 1.5)


@given(rows_st(), st.floats(0, 1))
def test_scan_size_accounting(rows, sel):
    out = scan_map(part(rows), sel)
    assert out.size_bytes == out.recount()


# -- hash_partition -----------------------------------------------------------

def test_hash_partition_single_bucket():
    p = part([Row(k, 5, k) for k in range(6)])
    (only,) = hash_partition(p, 1)
    assert tags(only.rows) == tags(p.rows)


def test_hash_partition_mod_rule():
    b0, b1 = hash_partition(part([Row(k, 1, k) for k in range(4)]), 2)
    assert [r.key for r in b0.rows] == [0, 2]
    assert [r.key for r in b1.rows] == [1, 3]


def test_hash_partition_rejects_zero():
    with pytest.raises(ValueError):
        hash_partition(part([]), 0)


@given(rows_st(), st.integers(1, 9))
def test_shuffle_conservation(rows, n):
    p = part(rows)
    buckets = hash_partition(p, n)
    flat = [r for b in buckets for r in b.rows]
    assert Counter(flat) == Counter(p.rows)
    assert sum(b.size_bytes for b in buckets) == p.size_bytes
    for i, b in enumerate(buckets):
        assert all(r.key % n == i for r in b.rows)


@given(rows_st(), rows_st(), st.integers(1, 7))
def test_copartition_soundness(left, right, n):
    lb = hash_partition(part(left), n)
    rb = hash_partition(part(right), n)
    for k in {r.key for r in left} | {r.key for r in right}:
        where = {i for i, b in enumerate(lb) if any(r.key == k for r in b.rows)}
        where |= {i for i, b in enumerate(rb) if any(r.key == k for r in b.rows)}
        assert len(where) == 1


# -- joins --------------------------------------------------------------------

def test_merge_join_examples():
    assert sort_merge_join([Row(1, 1, 10)], [Row(1, 2, 20)]) == [JoinedRow(1, 10, 20, 3)]
    assert sort_merge_join([Row(1, 1, 10)], [Row(2, 1, 20)]) == []
    out = sort_merge_join([Row(1, 1, 1), Row(1, 1, 2)], [Row(1, 1, 3), Row(1, 1, 4)])
    assert [(r.left_tag, r.right_tag) for r in out] == [(1, 3), (1, 4), (2, 3), (2, 4)]


def test_merge_join_output_sorted():
    out = sort_merge_join([Row(3, 1, 0), Row(1, 1, 1)], [Row(1, 1, 2), Row(3, 1, 3)])
    assert [r.key for r in out] == [1, 3]


def test_hash_join_examples():
    out = hash_join_broadcast([Row(1, 1, 100)], [Row(1, 1, 7), Row(3, 1, 9)])
    assert out == [JoinedRow(1, 7, 100, 2)]
    assert hash_join_broadcast([], [Row(1, 1, 7)]) == []


def test_hash_join_keeps_probe_order():
    probe = [Row(5, 1, 0), Row(2, 1, 1), Row(5, 1, 2)]
    out = hash_join_broadcast([Row(2, 1, 9), Row(5, 1, 8)], probe)
    assert [r.left_tag for r in out] == [0, 1, 2]


def test_oracle_examples():
    assert nested_loop_join_oracle([], []) == []
    assert len(nested_loop_join_oracle([Row(1, 1)], [Row(1, 1), Row(1, 2)])) == 2


@given(rows_st(), rows_st())
def test_oracle_cardinality(left, right):
    lc = Counter(r.key for r in left)
    rc = Counter(r.key for r in right)
    assert len(nested_loop_join_oracle(left, right)) == sum(lc[k] * rc[k] for k in lc)


@given(rows_st(60, 15), rows_st(60, 15), st.integers(1, 6))
def test_join_equivalence(left, right, n):
    expect = join_multiset(nested_loop_join_oracle(left, right))
    lb = hash_partition(part(left), n)
    rb = hash_partition(part(right), n)
    merged = [r for a, b in zip(lb, rb) for r in sort_merge_join(a, b)]
    assert join_multiset(merged) == expect
    assert join_multiset(hash_join_broadcast(right, left)) == expect


# -- group_by -----------------------------------------------------------------

def test_group_by_count():
    out = group_by_aggregate(part([Row(1, 1), Row(1, 1), Row(2, 1)]), "count")
    assert tags(out.rows) == [(1, 2), (2, 1)]
    assert group_by_aggregate(part([]), "count").rows == []


def test_group_by_sum_bytes_and_unknown():
    out = group_by_aggregate(part([Row(1, 3), Row(1, 4)]), "sum_bytes")
    assert tags(out.rows) == [(1, 7)]
    with pytest.raises(ValueError, match="unknown aggregate"):
        group_by_aggregate(part([]), "avg")


@given(rows_st(), st.sampled_from(["count", "sum_bytes", "sum_tag"]))
def test_group_by_matches_fold(rows, agg):
    fold = {}
    for r in rows:
        v = {"count": 1, "sum_bytes": r.payload_bytes, "sum_tag": r.payload_tag}[agg]
        fold[r.key] = fold.get(r.key, 0) + v
    out = group_by_aggregate(part(rows), agg)
    assert tags(out.rows) == sorted(fold.items())
    assert out.size_bytes == out.recount()


@given(rows_st(80, 10), st.integers(1, 5))
def test_count_then_sum_tag_is_a_combiner(rows, pieces):
    # partial counts per chunk, folded with sum_tag, equal one global count
    chunks = [rows[i::pieces] for i in range(pieces)]
    partial = [r for c in chunks for r in group_by_aggregate(part(c), "count").rows]
    combined = group_by_aggregate(part(partial), "sum_tag")
    assert tags(combined.rows) == tags(group_by_aggregate(part(rows), "count").rows)


# -- registry work declarations ----------------------------------------------

def test_declared_work():
    left, right = [Row(1, 100)], [Row(1, 50), Row(2, 50)]
    _, work = get_function("merge_join").run({"L": left, "R": right}, {}, 1.5)
    assert work == pytest.approx(200 * 2.5)
    _, work = get_function("hash_join").run({"P": left, "B": right}, {}, 1.5)
    assert work == 200
    with pytest.raises(KeyError, match="not registered"):
        get_function("nope")
