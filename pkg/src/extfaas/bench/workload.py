"""Synthetic tables with uniform or Pareto-skewed join keys."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import MB, ExtFaasError, Partition, Row


class InvalidTableSpec(ExtFaasError, ValueError):
    pass


LAYOUTS = ("key", "rows")


@dataclass(frozen=True)
class TableSpec:
    name: str
    size_mb: float
    rows: int
    dist: str = "uniform"
    alpha: float = 1.16
    key_space: int = 2**32
    partitions: int | None = None
    home: int | None = None  # pin every partition to one node
    layout: str = "key"  # "key": partition = key % n; "rows": row i -> partition i % n

    def __post_init__(self):
        if self.dist not in ("uniform", "pareto"):
            raise InvalidTableSpec(f"invalid table spec: unknown distribution {self.dist!r}")
        if self.dist == "pareto" and self.alpha <= 0:
            raise InvalidTableSpec("invalid table spec: pareto alpha must be > 0")
        if self.layout not in LAYOUTS:
            raise InvalidTableSpec(f"invalid table spec: unknown layout {self.layout!r}")


def gen_table(name: str, size_mb: float, rows: int, dist: str = "uniform", seed: int = 0, *,
              partitions: int = 1, node_count: int | None = None, alpha: float = 1.16,
              key_space: int = 2**32, layout: str = "key") -> list[Partition]:
    """Generate ``partitions`` hash partitions (``key % partitions``) of a table.

    With ``layout="rows"`` rows are dealt out in generation order instead, the
    way an unclustered fact table lands on storage.

    Uniform keys are drawn stratified over the residues so every partition
    receives the same row count; Pareto keys are ``floor`` of a Lomax sample,
    so key 0 alone carries about ``1 - 2**-alpha`` of the rows.  Partition ``i``
    is homed on node ``i % node_count``.
    """
    size = int(round(size_mb * MB))
    if rows < 1 or size < rows or partitions < 1:
        raise InvalidTableSpec(f"invalid table spec: {name!r} rows={rows} size={size} partitions={partitions}")
    if dist not in ("uniform", "pareto") or (dist == "pareto" and alpha <= 0):
        raise InvalidTableSpec(f"invalid table spec: {dist!r} alpha={alpha}")
    if layout not in LAYOUTS:
        raise InvalidTableSpec(f"invalid table spec: unknown layout {layout!r}")
    if key_space < partitions:
        raise InvalidTableSpec("invalid table spec: key_space smaller than partition count")
    rng = np.random.default_rng(seed)
    if dist == "uniform":
        residues = np.arange(rows) % partitions
        rng.shuffle(residues)
        keys = rng.integers(0, key_space // partitions, rows) * partitions + residues
    else:
        keys = np.floor(rng.pareto(alpha, rows)).astype(np.int64) % key_space
    per_row = size // rows
    sizes = [per_row] * rows
    sizes[-1] += size - per_row * rows
    buckets: list[list[Row]] = [[] for _ in range(partitions)]
    for i, (k, b) in enumerate(zip(keys.tolist(), sizes)):
        buckets[(k if layout == "key" else i) % partitions].append(Row(int(k), b, i))
    n = node_count or partitions
    return [Partition(name, i, rows_, i % n) for i, rows_ in enumerate(buckets)]


def gen_from_spec(spec: TableSpec, seed: int, node_count: int) -> tuple[list[Partition], list[int]]:
    parts = gen_table(spec.name, spec.size_mb, spec.rows, spec.dist, seed,
                      partitions=spec.partitions or node_count, node_count=node_count,
                      alpha=spec.alpha, key_space=spec.key_space, layout=spec.layout)
    placement = [spec.home if spec.home is not None else p.home for p in parts]
    return parts, placement
