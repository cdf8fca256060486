"""Cost oracle for the join choice: price both branches of the join decision.

The oracle reruns a DYN grid point with the join node pinned to each branch
and reports the completion time of each, so a decision can be checked
against what the alternative would actually have cost.
"""

from __future__ import annotations

from dataclasses import dataclass

from .scenarios import ScenarioConfig, run_point

JOINS = ("merge_join", "hash_join")


@dataclass(frozen=True)
class BranchCosts:
    sweep_value: object
    merge_join: float
    hash_join: float

    @property
    def cheaper(self) -> str:
        return "merge_join" if self.merge_join < self.hash_join else "hash_join"

    @property
    def gap(self) -> float:
        """Relative difference of the two branches (0 means a tie)."""
        lo, hi = sorted((self.merge_join, self.hash_join))
        return (hi - lo) / lo if lo > 0 else 0.0


def branch_costs(cfg: ScenarioConfig, value) -> BranchCosts:
    t = {j: run_point(cfg, "DYN", value, force_join=j).completion_s for j in JOINS}
    return BranchCosts(value, t["merge_join"], t["hash_join"])


def oracle_grid(cfg: ScenarioConfig) -> list[BranchCosts]:
    return [branch_costs(cfg, v) for v in cfg.sweep_values]
