"""Brute-force ground truth for certifying the elimination solver.

Enumerates every full joint action, sums the factor distributions exactly
(no sample caps), prunes the complete set directly, and diffs the result
against a solver run.  Deliberately refuses large instances: a sampled
oracle would weaken the correctness claim.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .distributions import CdfGrid, ReturnDistribution, convolve, expected_value, max_cdf_gap
from .engine import EsrMember, EsrSolution
from .graph import CoordinationGraph, enumerate_local_actions
from .pruning import DistributionSet, TaggedDistribution, esr_prune


class OracleLimitError(RuntimeError):
    """Instance too large for exhaustive enumeration."""


@dataclass
class ComparisonReport:
    matched: int
    missing_from_dmove: list = field(default_factory=list)
    extra_in_dmove: list = field(default_factory=list)
    max_cdf_gap: float = 0.0
    exact: bool = False

    def to_text(self) -> str:
        lines = [
            f"matched: {self.matched}",
            f"missing_from_dmove: {len(self.missing_from_dmove)}",
            f"extra_in_dmove: {len(self.extra_in_dmove)}",
            f"max_cdf_gap: {self.max_cdf_gap:.17g}",
            f"exact: {self.exact}",
        ]
        for ja in self.missing_from_dmove:
            lines.append(f"  missing {ja}")
        for ja in self.extra_in_dmove:
            lines.append(f"  extra {ja}")
        return "\n".join(lines)


def enumerate_joint_returns(
    graph: CoordinationGraph, provider, limit: int = 1_000_000
) -> dict[tuple[int, ...], ReturnDistribution]:
    """Exact summed return distribution for every full joint action."""
    total = math.prod(graph.action_counts)
    if total > limit:
        raise OracleLimitError(
            f"{total} joint actions exceeds the oracle limit of {limit}; "
            "the exhaustive oracle is meant for small instances"
        )

    local_tables = {}
    for scope in graph.scopes:
        local_tables[scope.factor_id] = {
            la: provider(scope.factor_id, la)
            for la in enumerate_local_actions(graph, scope.agents)
        }

    out: dict[tuple[int, ...], ReturnDistribution] = {}
    for ja in itertools.product(*(range(c) for c in graph.action_counts)):
        acc = None
        for scope in graph.scopes:
            la = tuple(ja[a] for a in scope.agents)
            dist = local_tables[scope.factor_id][la]
            acc = dist if acc is None else convolve(acc, dist, cap=None)
        out[ja] = acc
    return out


def brute_force_esr_set(
    joint_returns: dict[tuple[int, ...], ReturnDistribution], grid: CdfGrid
) -> EsrSolution:
    """Prune the complete set of joint-action return distributions directly."""
    if not joint_returns:
        raise ValueError("no joint returns to prune")
    tagged = DistributionSet(
        TaggedDistribution(dist, {i: a for i, a in enumerate(ja)})
        for ja, dist in joint_returns.items()
    )
    pruned = esr_prune(tagged, grid)
    members = [
        EsrMember(
            tuple(td.tag[i] for i in range(len(next(iter(joint_returns))))),
            td.dist,
            expected_value(td.dist),
        )
        for td in pruned
    ]
    return EsrSolution(members, grid)


def compare(dmove_out: EsrSolution, oracle_out: EsrSolution, grid: CdfGrid) -> ComparisonReport:
    """Diff a solver solution against the oracle by joint action.

    Matched members report the sup-gap between their grid CDFs; the report
    is exact when the action sets coincide and every matched gap is zero.
    """
    for sol in (dmove_out, oracle_out):
        if sol.grid is not None and sol.grid != grid:
            raise ValueError(f"solution grid {sol.grid} does not match comparison grid {grid}")

    dm = dmove_out.by_action()
    orc = oracle_out.by_action()
    missing = sorted(set(orc) - set(dm))
    extra = sorted(set(dm) - set(orc))
    gap = 0.0
    matched = 0
    for ja in set(dm) & set(orc):
        matched += 1
        gap = max(gap, max_cdf_gap(dm[ja].dist, orc[ja].dist, grid))
    return ComparisonReport(
        matched=matched,
        missing_from_dmove=missing,
        extra_in_dmove=extra,
        max_cdf_gap=gap,
        exact=(not missing and not extra and gap == 0.0),
    )
