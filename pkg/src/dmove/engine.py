"""Return-distribution set factors and the distributional elimination solver.

The solver turns each payoff factor into a table from local joint actions to
singleton sets of tagged return distributions, then eliminates agents one at
a time.  Eliminating agent i builds, for every joint action of i's
neighbours, the locally non-dominated set over i's own actions; the new
factor replaces everything i touched.  After the last agent the single
remaining factor, read at the empty action and pruned once more, is the set
of non-dominated joint policies with their return distributions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distributions import CdfGrid, ReturnDistribution, expected_value
from .graph import (
    CoordinationGraph,
    apply_elimination,
    default_elimination_order,
    enumerate_local_actions,
    neighbors,
)
from .pruning import (
    DistributionSet,
    Pruner,
    TaggedDistribution,
    cross_sum,
    esr_prune,
    prune_and_cross_sum,
)


class EngineError(RuntimeError):
    """Inconsistent factor tables or invalid solver inputs."""


@dataclass
class ReturnSetFactor:
    """A table from local joint actions over `scope` to sets of tagged distributions."""

    scope: tuple[int, ...]
    table: dict[tuple[int, ...], DistributionSet]


@dataclass
class RsfCollection:
    """The live factor tables plus the coordination graph they mirror."""

    graph: CoordinationGraph
    factors: dict[int, ReturnSetFactor]

    def consistent(self) -> bool:
        graph_scopes = {s.factor_id: s.agents for s in self.graph.scopes}
        table_scopes = {fid: f.scope for fid, f in self.factors.items()}
        return graph_scopes == table_scopes


@dataclass(frozen=True)
class EsrMember:
    joint_action: tuple[int, ...]
    dist: ReturnDistribution
    expected: np.ndarray


@dataclass
class EsrSolution:
    """Non-dominated joint actions with their return distributions and means."""

    members: list[EsrMember]
    grid: CdfGrid | None = None

    def __len__(self) -> int:
        return len(self.members)

    def by_action(self) -> dict[tuple[int, ...], EsrMember]:
        return {m.joint_action: m for m in self.members}


def init_rsfs(graph: CoordinationGraph, provider) -> RsfCollection:
    """One factor table per payoff factor, every entry a tagged singleton set.

    `provider(factor_id, local_action)` must return a ReturnDistribution for
    every factor and every local joint action over its scope.
    """
    factors: dict[int, ReturnSetFactor] = {}
    for scope in graph.scopes:
        table: dict[tuple[int, ...], DistributionSet] = {}
        for la in enumerate_local_actions(graph, scope.agents):
            try:
                dist = provider(scope.factor_id, la)
            except Exception as exc:
                raise EngineError(
                    f"provider failed for factor {scope.factor_id}, local action {la}: {exc}"
                ) from exc
            tag = dict(zip(scope.agents, la))
            table[la] = DistributionSet([TaggedDistribution(dist, tag)])
        factors[scope.factor_id] = ReturnSetFactor(scope.agents, table)
    return RsfCollection(graph, factors)


def _restrict(factor: ReturnSetFactor, assignment: dict) -> DistributionSet:
    try:
        key = tuple(assignment[a] for a in factor.scope)
    except KeyError as exc:
        raise EngineError(f"assignment missing agent {exc} for scope {factor.scope}") from exc
    try:
        return factor.table[key]
    except KeyError as exc:
        raise EngineError(
            f"no table entry for local action {key} over scope {factor.scope}; "
            "factor tables are inconsistent with the graph"
        ) from exc


def calculate_lesr(
    f_i,
    i: int,
    n_actions_i: int,
    context: dict,
    grid: CdfGrid,
    prune1: Pruner = esr_prune,
    prune2: Pruner = esr_prune,
    cap: int | None = None,
    seed=None,
) -> DistributionSet:
    """Locally non-dominated set for one neighbour context.

    For each action of agent i, restricts every factor in `f_i` to the full
    assignment (context plus i's action), combines them with the pruning
    cross-sum fold, unions the results over i's actions, and prunes the
    union.  Member tags already include i's action because every factor in
    f_i covers i.
    """
    rng = np.random.default_rng(seed)
    union = DistributionSet()
    for a_i in range(n_actions_i):
        assignment = dict(context)
        assignment[i] = a_i
        sets = [_restrict(f, assignment) for f in f_i]
        combined = prune_and_cross_sum(sets, grid, cap=cap, seed=rng, prune=prune1)
        for td in combined:
            if td.tag.get(i) != a_i:
                raise EngineError(
                    f"member tag {td.tag} does not record action {a_i} for agent {i}"
                )
            union.add(td)
    return prune2(union, grid)


def eliminate(
    coll: RsfCollection,
    i: int,
    grid: CdfGrid,
    prune1: Pruner = esr_prune,
    prune2: Pruner = esr_prune,
    cap: int | None = None,
    seed=None,
) -> RsfCollection:
    """Remove agent i from the collection, installing its conditional local sets.

    Mirrors the graph update exactly: the factors i influences are replaced
    by one factor over i's neighbours whose entry for each neighbour action
    is the local non-dominated set.  When the new scope is empty, existing
    constant factors are folded in so a fully eliminated problem ends with
    one factor.
    """
    rng = np.random.default_rng(seed)
    n_i, f_ids = neighbors(coll.graph, i)
    n_sorted = tuple(sorted(n_i))
    f_list = [coll.factors[fid] for fid in sorted(f_ids)]
    n_actions_i = coll.graph.action_counts[i]

    new_table: dict[tuple[int, ...], DistributionSet] = {}
    for a_ni in enumerate_local_actions(coll.graph, n_sorted):
        context = dict(zip(n_sorted, a_ni))
        new_table[a_ni] = calculate_lesr(
            f_list, i, n_actions_i, context, grid,
            prune1=prune1, prune2=prune2, cap=cap, seed=rng,
        )

    drop = set(f_ids)
    if not n_sorted:
        const_ids = sorted(
            fid for fid, f in coll.factors.items()
            if fid not in f_ids and f.scope == ()
        )
        for fid in const_ids:
            new_table[()] = prune1(
                cross_sum(new_table[()], coll.factors[fid].table[()], cap=cap, seed=rng),
                grid,
            )
        drop.update(const_ids)

    new_graph = apply_elimination(coll.graph, i, n_i)
    new_id = max(s.factor_id for s in new_graph.scopes)
    factors = {fid: f for fid, f in coll.factors.items() if fid not in drop}
    factors[new_id] = ReturnSetFactor(n_sorted, new_table)
    out = RsfCollection(new_graph, factors)
    if not out.consistent():
        raise EngineError("factor tables diverged from the graph after elimination")
    return out


def dmove(
    graph: CoordinationGraph,
    provider,
    grid: CdfGrid,
    q=None,
    prune1: Pruner = esr_prune,
    prune2: Pruner = esr_prune,
    prune3: Pruner = esr_prune,
    cap: int | None = None,
    seed=None,
) -> EsrSolution:
    """Full forward elimination pass returning the non-dominated joint policies.

    Args:
        graph: the coordination graph.
        provider: callable (factor_id, local_action) -> ReturnDistribution.
        grid: CDF evaluation lattice shared by all dominance checks.
        q: elimination order (permutation of all agents); min-neighbour
            heuristic when omitted.
        prune1/prune2/prune3: pruning operators applied inside the cross-sum
            fold, after each local union, and to the final factor.
        cap: per-convolution sample cap (None = exact cross-sums).
        seed: master seed for capped subsampling.
    """
    order = list(q) if q is not None else default_elimination_order(graph)
    if sorted(order) != sorted(graph.agents):
        raise EngineError(f"elimination order {order} is not a permutation of agents {graph.agents}")

    rng = np.random.default_rng(seed)
    coll = init_rsfs(graph, provider)
    for i in order:
        coll = eliminate(coll, i, grid, prune1=prune1, prune2=prune2, cap=cap, seed=rng)

    if len(coll.factors) != 1:
        raise EngineError(f"expected a single final factor, found {len(coll.factors)}")
    final = next(iter(coll.factors.values()))
    if final.scope != ():
        raise EngineError(f"final factor has non-empty scope {final.scope}")

    result = prune3(final.table[()], grid)
    members = []
    for td in result:
        try:
            ja = tuple(td.tag[a] for a in range(len(graph.action_counts)))
        except KeyError as exc:
            raise EngineError(f"final tag {td.tag} does not assign agent {exc}") from exc
        members.append(EsrMember(ja, td.dist, expected_value(td.dist)))
    if not members:
        raise EngineError("solver produced an empty solution set")
    return EsrSolution(members, grid)


def export_esr_csv(solution: EsrSolution, path, action_names=None, objective_names=None) -> None:
    """Write the solution as delimited text: action columns then expected-value columns.

    Float cells use repr so the file round-trips losslessly and identical
    runs produce byte-identical exports.
    """
    if not solution.members:
        raise EngineError("refusing to export an empty solution set")
    n = len(solution.members[0].joint_action)
    d = solution.members[0].expected.shape[0]
    action_names = action_names or [f"action_{i}" for i in range(n)]
    objective_names = objective_names or [f"expected_objective_{j}" for j in range(d)]
    lines = [",".join(list(action_names) + list(objective_names))]
    for mem in solution.members:
        cells = [str(a) for a in mem.joint_action] + [repr(float(v)) for v in mem.expected]
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_esr_csv(path):
    """Read an exported solution file back as (header, rows of floats)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = [[float(c) for c in ln.split(",")] for ln in lines[1:]]
    return header, rows
