"""Bipartite agent-factor coordination graphs and elimination bookkeeping.

A problem is a set of agents, each with a finite action set, plus a set of
payoff factors whose scopes are (possibly overlapping) agent groups.  The
agent-factor incidence relation is the bipartite edge set.  Elimination
removes one agent at a time, replacing the factors it touches with a single
factor over its neighbours.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass


class GraphError(ValueError):
    """Malformed graph or invalid elimination request."""


@dataclass(frozen=True)
class FactorScope:
    """One payoff factor: its id and the agents it covers, sorted ascending.

    An empty scope is only produced by elimination (a constant factor);
    `build_graph` rejects empty scopes on construction.
    """

    factor_id: int
    agents: tuple[int, ...]

    def __post_init__(self):
        if len(set(self.agents)) != len(self.agents):
            raise GraphError(f"factor {self.factor_id}: duplicate agents in {self.agents}")
        if tuple(sorted(self.agents)) != tuple(self.agents):
            object.__setattr__(self, "agents", tuple(sorted(self.agents)))


@dataclass(frozen=True)
class CoordinationGraph:
    """Immutable agent-factor graph.

    `action_counts` is indexed by original agent id and never shrinks;
    `agents` lists the agents still present (elimination removes agents
    without renumbering, so action tags stay valid end to end).
    """

    action_counts: tuple[int, ...]
    agents: tuple[int, ...]
    scopes: tuple[FactorScope, ...]

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        """Set of (agent, factor_id) incidences, derived from scope membership."""
        return frozenset((i, s.factor_id) for s in self.scopes for i in s.agents)

    def scope_of(self, factor_id: int) -> FactorScope:
        for s in self.scopes:
            if s.factor_id == factor_id:
                return s
        raise GraphError(f"no factor with id {factor_id}")


def build_graph(action_counts, scopes) -> CoordinationGraph:
    """Build a coordination graph from per-agent action counts and factor scopes.

    Args:
        action_counts: sequence of action-set sizes, one per agent.
        scopes: sequence of agent-index sets, one per payoff factor.

    Raises:
        GraphError: out-of-range agent index, empty scope, non-positive
            action count, or an agent that appears in no scope.
    """
    counts = tuple(int(c) for c in action_counts)
    n = len(counts)
    if n == 0:
        raise GraphError("at least one agent required")
    if any(c < 1 for c in counts):
        raise GraphError(f"action counts must be positive, got {counts}")

    factor_scopes = []
    covered: set[int] = set()
    for fid, scope in enumerate(scopes):
        members = tuple(sorted(int(a) for a in scope))
        if not members:
            raise GraphError(f"factor {fid}: empty scope")
        for a in members:
            if not 0 <= a < n:
                raise GraphError(f"factor {fid}: agent {a} out of range [0, {n})")
        factor_scopes.append(FactorScope(fid, members))
        covered.update(members)

    missing = sorted(set(range(n)) - covered)
    if missing:
        raise GraphError(f"agents {missing} appear in no scope")

    return CoordinationGraph(counts, tuple(range(n)), tuple(factor_scopes))


def neighbors(g: CoordinationGraph, i: int) -> tuple[frozenset[int], frozenset[int]]:
    """Return (n_i, f_i): the neighbour agents of i and the factor ids i influences."""
    if i not in g.agents:
        raise GraphError(f"agent {i} not present in graph")
    f_i = frozenset(s.factor_id for s in g.scopes if i in s.agents)
    n_i = frozenset(
        a for s in g.scopes if s.factor_id in f_i for a in s.agents if a != i
    )
    return n_i, f_i


def enumerate_local_actions(g: CoordinationGraph, agents) -> list[tuple[int, ...]]:
    """All local joint actions over `agents` in lexicographic order.

    Component order follows ascending agent index.  The empty agent set
    yields the single empty action `()`.
    """
    ordered = tuple(sorted(agents))
    for a in ordered:
        if not 0 <= a < len(g.action_counts):
            raise GraphError(f"agent {a} out of range")
    return list(itertools.product(*(range(g.action_counts[a]) for a in ordered)))


def apply_elimination(g: CoordinationGraph, i: int, new_scope) -> CoordinationGraph:
    """Remove agent i: drop the factors i touches, add one factor over n_i.

    `new_scope` must equal the neighbour set of i.  When the new factor's
    scope is empty (last agent of a connected component), any existing
    constant factors are merged into it so that full elimination always
    terminates with exactly one factor over the empty scope.
    """
    n_i, f_i = neighbors(g, i)
    if frozenset(new_scope) != n_i:
        raise GraphError(f"new scope {sorted(new_scope)} != neighbours {sorted(n_i)} of agent {i}")

    drop = set(f_i)
    if not n_i:
        drop.update(s.factor_id for s in g.scopes if not s.agents)

    new_id = max((s.factor_id for s in g.scopes), default=-1) + 1
    kept = tuple(s for s in g.scopes if s.factor_id not in drop)
    scopes = kept + (FactorScope(new_id, tuple(sorted(n_i))),)
    agents = tuple(a for a in g.agents if a != i)
    return CoordinationGraph(g.action_counts, agents, scopes)


def default_elimination_order(g: CoordinationGraph) -> list[int]:
    """Min-neighbour elimination heuristic, ties broken by lowest agent index."""
    order = []
    cur = g
    while cur.agents:
        i = min(cur.agents, key=lambda a: (len(neighbors(cur, a)[0]), a))
        n_i, _ = neighbors(cur, i)
        cur = apply_elimination(cur, i, n_i)
        order.append(i)
    return order
