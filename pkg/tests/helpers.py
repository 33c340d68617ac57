"""Shared generators for the test suite.

Random problem instances use integer-valued samples on a unit integer
lattice wide enough to contain every partial sum of every factor subset.
On such instances the grid CDF comparison coincides with stochastic
dominance over all of R^d, which is the regime where solver-vs-oracle
equality is well defined.
"""

from __future__ import annotations

import numpy as np

from dmove import CdfGrid, ReturnDistribution, build_graph


def random_graph(rng, n_agents=None, action_range=(2, 3)):
    """Random coordination graph; singleton scopes keep some instances disconnected."""
    n = int(n_agents) if n_agents is not None else int(rng.integers(3, 6))
    counts = [int(rng.integers(action_range[0], action_range[1] + 1)) for _ in range(n)]
    scopes = []
    for i in range(n):
        if i == 0 or rng.random() < 0.25:
            scopes.append({i})
        else:
            scopes.append({i, int(rng.integers(0, i))})
    if n >= 3 and rng.random() < 0.3:
        extra = rng.choice(n, size=3, replace=False)
        scopes.append({int(v) for v in extra})
    return build_graph(counts, scopes)


def lattice_tables(rng, graph, m_range=(1, 4), value_range=(0, 4), d=2):
    """Integer-valued sample tables for every (factor, local action) pair."""
    from dmove import enumerate_local_actions

    tables = {}
    for scope in graph.scopes:
        for la in enumerate_local_actions(graph, scope.agents):
            m = int(rng.integers(m_range[0], m_range[1] + 1))
            samples = rng.integers(value_range[0], value_range[1] + 1, size=(m, d))
            tables[(scope.factor_id, la)] = ReturnDistribution(samples.astype(float))
    return tables


def provider_from_tables(tables):
    return lambda fid, la: tables[(fid, tuple(la))]


def lattice_grid(tables, d=2) -> CdfGrid:
    """Unit-spaced integer grid covering every partial sum of the tables.

    Distinct derivation from the library's certification grid: accumulates
    per-factor extrema clamped through zero, so sums over any factor subset
    stay inside the box.
    """
    mins: dict = {}
    maxs: dict = {}
    for (fid, _), dist in tables.items():
        lo = dist.samples.min(axis=0)
        hi = dist.samples.max(axis=0)
        mins[fid] = np.minimum(mins.get(fid, lo), lo)
        maxs[fid] = np.maximum(maxs.get(fid, hi), hi)
    lo = np.zeros(d)
    hi = np.zeros(d)
    for fid in mins:
        lo += np.minimum(mins[fid], 0.0)
        hi += np.maximum(maxs[fid], 0.0)
    lo = np.floor(lo) - 1.0
    hi = np.ceil(hi) + 1.0
    n_bins = int((hi - lo).max()) + 1
    r_max = tuple(lo + (n_bins - 1))
    return CdfGrid(tuple(lo), r_max, n_bins)


def pareto_front(vectors):
    """Indices of strictly non-dominated vectors (maximisation), ties kept."""
    vecs = np.asarray(vectors, dtype=float)
    keep = []
    for i, v in enumerate(vecs):
        dominated = any(
            np.all(w >= v) and np.any(w > v) for j, w in enumerate(vecs) if j != i
        )
        if not dominated:
            keep.append(i)
    return keep
