import numpy as np
import pytest

from dmove.graph import (
    GraphError,
    apply_elimination,
    build_graph,
    default_elimination_order,
    enumerate_local_actions,
    neighbors,
)
from helpers import random_graph


def ring():
    return build_graph([5, 5, 5, 5], [{0, 1}, {1, 2}, {2, 3}, {0, 3}])


def test_build_graph_ring():
    g = ring()
    assert g.n_agents == 4
    assert len(g.scopes) == 4
    assert len(g.edges) == 8


def test_build_graph_singleton():
    g = build_graph([2], [{0}])
    assert g.n_agents == 1
    assert len(g.scopes) == 1
    assert g.edges == {(0, 0)}


def test_build_graph_out_of_range():
    with pytest.raises(GraphError):
        build_graph([2, 2], [{0, 5}])


def test_build_graph_uncovered_agent():
    with pytest.raises(GraphError):
        build_graph([2, 2], [{0}])


def test_build_graph_empty_scope():
    with pytest.raises(GraphError):
        build_graph([2], [set()])


def test_build_graph_bad_action_count():
    with pytest.raises(GraphError):
        build_graph([2, 0], [{0, 1}])


def test_neighbors_ring():
    n_i, f_i = neighbors(ring(), 0)
    assert f_i == {0, 3}
    assert n_i == {1, 3}


def test_neighbors_singleton():
    n_i, f_i = neighbors(build_graph([2], [{0}]), 0)
    assert f_i == {0}
    assert n_i == frozenset()


def test_neighbors_chain():
    g = build_graph([2, 2, 2], [{0, 1}, {1, 2}])
    n_i, f_i = neighbors(g, 1)
    assert f_i == {0, 1}
    assert n_i == {0, 2}


def test_neighbors_invalid_agent():
    with pytest.raises(GraphError):
        neighbors(ring(), 7)


def test_enumerate_lexicographic():
    g = build_graph([2, 2], [{0, 1}])
    assert enumerate_local_actions(g, {0, 1}) == [(0, 0), (0, 1), (1, 0), (1, 1)]


def test_enumerate_empty_set():
    assert enumerate_local_actions(ring(), set()) == [()]


def test_enumerate_single_agent():
    g = build_graph([5], [{0}])
    assert enumerate_local_actions(g, {0}) == [(0,), (1,), (2,), (3,), (4,)]


def test_apply_elimination_chain():
    g = build_graph([2, 2, 2], [{0, 1}, {1, 2}])
    g2 = apply_elimination(g, 1, {0, 2})
    assert [s.agents for s in g2.scopes] == [(0, 2)]
    assert g2.agents == (0, 2)


def test_apply_elimination_singleton():
    g = build_graph([2], [{0}])
    g2 = apply_elimination(g, 0, set())
    assert g2.agents == ()
    assert [s.agents for s in g2.scopes] == [()]


def test_apply_elimination_ring():
    g2 = apply_elimination(ring(), 0, {1, 3})
    assert sorted(s.agents for s in g2.scopes) == [(1, 2), (1, 3), (2, 3)]


def test_apply_elimination_wrong_scope():
    with pytest.raises(GraphError):
        apply_elimination(ring(), 0, {1, 2})


def test_apply_elimination_removed_agent():
    g2 = apply_elimination(ring(), 0, {1, 3})
    with pytest.raises(GraphError):
        apply_elimination(g2, 0, set())


def test_neighbor_properties_random():
    rng = np.random.default_rng(7)
    for _ in range(50):
        g = random_graph(rng)
        for i in g.agents:
            n_i, f_i = neighbors(g, i)
            assert i not in n_i
            for fid in f_i:
                assert i in g.scope_of(fid).agents


def test_full_elimination_single_empty_factor():
    rng = np.random.default_rng(11)
    for _ in range(50):
        g = random_graph(rng)
        order = list(rng.permutation(g.agents))
        for i in order:
            n_before = g.n_agents
            n_i, f_i = neighbors(g, i)
            had_constants = any(not s.agents for s in g.scopes)
            factors_before = len(g.scopes)
            g = apply_elimination(g, int(i), n_i)
            assert g.n_agents == n_before - 1
            if not had_constants:
                assert len(g.scopes) == factors_before - (len(f_i) - 1)
        assert g.agents == ()
        assert [s.agents for s in g.scopes] == [()]


def test_enumerate_size_and_uniqueness():
    rng = np.random.default_rng(3)
    for _ in range(20):
        g = random_graph(rng)
        k = int(rng.integers(0, g.n_agents + 1))
        agents = [int(a) for a in rng.choice(g.agents, size=k, replace=False)]
        actions = enumerate_local_actions(g, agents)
        expected = int(np.prod([g.action_counts[a] for a in sorted(agents)])) if agents else 1
        assert len(actions) == expected
        assert len(set(actions)) == len(actions)


def test_default_order_is_permutation():
    rng = np.random.default_rng(5)
    for _ in range(20):
        g = random_graph(rng)
        order = default_elimination_order(g)
        assert sorted(order) == list(g.agents)
