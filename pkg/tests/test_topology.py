import io
import itertools
import random

import networkx as nx
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_topology
from meshchain.topology import (
    DEFAULT_PROFILE, DisconnectedTopologyError, DuplicateNodeError, LinkSpec, MeshTopology, NodeSpec,
    TopologyError, UnknownNodeError, best_path_bandwidth, dumps_topology, load_topology, path_bandwidth,
    read_topology, shortest_path, synth_topology, transfer_delay, write_topology,
)

TWO_NODES = """
[nodes]
# id lat lon cpu availability
a 41.38 2.13 1.0 0.99
b 41.39 2.14 1.0 0.97
[links]
a b 10 1.5 0
"""


def test_load_minimal():
    t = load_topology(TWO_NODES)
    assert len(t.nodes) == 2 and len(t.links) == 1
    assert t.link("b", "a").bandwidth == 10.0


def test_load_duplicate_id():
    text = TWO_NODES.replace("[links]", "a 41.0 2.0 1.0 1.0\n[links]")
    with pytest.raises(DuplicateNodeError) as err:
        load_topology(text)
    assert err.value.line == 6


def test_load_errors_carry_line_numbers():
    with pytest.raises(TopologyError) as err:
        load_topology(TWO_NODES.replace("a b 10 1.5 0", "a b ten 1.5 0"))
    assert err.value.line == 7
    with pytest.raises(DisconnectedTopologyError):
        load_topology(TWO_NODES.replace("a b 10 1.5 0", ""))
    with pytest.raises(TopologyError):
        load_topology("[nodes]\na 1 2 1 1.5\n")  # availability out of range


def test_qmpsu_fixture(qmpsu):
    assert len(qmpsu.nodes) == 85
    assert all(n.cpu_capacity == 1.0 for n in qmpsu.nodes.values())


def test_roundtrip_text_and_file(tmp_path, qmpsu):
    again = load_topology(io.StringIO(dumps_topology(qmpsu)))
    assert again == qmpsu
    write_topology(qmpsu, tmp_path / "q.topo")
    assert read_topology(tmp_path / "q.topo") == qmpsu


def test_invalid_specs():
    with pytest.raises(ValueError):
        NodeSpec("x", 0, 0, cpu_capacity=0)
    with pytest.raises(ValueError):
        LinkSpec("x", "x", 1.0)
    with pytest.raises(ValueError):
        LinkSpec("x", "y", 0.0)
    with pytest.raises(TopologyError):
        MeshTopology([NodeSpec("x", 0, 0), NodeSpec("y", 0, 0)],
                     [LinkSpec("x", "y", 1.0), LinkSpec("y", "x", 2.0)])


def test_shortest_path_examples():
    tri = make_topology([("A", "B", 10), ("B", "C", 5), ("A", "C", 2)])
    assert shortest_path(tri, "A", "A") == ["A"]
    assert shortest_path(tri, "A", "C") == ["A", "C"]
    # the direct hop wins even though A-B-C has the better bottleneck
    assert path_bandwidth(tri, "A", "C") == 2
    with pytest.raises(UnknownNodeError):
        shortest_path(tri, "A", "Z")


def test_path_bandwidth_examples(line3):
    assert path_bandwidth(line3, "A", "C") == 10
    assert path_bandwidth(make_topology([("A", "B", 13.6)]), "A", "B") == 13.6
    with pytest.raises(ValueError):
        path_bandwidth(line3, "A", "A")


def test_transfer_delay_examples():
    t = make_topology([("A", "B", 10, 2.0), ("B", "C", 10, 2.0)])
    assert transfer_delay(t, ["A"], 1250) == 0
    assert transfer_delay(t, ["A", "B"], 1250) == pytest.approx(3.0)
    assert transfer_delay(t, ["A", "B", "C"], 1250) == pytest.approx(6.0)
    with pytest.raises(TopologyError):
        transfer_delay(t, ["A", "C"], 10)


def random_connected_graph(rng, n):
    while True:
        p = rng.uniform(0.25, 0.8)
        edges = [(f"v{i}", f"v{j}", float(rng.choice([1, 2, 5, 10, 13.6, 40])))
                 for i, j in itertools.combinations(range(n), 2) if rng.random() < p]
        g = nx.Graph()
        g.add_nodes_from(f"v{i}" for i in range(n))
        g.add_edges_from(e[:2] for e in edges)
        if nx.is_connected(g):
            return edges, g


def brute_force_path(g, a, b):
    # every simple path, then fewest hops, then smallest id sequence
    paths = list(nx.all_simple_paths(g, a, b))
    return min(paths, key=lambda p: (len(p), p))


def test_paths_match_exhaustive_enumeration():
    rng = random.Random(2024)
    checked = 0
    for _ in range(220):
        n = rng.randint(2, 8)
        edges, g = random_connected_graph(rng, n)
        t = make_topology(edges, nodes=g.nodes)
        bw = {frozenset(e[:2]): e[2] for e in edges}
        for a, b in itertools.permutations(g.nodes, 2):
            want = brute_force_path(g, a, b)
            assert shortest_path(t, a, b) == want
            assert path_bandwidth(t, a, b) == min(bw[frozenset(p)] for p in zip(want, want[1:]))
        checked += 1
    assert checked >= 200


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 5000), st.integers(0, 5000))
def test_delay_additive_and_monotone(seed, m1, m2):
    t = synth_topology(12, seed)
    ids = t.node_ids()
    path = shortest_path(t, ids[0], ids[-1])
    small, big = sorted((m1, m2))
    assert transfer_delay(t, path, small) <= transfer_delay(t, path, big)
    cut = len(path) // 2
    whole = transfer_delay(t, path, big)
    parts = transfer_delay(t, path[:cut + 1], big) + transfer_delay(t, path[cut:], big)
    assert whole == pytest.approx(parts)


def test_synth_deterministic_and_minimal():
    assert dumps_topology(synth_topology(85, 1)) == dumps_topology(synth_topology(85, 1))
    assert dumps_topology(synth_topology(85, 1)) != dumps_topology(synth_topology(85, 2))
    two = synth_topology(2, 9)
    assert len(two.nodes) == 2 and len(two.links) == 1
    with pytest.raises(ValueError):
        synth_topology(1, 0)


@pytest.mark.parametrize("n", [50, 85, 120])
@pytest.mark.parametrize("seed", [1, 2, 3, 4, 5])
def test_synth_bandwidth_profile(n, seed):
    t = synth_topology(n, seed)
    mean = sum(l.bandwidth for l in t.links) / len(t.links)
    assert 13.6 * 0.85 <= mean <= 13.6 * 1.15
    slow = sum(best_path_bandwidth(t, nid) <= 10 for nid in t.node_ids()) / n
    assert slow >= 0.55
    assert all(DEFAULT_PROFILE.bw_min <= l.bandwidth <= DEFAULT_PROFILE.bw_max for l in t.links)


def test_synth_n85_seed1_mean():
    t = synth_topology(85, 1)
    mean = sum(l.bandwidth for l in t.links) / len(t.links)
    assert 11.6 <= mean <= 15.6


def test_best_path_bandwidth_is_max_over_pairs(qmpsu):
    for nid in qmpsu.node_ids()[:10]:
        others = [v for v in qmpsu.node_ids() if v != nid]
        assert best_path_bandwidth(qmpsu, nid) == max(path_bandwidth(qmpsu, nid, v) for v in others)
