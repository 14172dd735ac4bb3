import pytest

from meshchain.topology import LinkSpec, MeshTopology, NodeSpec, qmpsu_fixture


def make_topology(edges, nodes=None, **node_attrs):
    """Small helper: ``edges`` is [(a, b, bw)] or [(a, b, bw, latency)]."""
    ids = sorted({e[0] for e in edges} | {e[1] for e in edges} | set(nodes or ()))
    specs = [NodeSpec(i, 41.0 + k * 0.001, 2.0, **node_attrs.get(i, {})) for k, i in enumerate(ids)]
    links = [LinkSpec(e[0], e[1], e[2], e[3] if len(e) > 3 else 0.0) for e in edges]
    return MeshTopology(specs, links)


@pytest.fixture(scope="session")
def qmpsu():
    return qmpsu_fixture()


@pytest.fixture
def line3():
    return make_topology([("A", "B", 13.6, 2.0), ("B", "C", 10.0, 2.0)])
