"""Wireless mesh topologies: file I/O, hop-shortest paths, bottleneck bandwidth,
transfer delays and a seeded synthetic generator."""
from __future__ import annotations

import math
from importlib import resources
from collections import deque
from dataclasses import dataclass
from statistics import NormalDist
from typing import Iterable, Sequence, TextIO

import networkx as nx
import numpy as np


class TopologyError(ValueError):
    """Raised for malformed or invalid topologies."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateNodeError(TopologyError):
    pass


class DisconnectedTopologyError(TopologyError):
    pass


class UnknownNodeError(KeyError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    id: str
    lat: float
    lon: float
    cpu_capacity: float = 1.0
    availability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.availability <= 1.0:
            raise TopologyError(f"node {self.id}: availability {self.availability} outside [0, 1]")
        if not self.cpu_capacity > 0:
            raise TopologyError(f"node {self.id}: cpu_capacity must be positive")

    @property
    def geo(self) -> tuple[float, float]:
        return (self.lat, self.lon)


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    bandwidth: float  # Mbps
    latency: float = 0.0  # ms, one way
    loss: float = 0.0

    def __post_init__(self):
        if self.a == self.b:
            raise TopologyError(f"self-loop on node {self.a}")
        if not self.bandwidth > 0:
            raise TopologyError(f"link {self.a}-{self.b}: bandwidth must be positive")
        if self.latency < 0:
            raise TopologyError(f"link {self.a}-{self.b}: negative latency")
        if not 0.0 <= self.loss < 1.0:
            raise TopologyError(f"link {self.a}-{self.b}: loss outside [0, 1)")

    @property
    def key(self) -> frozenset[str]:
        return frozenset((self.a, self.b))


class MeshTopology:
    """Immutable undirected mesh graph.

    Construction validates every invariant (unique ids, known endpoints, no
    parallel links, connectivity). Path queries are memoised per instance.
    """

    def __init__(self, nodes: Iterable[NodeSpec], links: Iterable[LinkSpec]):
        self._nodes: dict[str, NodeSpec] = {}
        for node in nodes:
            if node.id in self._nodes:
                raise DuplicateNodeError(f"duplicate node id {node.id!r}")
            self._nodes[node.id] = node
        self._links: dict[frozenset[str], LinkSpec] = {}
        self._adj: dict[str, list[str]] = {nid: [] for nid in self._nodes}
        for link in links:
            for end in (link.a, link.b):
                if end not in self._nodes:
                    raise TopologyError(f"link references unknown node {end!r}")
            if link.key in self._links:
                raise TopologyError(f"parallel link between {link.a} and {link.b}")
            self._links[link.key] = link
            self._adj[link.a].append(link.b)
            self._adj[link.b].append(link.a)
        for nbrs in self._adj.values():
            nbrs.sort()
        if not self._nodes:
            raise TopologyError("topology has no nodes")
        if not self.is_connected():
            raise DisconnectedTopologyError("topology is not connected")
        self._path_cache: dict[tuple[str, str], tuple[str, ...]] = {}
        self._dist_cache: dict[str, dict[str, int]] = {}

    @property
    def nodes(self) -> dict[str, NodeSpec]:
        return dict(self._nodes)

    @property
    def links(self) -> list[LinkSpec]:
        return list(self._links.values())

    def node_ids(self) -> list[str]:
        return sorted(self._nodes)

    def node(self, nid: str) -> NodeSpec:
        try:
            return self._nodes[nid]
        except KeyError:
            raise UnknownNodeError(nid) from None

    def neighbors(self, nid: str) -> list[str]:
        self.node(nid)
        return list(self._adj[nid])

    def link(self, a: str, b: str) -> LinkSpec:
        try:
            return self._links[frozenset((a, b))]
        except KeyError:
            raise TopologyError(f"{a} and {b} are not adjacent") from None

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, nid: object) -> bool:
        return nid in self._nodes

    def is_connected(self) -> bool:
        start = next(iter(self._nodes))
        seen = {start}
        queue = deque([start])
        while queue:
            u = queue.popleft()
            for v in self._adj[u]:
                if v not in seen:
                    seen.add(v)
                    queue.append(v)
        return len(seen) == len(self._nodes)

    def hop_distances(self, target: str) -> dict[str, int]:
        """BFS hop counts from every node to ``target``."""
        self.node(target)
        dist = self._dist_cache.get(target)
        if dist is None:
            dist = {target: 0}
            queue = deque([target])
            while queue:
                u = queue.popleft()
                for v in self._adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        queue.append(v)
            self._dist_cache[target] = dist
        return dist

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MeshTopology):
            return NotImplemented
        return dumps_topology(self) == dumps_topology(other)

    def __repr__(self) -> str:
        return f"MeshTopology(nodes={len(self._nodes)}, links={len(self._links)})"


def shortest_path(t: MeshTopology, a: str, b: str) -> list[str]:
    """Minimum-hop path from ``a`` to ``b``.

    Among equal-hop paths the lexicographically smallest id sequence wins:
    walking from ``a``, always step to the smallest neighbour that is one hop
    closer to ``b``.
    """
    t.node(a)
    t.node(b)
    cached = t._path_cache.get((a, b))
    if cached is not None:
        return list(cached)
    dist = t.hop_distances(b)
    path = [a]
    u = a
    while u != b:
        d = dist[u]
        u = next(v for v in t._adj[u] if dist.get(v) == d - 1)
        path.append(u)
    t._path_cache[(a, b)] = tuple(path)
    return path


def path_bandwidth(t: MeshTopology, a: str, b: str) -> float:
    """Bandwidth of the weakest link on the hop-shortest path, in Mbps."""
    if a == b:
        t.node(a)
        raise ValueError("path bandwidth is undefined for a node to itself")
    path = shortest_path(t, a, b)
    return min(t.link(u, v).bandwidth for u, v in zip(path, path[1:]))


def transfer_delay(t: MeshTopology, path: Sequence[str], message_bytes: int) -> float:
    """Store-and-forward delay in ms of one message along ``path``."""
    if message_bytes < 0:
        raise ValueError("message size must be non-negative")
    total = 0.0
    bits = message_bytes * 8
    for u, v in zip(path, path[1:]):
        link = t.link(u, v)
        total += link.latency + bits / (link.bandwidth * 1e6) * 1000.0
    return total


# --------------------------------------------------------------------------- file format


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps_topology(t: MeshTopology) -> str:
    lines = ["[nodes]", "# id lat lon cpu availability"]
    for nid in t.node_ids():
        n = t._nodes[nid]
        lines.append(f"{n.id} {_fmt(n.lat)} {_fmt(n.lon)} {_fmt(n.cpu_capacity)} {_fmt(n.availability)}")
    lines += ["[links]", "# id_a id_b bandwidth_mbps latency_ms loss"]
    for link in sorted(t._links.values(), key=lambda l: tuple(sorted((l.a, l.b)))):
        a, b = sorted((link.a, link.b))
        lines.append(f"{a} {b} {_fmt(link.bandwidth)} {_fmt(link.latency)} {_fmt(link.loss)}")
    return "\n".join(lines) + "\n"


def load_topology(source: str | TextIO) -> MeshTopology:
    """Parse the line-oriented ``[nodes]`` / ``[links]`` text format."""
    text = source if isinstance(source, str) else source.read()
    section = None
    nodes: list[NodeSpec] = []
    links: list[LinkSpec] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line not in ("[nodes]", "[links]"):
                raise TopologyError(f"unknown section {line}", lineno)
            section = line
            continue
        fields = line.split()
        try:
            if section == "[nodes]":
                if len(fields) != 5:
                    raise TopologyError(f"expected 5 node fields, got {len(fields)}", lineno)
                nid = fields[0]
                if nid in seen:
                    raise DuplicateNodeError(f"duplicate node id {nid!r}", lineno)
                seen.add(nid)
                lat, lon, cpu, avail = (float(f) for f in fields[1:])
                nodes.append(NodeSpec(nid, lat, lon, cpu, avail))
            elif section == "[links]":
                if len(fields) != 5:
                    raise TopologyError(f"expected 5 link fields, got {len(fields)}", lineno)
                bw, lat_ms, loss = (float(f) for f in fields[2:])
                links.append(LinkSpec(fields[0], fields[1], bw, lat_ms, loss))
            else:
                raise TopologyError("record outside of a section", lineno)
        except TopologyError as exc:
            if exc.line is None:
                raise type(exc)(str(exc), lineno) from None
            raise
        except ValueError as exc:
            raise TopologyError(f"bad number: {exc}", lineno) from None
    return MeshTopology(nodes, links)


def read_topology(path) -> MeshTopology:
    with open(path, encoding="utf-8") as fh:
        return load_topology(fh)


def write_topology(t: MeshTopology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_topology(t))


# --------------------------------------------------------------------------- synthesis


@dataclass(frozen=True)
class SynthProfile:
    """Distribution parameters for :func:`synth_topology`.

    Defaults target a QMPSU-like neighbourhood mesh: link throughput log-normal
    with mean 13.6 Mbps and a heavy left mass (most nodes at or under 10 Mbps).
    """

    bw_mean: float = 13.6
    bw_sigma: float = 1.8
    bw_min: float = 0.5
    bw_max: float = 200.0
    mean_degree: float = 1.8  # radius target; component stitching adds more links
    lat_range: tuple[float, float] = (41.370, 41.385)
    lon_range: tuple[float, float] = (2.125, 2.145)
    latency_ms: tuple[float, float] = (0.5, 3.0)
    cpu_sigma: float = 0.45
    cpu_range: tuple[float, float] = (0.25, 4.0)
    availability_shape: float = 18.0
    backbone_noise: float = 0.1


DEFAULT_PROFILE = SynthProfile()


def _clipped_lognormal_mu(mean: float, sigma: float, lo: float, hi: float) -> float:
    """Location parameter giving ``clip(LogNormal(mu, sigma), lo, hi)`` the target mean."""
    z = np.array([NormalDist().inv_cdf((k + 0.5) / 4000) for k in range(4000)])
    a, b = math.log(mean) - 6 * sigma, math.log(mean) + 6 * sigma
    for _ in range(80):
        mid = (a + b) / 2
        if np.clip(np.exp(mid + sigma * z), lo, hi).mean() < mean:
            a = mid
        else:
            b = mid
    return (a + b) / 2


def _lognormal_quantiles(u: np.ndarray, mu: float, sigma: float) -> np.ndarray:
    z = np.array([NormalDist().inv_cdf(float(x)) for x in u])
    return np.exp(mu + sigma * z)


def synth_topology(n: int, seed: int, profile: SynthProfile = DEFAULT_PROFILE) -> MeshTopology:
    """Seeded random geometric mesh with skewed, log-normal link bandwidths.

    Nodes are uniform in the profile's lat/lon box; pairs closer than a radius
    derived from ``mean_degree`` are linked, and leftover components are joined
    through their closest node pair. Link bandwidths come from stratified
    log-normal quantiles so the sample mean stays close to ``bw_mean``; the
    sampled values are assigned along the betweenness backbone, which keeps the
    fast links on a minority of nodes.
    """
    if n < 2:
        raise ValueError("synthetic topology needs at least 2 nodes")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    p = profile
    lat = rng.uniform(*p.lat_range, size=n)
    lon = rng.uniform(*p.lon_range, size=n)
    width = len(str(n - 1))
    ids = [f"n{i:0{width}d}" for i in range(n)]

    pts = np.column_stack([lat, lon])
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    area = (p.lat_range[1] - p.lat_range[0]) * (p.lon_range[1] - p.lon_range[0])
    radius = math.sqrt(p.mean_degree * area / (math.pi * max(n - 1, 1)))
    pairs = {(i, j) for i in range(n) for j in range(i + 1, n) if d[i, j] <= radius}

    # union-find to stitch components together via nearest cross pairs
    parent = list(range(n))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, j in pairs:
        parent[find(i)] = find(j)
    while len({find(i) for i in range(n)}) > 1:
        root0 = find(0)
        inside = [i for i in range(n) if find(i) == root0]
        outside = [j for j in range(n) if find(j) != root0]
        sub = d[np.ix_(inside, outside)]
        a, b = np.unravel_index(int(np.argmin(sub)), sub.shape)
        i, j = sorted((inside[a], outside[b]))
        pairs.add((i, j))
        parent[find(i)] = find(j)

    ordered = sorted(pairs)
    m = len(ordered)
    strata = (np.arange(m) + rng.random()) / m
    mu = _clipped_lognormal_mu(p.bw_mean, p.bw_sigma, p.bw_min, p.bw_max)
    values = np.sort(np.clip(_lognormal_quantiles(strata, mu, p.bw_sigma), p.bw_min, p.bw_max))
    # fast links sit on the backbone: rank links by (noisy) log edge betweenness
    # and hand out the sorted bandwidth sample in that order
    g = nx.Graph()
    g.add_nodes_from(range(n))
    g.add_edges_from(ordered)
    between = nx.edge_betweenness_centrality(g)
    score = np.log([between[e] if e in between else between[e[::-1]] for e in ordered])
    if m > 1 and score.std() > 0:
        score = (score - score.mean()) / score.std()
    score = score + rng.normal(0.0, p.backbone_noise, size=m)
    bws = np.empty(m)
    bws[np.argsort(score, kind="stable")] = values
    lats = rng.uniform(*p.latency_ms, size=m)
    cpu = np.clip(np.exp(rng.normal(0.0, p.cpu_sigma, size=n)), *p.cpu_range) if p.cpu_sigma > 0 else np.ones(n)
    avail = rng.beta(p.availability_shape, 1.0, size=n)

    nodes = [
        NodeSpec(ids[i], round(float(lat[i]), 6), round(float(lon[i]), 6),
                 round(float(cpu[i]), 3), round(float(avail[i]), 4))
        for i in range(n)
    ]
    links = [
        LinkSpec(ids[i], ids[j], round(float(bw), 3), round(float(lt), 3), 0.0)
        for (i, j), bw, lt in zip(ordered, bws, lats)
    ]
    return MeshTopology(nodes, links)


def best_path_bandwidth(t: MeshTopology, nid: str) -> float:
    """Largest path bandwidth from ``nid`` to any other node.

    Every path leaves through an incident link and one-hop paths are always
    hop-shortest, so this equals the strongest incident link.
    """
    return max(t.link(nid, v).bandwidth for v in t.neighbors(nid))


QMPSU_NODES = 85


def qmpsu_fixture() -> MeshTopology:
    """The bundled 85-node neighbourhood mesh: synthetic, with uniform cpu 1.0 nodes."""
    ref = resources.files("meshchain") / "data" / "qmpsu.topo"
    return load_topology(ref.read_text(encoding="utf-8"))
