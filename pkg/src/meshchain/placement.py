"""Role placement on a mesh: the three-phase BASP heuristic and a random baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .topology import MeshTopology, NodeSpec, path_bandwidth

DEFAULT_AVAILABILITY_THRESHOLD = 0.95
MAX_LLOYD_ITERATIONS = 100
CANDIDATE_BAND = 0.9


class PlacementError(ValueError):
    pass


@dataclass
class ClusterSet:
    clusters: list[list[str]]
    centroids: list[tuple[float, float]]
    inertia_history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.clusters)


@dataclass
class PlacementPlan:
    role_assignment: dict[str, str]
    k: int
    method: str  # "basp" | "random" | "fixed"

    def node_for(self, role: str) -> str:
        return self.role_assignment[role]

    def roles(self, prefix: str) -> list[str]:
        """Role instances named ``prefix`` or ``prefix#i``, in declaration order."""
        return [r for r in self.role_assignment if r == prefix or r.startswith(prefix + "#")]

    def nodes_for(self, prefix: str) -> list[str]:
        return [self.role_assignment[r] for r in self.roles(prefix)]

    def sites(self) -> list[str]:
        seen: dict[str, None] = {}
        for nid in self.role_assignment.values():
            seen.setdefault(nid)
        return list(seen)

    def dumps(self) -> str:
        lines = [f"# method {self.method}", f"# k {self.k}"]
        lines += [f"{role} {nid}" for role, nid in self.role_assignment.items()]
        return "\n".join(lines) + "\n"


def load_plan(source: str | TextIO) -> PlacementPlan:
    text = source if isinstance(source, str) else source.read()
    method, k = "fixed", None
    assignment: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "method":
                method = parts[1]
            elif len(parts) == 2 and parts[0] == "k":
                k = int(parts[1])
            continue
        fields = line.split()
        if len(fields) != 2:
            raise PlacementError(f"line {lineno}: expected 'role node_id'")
        if fields[0] in assignment:
            raise PlacementError(f"line {lineno}: role {fields[0]} assigned twice")
        assignment[fields[0]] = fields[1]
    if k is None:
        k = len(set(assignment.values()))
    return PlacementPlan(assignment, k, method)


def _sq(a: tuple[float, float], b: tuple[float, float]) -> float:
    return (a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2


def _inertia(points, assign, centroids) -> float:
    return sum(_sq(p, centroids[c]) for p, c in zip(points, assign))


def kmeans_geo(nodes: Iterable[NodeSpec], k: int,
               availability_threshold: float = DEFAULT_AVAILABILITY_THRESHOLD,
               seed: int = 0) -> ClusterSet:
    """Lloyd's k-means on (lat, lon) after dropping low-availability nodes.

    Seeding is farthest-point from the smallest surviving id; the seed only
    breaks exact distance ties.
    """
    if k < 1:
        raise PlacementError("k must be at least 1")
    survivors = sorted((n for n in nodes if n.availability >= availability_threshold), key=lambda n: n.id)
    if len(survivors) < k:
        raise PlacementError(
            f"only {len(survivors)} nodes meet availability {availability_threshold}, need {k}")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    points = [n.geo for n in survivors]

    chosen = [0]
    mind = [_sq(p, points[0]) for p in points]
    while len(chosen) < k:
        far = max(d for i, d in enumerate(mind) if i not in chosen)
        ties = [i for i, d in enumerate(mind) if d == far and i not in chosen]
        pick = ties[int(rng.integers(len(ties)))] if len(ties) > 1 else ties[0]
        chosen.append(pick)
        mind = [min(m, _sq(p, points[pick])) for m, p in zip(mind, points)]
    centroids = [points[i] for i in chosen]

    assign = [-1] * len(points)
    for c, i in enumerate(chosen):
        assign[i] = c
    history: list[float] = []
    for _ in range(MAX_LLOYD_ITERATIONS):
        changed = False
        for i, p in enumerate(points):
            dists = [_sq(p, c) for c in centroids]
            best = min(range(k), key=lambda c: (dists[c], c))
            if assign[i] >= 0 and dists[assign[i]] == dists[best]:
                continue
            if assign[i] != best:
                assign[i] = best
                changed = True
        # an emptied cluster takes the point farthest from its own centroid
        for c in range(k):
            if c not in assign:
                i = max(range(len(points)),
                        key=lambda j: (assign.count(assign[j]) > 1, _sq(points[j], centroids[assign[j]]), -j))
                assign[i] = c
                changed = True
        for c in range(k):
            members = [points[i] for i in range(len(points)) if assign[i] == c]
            centroids[c] = (sum(p[0] for p in members) / len(members), sum(p[1] for p in members) / len(members))
        history.append(_inertia(points, assign, centroids))
        if not changed:
            break
    clusters = [[survivors[i].id for i in range(len(points)) if assign[i] == c] for c in range(k)]
    return ClusterSet(clusters, centroids, history)


def _assign_roles(roles: Sequence[str] | None, sites: Sequence[str]) -> dict[str, str]:
    if roles is None:
        roles = [f"site#{i + 1}" for i in range(len(sites))]
    if len(set(roles)) != len(roles):
        raise PlacementError("role names must be unique")
    return {role: sites[i % len(sites)] for i, role in enumerate(roles)}


def bandwidth_scores(t: MeshTopology, cluster: Sequence[str]) -> dict[str, float]:
    """Mean bottleneck bandwidth from each member to the rest of its cluster."""
    if len(cluster) == 1:
        return {cluster[0]: math.inf}
    return {
        u: sum(path_bandwidth(t, u, v) for v in cluster if v != u) / (len(cluster) - 1)
        for u in cluster
    }


def basp(t: MeshTopology, k: int, availability_threshold: float = DEFAULT_AVAILABILITY_THRESHOLD,
         seed: int = 0, roles: Sequence[str] | None = None) -> PlacementPlan:
    """Bandwidth and availability-aware placement.

    1. geo k-means over nodes that meet the availability threshold;
    2. per cluster, keep nodes whose mean bottleneck bandwidth to the other
       members is within 10% of the cluster's best;
    3. among those, pick the largest availability * cpu_capacity (ties go to
       the smaller id).

    One site per cluster; roles are dealt to sites round-robin.
    """
    cs = kmeans_geo(t.nodes.values(), k, availability_threshold, seed)
    sites = []
    for cluster in cs.clusters:
        scores = bandwidth_scores(t, cluster)
        top = max(scores.values())
        candidates = [u for u in cluster if scores[u] >= CANDIDATE_BAND * top] if math.isfinite(top) else \
            [u for u in cluster if scores[u] == top]
        best = min(candidates, key=lambda u: (-t.node(u).availability * t.node(u).cpu_capacity, u))
        sites.append(best)
    return PlacementPlan(_assign_roles(roles, sites), k, "basp")


def random_placement(t: MeshTopology, k: int, seed: int = 0,
                     roles: Sequence[str] | None = None) -> PlacementPlan:
    """k distinct nodes drawn uniformly without replacement; roles dealt round-robin."""
    ids = t.node_ids()
    if k < 1 or k > len(ids):
        raise PlacementError(f"cannot pick {k} distinct nodes out of {len(ids)}")
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    picks = rng.choice(len(ids), size=k, replace=False)
    sites = [ids[int(i)] for i in picks]
    return PlacementPlan(_assign_roles(roles, sites), k, "random")


def fixed_placement(assignment: dict[str, str], t: MeshTopology | None = None) -> PlacementPlan:
    if t is not None:
        for nid in assignment.values():
            t.node(nid)
    return PlacementPlan(dict(assignment), len(set(assignment.values())), "fixed")
