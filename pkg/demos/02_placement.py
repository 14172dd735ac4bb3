"""Where do the blockchain roles go? BASP against random placement."""
# %%
from meshchain.hlf import HlfConfig
from meshchain.placement import bandwidth_scores, basp, kmeans_geo, random_placement
from meshchain.topology import synth_topology

t = synth_topology(85, 7)
roles = HlfConfig().roles()

# %% phase 1: geographic clusters among highly available nodes
clusters = kmeans_geo(t.nodes.values(), 4, availability_threshold=0.95)
print("cluster sizes:", [len(c) for c in clusters.clusters])
print("inertia per Lloyd iteration:", [f"{x:.2e}" for x in clusters.inertia_history])

# %% phase 2: mean bottleneck bandwidth to the rest of the cluster
scores = bandwidth_scores(t, clusters.clusters[0])
top = sorted(scores, key=scores.get, reverse=True)[:3]
print("best connected in cluster 0:", [(n, round(scores[n], 2)) for n in top])

# %% phase 3 picks cpu * availability inside the 90% band
plan = basp(t, 4, roles=roles)
print(plan.dumps())
for nid in plan.sites():
    n = t.node(nid)
    print(nid, "cpu", n.cpu_capacity, "availability", n.availability)

# %% the baseline draws nodes uniformly
print(random_placement(t, 4, seed=1, roles=roles).dumps())
