"""A tour of mesh topologies: the bundled fixture, path queries, synthetic meshes."""
# %%
import numpy as np

from meshchain.topology import (best_path_bandwidth, path_bandwidth, qmpsu_fixture, shortest_path,
                                synth_topology, transfer_delay)

t = qmpsu_fixture()
print(t)
bw = np.array([l.bandwidth for l in t.links])
print(f"link bandwidth: mean {bw.mean():.1f} Mbps, median {np.median(bw):.1f}, max {bw.max():.1f}")

# %% paths are hop-shortest; the bandwidth of a path is its weakest link
a, b = "n00", "n84"
path = shortest_path(t, a, b)
print(" -> ".join(path))
print(f"bottleneck {path_bandwidth(t, a, b)} Mbps, 2 KB message takes {transfer_delay(t, path, 2000):.2f} ms")

# %% most nodes only reach the rest of the mesh through slow links
slow = np.mean([best_path_bandwidth(t, n) <= 10 for n in t.node_ids()])
print(f"{slow:.0%} of nodes have no link faster than 10 Mbps")

# %% synthetic meshes are a pure function of (n, seed, profile)
for seed in range(3):
    s = synth_topology(85, seed)
    m = np.mean([l.bandwidth for l in s.links])
    print(f"seed {seed}: {len(s.links)} links, mean {m:.1f} Mbps, "
          f"cpu range {min(n.cpu_capacity for n in s.nodes.values())}-{max(n.cpu_capacity for n in s.nodes.values())}")
