"""Endorse, order, validate: what block size does to a 100-transaction burst."""
# %%
from meshchain.engine import Engine
from meshchain.hlf import HlfConfig, HlfNetwork, aggregate
from meshchain.placement import basp
from meshchain.topology import qmpsu_fixture
from meshchain.workload import WorkloadSpec, fire_parallel

t = qmpsu_fixture()

for block_size in (10, 20, 50, 100):
    cfg = HlfConfig(block_size=block_size)
    eng = Engine(t, seed=1)
    net = HlfNetwork(eng, basp(t, 4, roles=cfg.roles()), cfg)
    fire_parallel(net, WorkloadSpec(n=100))
    eng.run_until()
    recs = list(net.records.values())
    done = max(r.commit for r in recs) / 1000
    tte = sum(r.endorse - r.submit for r in recs) / len(recs) / 1000
    print(f"block size {block_size:3d}: {len(net.blocks):2d} blocks, all committed after {done:.1f} s "
          f"(mean time to endorse {tte:.1f} s)")

# %% the CPUs tell the story: the client and endorser are the busy ones
for node, q in sorted(eng.cpus.items()):
    roles = [r for r, n in net.plan.role_assignment.items() if n == node]
    print(node, roles, f"busy {q.busy_fraction(0, eng.now_us):.0%}")

# %% every peer ends with the same state, and replaying the chain reproduces it
print(net.store_digests(), net.replay().digest())
print("alice received", aggregate(net.peers["committer#1"].store, "alice"))
