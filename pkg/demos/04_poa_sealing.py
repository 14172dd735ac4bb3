"""Proof-of-authority: sealing on a 5 s clock, finality after 12 more blocks."""
# %%
from collections import Counter

from meshchain.engine import Engine
from meshchain.placement import basp
from meshchain.poa import PoaConfig, PoaNetwork
from meshchain.topology import qmpsu_fixture
from meshchain.workload import WorkloadSpec, fire_parallel

t = qmpsu_fixture()


def burst(n, **kw):
    cfg = PoaConfig(**kw)
    eng = Engine(t, record_trace=False)
    net = PoaNetwork(eng, basp(t, len(cfg.roles()), roles=cfg.roles()), cfg)
    fire_parallel(net, WorkloadSpec(n=n, call=("alice", "bob", 1)))
    eng.run_until()
    return net


# %%
for n in (1, 100, 1000):
    net = burst(n)
    recs = list(net.records.values())
    seal = max(r.seal - r.submit for r in recs)
    comp = min(r.complete - r.submit for r in recs)
    print(f"{n:5d} txs: blocks used {sorted(Counter(r.block for r in recs).items())}, "
          f"worst sealing {seal / 1000:.0f} s, earliest completion {comp / 1000:.0f} s")

# %% more sealer instances, each one more hop for the pending transactions
for sealers in (1, 2, 4):
    recs = burst(1000, sealers=sealers).records.values()
    print(sealers, "sealers: mean sealing", round(sum(r.seal - r.submit for r in recs) / 1000 / len(recs), 1), "s")

# %% past the accept capacity, transactions age out
net = burst(10_000, accept_work=60.0)
print(Counter(r.status for r in net.records.values()))
