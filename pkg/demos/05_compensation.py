"""Monthly cost sharing between mesh participants, settled on a ledger."""
# %%
from meshchain.compensation import (compensation_chaincode, compute_settlement, parse_records,
                                    read_settlement, record_period, settle)
from meshchain.engine import Engine
from meshchain.hlf import HlfConfig, HlfNetwork, aggregate
from meshchain.placement import basp
from meshchain.topology import qmpsu_fixture

declared = parse_records("""
# participant period contribution_cost consumption_usage
school     1  1200   300
library    1   800   100
cafe       1     0   250
neighbours 1   150   350
""")
res = compute_settlement(declared)
print("charges:", res.charges)
print("net:    ", res.net_balance, "sum", sum(res.net_balance.values()))
print("transfers:", res.transfers)

# %% the same computation as chaincode: records in, settlement out
t = qmpsu_fixture()
cfg = HlfConfig(block_size=5)
eng = Engine(t)
net = HlfNetwork(eng, basp(t, 4, roles=cfg.roles()), cfg, chaincode=compensation_chaincode())
record_period(net, declared)
eng.run_until()
settle(net, 1)
eng.run_until()
store = net.peers["committer#1"].store
print(read_settlement(store, 1) == res)
print({p.participant: aggregate(store, p.participant) for p in declared})
