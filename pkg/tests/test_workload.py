import pytest

from meshchain.engine import Engine
from meshchain.hlf import HlfConfig, HlfNetwork
from meshchain.placement import basp
from meshchain.poa import PoaConfig, PoaNetwork
from meshchain.workload import WorkloadError, WorkloadSpec, fire_parallel, fire_sequential


def hlf(qmpsu, cfg=HlfConfig()):
    eng = Engine(qmpsu)
    return eng, HlfNetwork(eng, basp(qmpsu, 4, roles=cfg.roles()), cfg)


def poa(qmpsu):
    cfg = PoaConfig()
    eng = Engine(qmpsu)
    return eng, PoaNetwork(eng, basp(qmpsu, 2, roles=cfg.roles()), cfg)


def test_spec_validation():
    with pytest.raises(WorkloadError):
        WorkloadSpec(n=0)
    with pytest.raises(WorkloadError):
        WorkloadSpec(mode="bursty")


def test_parallel_same_instant(qmpsu):
    eng, net = hlf(qmpsu)
    ids = fire_parallel(net, WorkloadSpec(n=100))
    eng.run_until()
    assert len(ids) == len(set(ids)) == 100 and ids == sorted(ids)
    assert {net.records[i].submit for i in ids} == {0.0}
    eng, net = hlf(qmpsu)
    assert fire_parallel(net, WorkloadSpec(n=1)) == ["w000001"]


def test_parallel_delayed_start(qmpsu):
    eng, net = hlf(qmpsu)
    fire_parallel(net, WorkloadSpec(n=3, start_time=250.0))
    eng.run_until()
    assert {r.submit for r in net.records.values()} == {250.0}


def test_invalid_targets(qmpsu):
    _, net = hlf(qmpsu)
    with pytest.raises(WorkloadError):
        fire_parallel(net, WorkloadSpec(target="client#7"))
    _, pnet = poa(qmpsu)
    spare = next(n for n in qmpsu.node_ids() if n not in pnet.sites())
    with pytest.raises(WorkloadError):
        fire_sequential(pnet, WorkloadSpec(target=spare, call=("alice", "bob", 1)))


def test_sequential_chains_on_commit(qmpsu):
    eng, net = hlf(qmpsu)
    ids = fire_sequential(net, WorkloadSpec(mode="sequential", n=5))
    eng.run_until()
    recs = [net.records[i] for i in ids]
    for a, b in zip(recs, recs[1:]):
        assert b.submit == a.commit
    # never two transactions in flight
    spans = [(r.submit, r.commit) for r in recs]
    assert all(x[1] <= y[0] for x, y in zip(spans, spans[1:]))


def test_sequential_one_equals_parallel_one(qmpsu):
    eng1, n1 = hlf(qmpsu)
    fire_sequential(n1, WorkloadSpec(n=1))
    eng1.run_until()
    eng2, n2 = hlf(qmpsu)
    fire_parallel(n2, WorkloadSpec(n=1))
    eng2.run_until()
    assert eng1.trace.dumps() == eng2.trace.dumps()


def test_sequential_latency_near_one_second(qmpsu):
    # with one-transaction blocks nothing waits on the batch timer
    eng, net = hlf(qmpsu, HlfConfig(block_size=1))
    ids = fire_sequential(net, WorkloadSpec(n=100))
    eng.run_until()
    lat = [net.records[i].commit - net.records[i].submit for i in ids]
    assert 800 <= sum(lat) / len(lat) <= 1500


def test_poa_sequential_and_saturation(qmpsu):
    eng, net = poa(qmpsu)
    ids = fire_sequential(net, WorkloadSpec(n=3, call=("alice", "bob", 2)))
    eng.run_until()
    recs = [net.records[i] for i in ids]
    assert all(b.submit == a.complete_observed for a, b in zip(recs, recs[1:]))
    eng, net = poa(qmpsu)
    ids = fire_parallel(net, WorkloadSpec(n=10_000, call=("alice", "bob", 1)))
    eng.run_until()
    assert len(ids) == 10_000 and any(net.records[i].status == "dropped" for i in ids)
