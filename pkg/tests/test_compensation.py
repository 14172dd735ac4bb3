import pytest
from hypothesis import given, settings, strategies as st

from meshchain.compensation import (
    CompensationError, CompensationRecord, SettlementError, aggregate, by_period, check_period,
    compensation_chaincode, compute_settlement, greedy_transfers, largest_remainder, parse_records,
    pay_on_poa, read_settlement, record_period, send_money, settle,
)
from meshchain.engine import Engine
from meshchain.hlf import HlfConfig, HlfNetwork, aggregate as ledger_aggregate
from meshchain.placement import basp
from meshchain.poa import PoaConfig, PoaNetwork
from meshchain.records import REJECTED, VALID


def R(p, c, u, period=1):
    return CompensationRecord(p, period, c, u)


def test_send_money_deltas():
    entries = [send_money("Alice", 10, "+", "t1"), send_money("Alice", 3, "-", "t2")]
    assert aggregate(entries, "Alice") == 7
    assert aggregate([], "Alice") == 0
    assert entries[0].key != entries[1].key
    for bad in (0, -5, 1.5):
        with pytest.raises(CompensationError):
            send_money("Alice", bad, "+", "t")
    with pytest.raises(CompensationError):
        send_money("Alice", 1, "x", "t")


def test_settle_worked_example():
    res = compute_settlement([R("A", 30, 10), R("B", 0, 20)])
    assert res.charges == {"A": 10, "B": 20}
    assert res.net_balance == {"A": 20, "B": -20}
    assert res.transfers == [("B", "A", 20)]


def test_settle_trivial_cases():
    solo = compute_settlement([R("A", 17, 4)])
    assert solo.net_balance == {"A": 0} and solo.transfers == []
    even = compute_settlement([R(p, 10, 5) for p in "ABCD"])
    assert set(even.net_balance.values()) == {0}
    with pytest.raises(SettlementError):
        compute_settlement([R("A", 10, 0), R("B", 5, 0)])
    assert compute_settlement([R("A", 0, 0)]).net_balance == {"A": 0}


def test_record_period_validation():
    assert check_period([]) is None
    assert check_period([R("A", 1, 1), R("B", 1, 1)]) == 1
    with pytest.raises(CompensationError):
        check_period([R("A", 1, 1), R("A", 2, 2)])
    with pytest.raises(CompensationError):
        CompensationRecord("A", 1, -1, 0)


def test_largest_remainder_ties_and_exactness():
    assert largest_remainder([1, 1, 1], 10) == [4, 3, 3]
    assert largest_remainder([0, 0], 0) == [0, 0]
    assert sum(largest_remainder([7, 13, 1, 0, 99], 1001)) == 1001


def test_greedy_matcher_order():
    assert greedy_transfers({"a": -5, "b": -5, "c": 7, "d": 3}) == [("a", "c", 5), ("b", "d", 3), ("b", "c", 2)]


records_strategy = st.lists(
    st.tuples(st.integers(0, 10_000), st.integers(0, 10_000)), min_size=1, max_size=50,
).map(lambda rows: [R(f"p{i:02d}", c, u) for i, (c, u) in enumerate(rows)]) \
 .filter(lambda recs: sum(r.consumption_usage for r in recs) > 0)


@settings(max_examples=300, deadline=None)
@given(records_strategy)
def test_zero_sum_and_complete_transfers(records):
    res = compute_settlement(records)
    assert sum(res.net_balance.values()) == 0
    assert sum(res.charges.values()) == sum(r.contribution_cost for r in records)
    assert set(res.residuals().values()) <= {0}
    for payer, payee, amount in res.transfers:
        assert amount > 0 and res.net_balance[payer] < 0 < res.net_balance[payee]
    assert compute_settlement(list(records)).transfers == res.transfers


@settings(max_examples=200, deadline=None)
@given(records_strategy, st.integers(1, 9))
def test_scale_covariance(records, factor):
    # pad the total cost to a multiple of total usage so every share is exact
    usage = sum(r.consumption_usage for r in records)
    pad = -sum(r.contribution_cost for r in records) % usage
    recs = list(records) + [R("zz", pad, 0)]
    scaled = [R(r.participant, r.contribution_cost * factor, r.consumption_usage) for r in recs]
    base, big = compute_settlement(recs), compute_settlement(scaled)
    assert big.net_balance == {p: v * factor for p, v in base.net_balance.items()}
    assert big.transfers == [(a, b, x * factor) for a, b, x in base.transfers]


def test_parse_records():
    text = "# participant period cost usage\nA 1 30 10\nB 1 0 20  # quiet month\n\nA 2 5 5\n"
    recs = parse_records(text)
    assert [r.participant for r in recs] == ["A", "B", "A"]
    assert list(by_period(recs)) == [1, 2]
    with pytest.raises(CompensationError) as err:
        parse_records("A 1 2\n")
    assert "line 1" in str(err.value)
    with pytest.raises(CompensationError):
        parse_records("A 1 x 2\n")


def hlf_net(qmpsu):
    cfg = HlfConfig(block_size=5)
    eng = Engine(qmpsu)
    return eng, HlfNetwork(eng, basp(qmpsu, 4, roles=cfg.roles()), cfg, chaincode=compensation_chaincode())


def test_settlement_on_hlf(qmpsu):
    eng, net = hlf_net(qmpsu)
    recs = [R("A", 30, 10), R("B", 0, 20), R("C", 12, 6)]
    ids = record_period(net, recs)
    assert len(ids) == 3
    assert record_period(net, []) == []
    eng.run_until()
    assert all(net.records[i].status == VALID for i in ids)
    tx = settle(net, 1)
    eng.run_until()
    assert net.records[tx].status == VALID
    store = net.peers["committer#1"].store
    res = read_settlement(store, 1)
    assert res == compute_settlement(recs)
    assert {p: ledger_aggregate(store, p) for p in "ABC"} == res.net_balance
    again = settle(net, 1)
    eng.run_until()
    assert net.records[again].status == REJECTED and "already settled" in net.records[again].reason


def test_duplicate_record_rejected_on_chain(qmpsu):
    eng, net = hlf_net(qmpsu)
    record_period(net, [R("A", 1, 1)])
    eng.run_until()
    second = record_period(net, [R("A", 2, 2)])
    eng.run_until()
    assert net.records[second[0]].status == REJECTED
    with pytest.raises(CompensationError):
        record_period(net, [R("A", 1, 1), R("A", 1, 1)])


def test_parallel_send_money_all_valid(qmpsu):
    eng, net = hlf_net(qmpsu)
    for _ in range(100):
        net.submit_tx(("sendMoney", ["Alice", "3", "+"]))
    eng.run_until()
    assert all(r.status == VALID for r in net.records.values())
    assert ledger_aggregate(net.peers["committer#1"].store, "Alice") == 300


def test_settlement_paid_on_poa(qmpsu):
    res = compute_settlement([R("A", 30, 10), R("B", 0, 20), R("C", 12, 6)])
    cfg = PoaConfig()
    eng = Engine(qmpsu)
    net = PoaNetwork(eng, basp(qmpsu, 2, roles=cfg.roles()), cfg, {"A": 100, "B": 100, "C": 100})
    ids = pay_on_poa(net, res)
    eng.run_until()
    assert all(net.records[i].status == VALID for i in ids)
    assert {a: net.get_balance(a) - 100 for a in "ABC"} == res.net_balance
