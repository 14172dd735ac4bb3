import pytest

from conftest import make_topology
from meshchain.engine import Engine, SchedulingError, SimEvent, TIMER, ms_to_us


@pytest.fixture
def line():
    # a - b - c - d, 2 ms per hop, fast links
    return make_topology([("a", "b", 1000.0, 2.0), ("b", "c", 1000.0, 2.0), ("c", "d", 1000.0, 2.0)])


def test_same_time_events_fire_in_schedule_order(line):
    eng = Engine(line)
    fired = []
    eng.at(0, TIMER, lambda ev: fired.append("now"))
    eng.at(0, TIMER, lambda ev: fired.append("A"))
    eng.at(0, TIMER, lambda ev: fired.append("B"))
    eng.run_until()
    assert fired == ["now", "A", "B"]


def test_schedule_in_past_rejected(line):
    eng = Engine(line)
    eng.at(10, TIMER)
    eng.run_until()
    with pytest.raises(SchedulingError):
        eng.schedule(SimEvent(eng.now_us - 1))


def test_run_until_examples(line):
    assert Engine(line).run_until() == []
    eng = Engine(line)
    eng.timer(5, lambda ev: None, node="a", detail="tick")
    trace = eng.run_until()
    assert [(r.time_us, r.kind) for r in trace] == [(5000, "timer")]
    assert trace.dumps() == "5000 a timer tick\n"


def test_run_until_horizon_and_stop(line):
    eng = Engine(line)
    for ms in (1, 2, 3):
        eng.timer(ms, lambda ev: None)
    eng.run_until(2)
    assert eng.now == 2 and eng.pending() == 1
    eng.timer(4, lambda ev: eng.stop())
    eng.timer(5, lambda ev: None)
    eng.run_until()
    assert eng.now == 4 and eng.pending() == 1


def test_send_message_delays(line):
    eng = Engine(line)
    got = []
    assert eng.send_message("a", "a", 100, "self", got.append) == 0
    one = eng.send_message("a", "b", 10, "1", got.append)
    three = eng.send_message("a", "d", 10, "3", got.append)
    assert three > one
    assert three == pytest.approx(ms_to_us(6.0), abs=2)
    eng.run_until()
    assert got == ["self", "1", "3"]
    with pytest.raises(KeyError):
        eng.send_message("a", "zz", 10)


def test_cpu_queue_arithmetic(line):
    eng = Engine(line, base_service_ms=2.0)
    fast = make_topology([("p", "q", 10.0)], p={"cpu_capacity": 4.0})
    q = eng.cpu("a")
    ends = [q.submit(10, None) for _ in range(3)]
    assert ends == [20_000, 40_000, 60_000]
    fe = Engine(fast, base_service_ms=2.0)
    assert fe.cpu("p").submit(10, None) == 5_000
    eng.run_until()
    # idle queue restarts from now, not from busy_until
    eng.timer(100, lambda ev: None)
    eng.run_until()
    assert q.submit(1, None) == 102_000
    assert q.busy_fraction(0, 60_000) == 1.0
    with pytest.raises(ValueError):
        q.submit(-1, None)


def test_trace_order_and_disjoint_service(qmpsu):
    from meshchain.hlf import HlfConfig, HlfNetwork
    from meshchain.placement import basp

    cfg = HlfConfig()
    eng = Engine(qmpsu, seed=3)
    net = HlfNetwork(eng, basp(qmpsu, 2, roles=cfg.roles()), cfg)
    for _ in range(30):
        net.submit_tx(("sendMoney", ["alice", "1", "+"]))
    trace = eng.run_until()
    times = [r.time_us for r in trace]
    assert times == sorted(times)
    for q in eng.cpus.values():
        iv = sorted(q.intervals)
        assert all(a[1] <= b[0] for a, b in zip(iv, iv[1:]))


def test_identical_runs_identical_traces(qmpsu):
    def once():
        eng = Engine(qmpsu, seed=7)
        for i, dst in enumerate(qmpsu.node_ids()[::7]):
            eng.send_message("n00", dst, 1000 * (i + 1), i)
        eng.cpu("n00").submit(float(eng.rng.integers(1, 100)), None)
        return eng.run_until().dumps()

    assert once() == once()
