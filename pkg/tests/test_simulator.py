from pathlib import Path

from app.netsim.events import EventKind, EventQueue
from app.netsim.exceptions import ParseError
from app.netsim.simulator import Simulator, run
from app.netsim.topology import build_topology
from app.netsim.workload import FlowSpec, install_workload, load_workload

ROOT = Path(__file__).resolve().parent.parent
MS = 1_000_000


def _dumbbell():
    return build_topology(ROOT / "topologies" / "dumbbell6.json")


def _udp(src: str, dst: str, rate: float, **kw) -> dict:
    return {"src": src, "dst": dst, "type": "rate-limited-udp", "rate_mbps": rate, **kw}


def test_event_queue_orders_by_time_then_insertion():
    q = EventQueue()
    q.push(5, EventKind.TIMER, "b")
    q.push(1, EventKind.TIMER, "a")
    q.push(5, EventKind.TIMER, "c")
    assert [q.pop().payload for _ in range(3)] == ["a", "b", "c"]
    assert q.peek_time() is None


def test_single_flow_is_delivered():
    log = run(_dumbbell(), {"flows": [_udp("h0", "h3", 10, name="f")]}, seed=1, duration_ns=20 * MS)
    assert log.delivered > 10
    assert log.dropped == 0
    assert log.conserved()
    d = log.deliveries[0]
    assert (d.flow, d.src, d.dst, d.seq) == ("f", "h0", "h3", 1)
    # три сериализации по 100 Мбит/с плюс распространение
    assert d.latency_ns >= 3 * 1400 * 8 * 10 + (5 + 10 + 5) * 1000


def test_zero_duration_delivers_nothing():
    log = run(_dumbbell(), {"flows": [_udp("h0", "h3", 10)]}, seed=1, duration_ns=0)
    assert log.delivered == 0
    assert log.conserved()


def test_same_seed_same_digest():
    wl = ROOT / "workloads" / "alltoall_30.json"
    a = run(_dumbbell(), wl, seed=7, duration_ns=10 * MS, record_shadow=True)
    b = run(_dumbbell(), wl, seed=7, duration_ns=10 * MS, record_shadow=True)
    assert a.delivered > 0
    assert a.digest() == b.digest()


def test_bottleneck_drops_at_queue():
    flows = [_udp("h0", "h3", 80, name="a"), _udp("h1", "h4", 80, name="b")]
    log = run(_dumbbell(), {"flows": flows}, seed=1, duration_ns=60 * MS)
    assert log.drop_reasons()["queue"] > 0
    assert log.conserved()
    delivered_bits = sum(d.size for d in log.deliveries) * 8
    assert delivered_bits <= 100_000_000 * 0.060 * 1.01


def test_lossy_link_and_blackhole():
    spec = {
        "hosts": [{"name": "h0", "ip": "10.0.0.1"}, {"name": "h1", "ip": "10.0.0.2"}],
        "switches": [{"name": "s0", "id": 1}],
        "links": [{"a": "h0", "b": "s0", "capacity_mbps": 10, "loss": 1.0},
                  {"a": "h1", "b": "s0", "capacity_mbps": 10}],
    }
    log = run(build_topology(spec), {"flows": [_udp("h0", "h1", 1)]}, seed=1, duration_ns=20 * MS)
    assert log.delivered == 0
    assert set(log.drop_reasons()) == {"loss"}

    spec["links"][0]["loss"] = 0.0
    spec["switches"][0]["blackhole"] = True
    log = run(build_topology(spec), {"flows": [_udp("h0", "h1", 1)]}, seed=1, duration_ns=20 * MS)
    assert log.delivered == 0
    assert set(log.drop_reasons()) == {"blackhole"}


def test_bulk_flow_stops_after_size():
    wl = {"flows": [{"src": "h0", "dst": "h3", "type": "bulk", "size_bytes": 14_000, "name": "bulk"}]}
    log = run(_dumbbell(), wl, seed=1, duration_ns=50 * MS)
    assert sum(d.size for d in log.deliveries) == 14_000
    assert log.delivered == 10


def test_stop_ms_ends_flow():
    log = run(_dumbbell(), {"flows": [_udp("h0", "h3", 10, stop_ms=5)]}, seed=1, duration_ns=30 * MS)
    assert log.deliveries
    assert max(d.time_ns for d in log.deliveries) < 6 * MS


def test_utilization_and_queue_samples():
    sim = Simulator(_dumbbell(), 1, util_interval_ns=MS, queue_sample_ns=MS)
    install_workload(sim, {"flows": [_udp("h0", "h3", 50)]})
    log = sim.run_until(10 * MS)
    s0_uplink = [u.tx_util for u in log.util_samples if u.switch == "s0" and u.port == 3]
    assert len(s0_uplink) == 10
    assert abs(s0_uplink[-1] / 65535 - 0.5) < 0.1
    assert log.queue_samples


def test_timers_and_advance():
    sim = Simulator(_dumbbell(), 1, util_interval_ns=0, queue_sample_ns=0)
    fired = []
    sim.at(3 * MS, lambda: fired.append(sim.now))
    sim.after(1 * MS, lambda: fired.append(sim.now))
    assert sim.advance(lambda: len(fired) == 2, 10 * MS)
    assert fired == [1 * MS, 3 * MS]
    assert not sim.advance(lambda: len(fired) == 3, 20 * MS)
    assert sim.now == 20 * MS


def test_write_csv(tmp_path):
    log = run(_dumbbell(), {"flows": [_udp("h0", "h3", 10)]}, seed=1, duration_ns=5 * MS)
    names = sorted(p.name for p in log.write_csv(tmp_path))
    assert names == ["deliveries.csv", "drops.csv", "queues.csv", "tpp_records.csv", "utilization.csv"]
    header = (tmp_path / "deliveries.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header == "time_ns,uid,flow,seq,src,dst,size,latency_ns"


def test_workload_validation():
    for bad in ({"src": "h0", "dst": "h1"},
                {"src": "h0", "dst": "h1", "type": "bulk"},
                {"src": "h0", "type": "messages", "size_bytes": 100},
                {"src": "h0", "dst": "*", "type": "rate-limited-udp", "rate_mbps": 1},
                {"src": "h0", "dst": "h1", "rate_mbps": 1, "packet_bytes": 100_000}):
        try:
            FlowSpec.model_validate(bad)
            assert False, f"should have raised for {bad}"
        except ValueError:
            pass
    try:
        load_workload("{broken")
        assert False, "should have raised"
    except ParseError:
        pass


def test_unknown_host_in_workload():
    sim = Simulator(_dumbbell(), 1)
    try:
        install_workload(sim, {"flows": [_udp("h0", "h9", 1)]})
        assert False, "should have raised"
    except ParseError:
        pass


def test_wildcard_src_expands_per_host():
    sim = Simulator(_dumbbell(), 1)
    sources = install_workload(sim, ROOT / "workloads" / "alltoall_30.json")
    assert sorted(sources) == [f"msg:h{i}" for i in range(6)]
