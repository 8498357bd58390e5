from pathlib import Path

from app.apps.microburst import microburst_program
from app.endhost.control_plane import TppControlPlane
from app.endhost.shim import install_shims
from app.netsim.packet import Packet, standalone_headers
from app.netsim.simulator import Simulator
from app.netsim.topology import build_topology
from app.netsim.workload import install_workload
from app.tpp.codec import STANDALONE_OVERHEAD, encode
from app.tpp.models import TppFlags

ROOT = Path(__file__).resolve().parent.parent
MS = 1_000_000


def _setup(sample_frequency: int = 1, subscribe: bool = True, packet_bytes: int = 1400, rate: float = 10):
    sim = Simulator(build_topology(ROOT / "topologies" / "dumbbell6.json"), 3, util_interval_ns=0, queue_sample_ns=0)
    cp = TppControlPlane()
    reg = cp.register_app(1, "microburst")
    for start, end in [(0x0000, 0x00FF), (0x3000, 0x30FF), (0xB000, 0xB00F)]:
        cp.grant(1, "read", start, end)
    cp.add_tpp({"proto": 17}, encode(microburst_program(5)), sample_frequency, appid=1)
    shims = install_shims(sim, cp, seed=3)
    records = []
    if subscribe:
        for shim in shims.values():
            shim.subscribe(reg.session_id, records.append)
    install_workload(sim, {"flows": [{"name": "f", "src": "h0", "dst": "h3", "rate_mbps": rate,
                                      "packet_bytes": packet_bytes}]})
    return sim, shims, records


def test_transparent_tpp_is_stamped_and_stripped():
    sim, shims, records = _setup()
    sim.run_until(20 * MS)
    h0, h3 = shims["h0"], shims["h3"]
    assert h0.counters["stamped"] == h0.counters["matched"] > 0
    assert h3.counters["stripped"] == len(records) > 0
    # приложение получает кадр без TPP
    assert h3.payload_bytes["f"] == 1400 * len(records)
    rec = records[0]
    assert rec.host == "h3" and rec.origin == "h0"
    assert rec.hops == 2
    assert [hop[:2] for hop in rec.slots] == [(1, 3), (2, 0)]
    assert not rec.error and not rec.truncated
    assert len(sim.log.tpp_records) == len(records)


def test_sampling_stamps_a_fraction():
    sim, shims, _ = _setup(sample_frequency=4, rate=20)
    sim.run_until(50 * MS)
    h0 = shims["h0"]
    assert 0 < h0.counters["stamped"] < h0.counters["matched"]


def test_oversized_frame_is_sent_without_tpp():
    sim, shims, records = _setup(packet_bytes=1480)
    sim.run_until(10 * MS)
    assert shims["h0"].counters["mtu_exceeded"] > 0
    assert shims["h0"].counters["stamped"] == 0
    assert records == []
    assert sim.log.delivered > 0


def test_unknown_session_is_counted():
    sim, shims, records = _setup(subscribe=False)
    sim.run_until(10 * MS)
    assert shims["h3"].counters["unknown_session"] == shims["h3"].counters["stripped"] > 0
    assert sim.log.tpp_records == []


def test_standalone_tpp_is_echoed_back():
    sim, shims, _ = _setup(rate=0.01)
    topo = sim.topo
    got = []
    shims["h0"].expect(77, got.append)
    probe = microburst_program(5).with_flags(TppFlags.STANDALONE)
    pkt = Packet(sim.next_uid(), standalone_headers(topo.host_ip("h0"), topo.host_ip("h3")), STANDALONE_OVERHEAD,
                 probe, src="h0", dst="h3", notes={"probe": 77})
    sim.inject("h0", pkt)
    sim.advance(lambda: bool(got), 10 * MS)
    assert shims["h3"].counters["echoed"] == 1
    [rec] = got
    assert rec.echoed
    assert rec.origin == "h0"
    assert rec.forward_hops == 2
    # эхо исполняется и на обратном пути
    assert rec.hops == 4
    assert [hop[0] for hop in rec.slots] == [1, 2, 2, 1]
    assert rec.rtt_ns > 0
