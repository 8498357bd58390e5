from hypothesis import HealthCheck, assume, given, settings, strategies as st

from app.apps.microburst import microburst_program
from app.netsim.packet import Headers, Packet, ip
from app.switch.dataplane import dequeue, enqueue, forward_and_execute
from app.switch.pipeline import (
    AclAction, HashField, RouteAction, install_acl, install_group, install_qos, install_route, select_path,
)
from app.switch.rewrite import rewrite_push_pop, update_link_utilization
from app.switch.state import DROP_PORT, PacketMetadata, ShadowLog, SwitchState
from app.switch.tcpu import assign_stack_slots, run_sequential
from app.tpp.assembler import assemble
from app.tpp.exceptions import MemoryOverflow
from app.tpp.memory_map import resolve_address
from app.tpp.models import Instruction, Opcode, TppProgram


def _switch(queue_bytes: int = 150_000, num_queues: int = 1) -> SwitchState:
    sw = SwitchState(4, "s4", ip=ip("10.255.0.4"))
    sw.add_link(10, 100_000_000, queue_bytes, num_queues)
    sw.add_link(11, 100_000_000, queue_bytes, num_queues)
    sw.add_link(12, 100_000_000, queue_bytes, num_queues)
    install_route(sw, 1, ip("10.255.0.4"), 32, RouteAction(local=True))
    install_route(sw, 2, ip("10.0.0.0"), 8, RouteAction(port=1))
    install_route(sw, 3, ip("10.0.7.0"), 24, RouteAction(port=2))
    return sw


def _packet(uid: int = 1, dst: str = "10.0.0.2", size: int = 100, tpp=None, **kw) -> Packet:
    return Packet(uid, Headers(ip("10.0.0.1"), ip(dst), **kw), size, tpp)


def test_longest_prefix_wins():
    sw = _switch()
    _, trace = forward_and_execute(_packet(dst="10.0.7.9"), sw, 0)
    assert trace.output_port == 2
    _, trace = forward_and_execute(_packet(dst="10.0.8.9"), sw, 0)
    assert trace.output_port == 1


def test_tpp_executes_and_hop_is_logged():
    sw = _switch()
    pkt, trace = forward_and_execute(_packet(tpp=microburst_program(3)), sw, 0, now_ns=1234)
    assert pkt.tpp.header.hop_index == 1
    # 100 + 42 байта TPP + 2 байта ethertype = 144 байта, 3 ячейки
    assert pkt.size == 144
    assert pkt.tpp.hop_words(0) == [4, 1, 3]
    assert len(pkt.path_log) == 1
    rec = pkt.path_log[0]
    assert (rec.switch_id, rec.in_port, rec.out_port, rec.queue) == (4, 0, 1, 0)
    assert rec.matched[1] == 2
    assert rec.time_ns == 1234
    assert not trace.dropped
    assert sw.links[1].queues[0].frames[0] is pkt


def test_packet_size_matches_wire_frame():
    pkt = _packet(size=100, tpp=microburst_program(2))
    assert pkt.size == len(pkt.to_frame()) == 100 + 36 + 2
    program = assemble(".hops 2\n.standalone\nPUSH [Switch:SwitchID]")
    standalone = Packet(2, Headers(ip("10.0.0.1"), ip("10.0.0.2")), 42, program)
    assert standalone.size == len(standalone.to_frame()) == 42 + program.size


def test_egress_reads_queue_with_own_frame():
    sw = _switch()
    pkt, _ = forward_and_execute(_packet(uid=1, size=640, tpp=microburst_program(1)), sw, 0)
    q = sw.links[1].queues[0]
    assert q.occupancy_bytes == pkt.size == 640 + 30 + 2
    assert pkt.tpp.hop_words(0)[2] == q.occupancy_cells == 11


def test_queue_occupancy_seen_by_next_packet():
    sw = _switch()
    forward_and_execute(_packet(uid=1, size=640), sw, 0)
    pkt, _ = forward_and_execute(_packet(uid=2, tpp=microburst_program(2)), sw, 0)
    # 640 + (100 + 36 + 2) = 778 байт, 13 ячеек
    assert pkt.tpp.hop_words(0)[2] == 13
    assert len(pkt.path_log) == 1


def test_acl_deny_drops_and_skips_egress():
    sw = _switch()
    install_acl(sw, 1, {"dst_port": 80}, AclAction.DENY)
    pkt, trace = forward_and_execute(_packet(tpp=microburst_program(2), dst_port=80), sw, 0)
    assert trace.dropped
    assert trace.output_port is None
    # PUSH [PacketMetadata:OutputPort] живёт на egress-стадии
    assert [r.disposition() for r in trace.records] == ["ok", "not-reached", "not-reached"]
    assert not any(link.queues[0].frames for link in sw.links)


def test_no_route_is_dropped():
    sw = _switch()
    _, trace = forward_and_execute(_packet(dst="192.168.1.1"), sw, 0)
    assert trace.dropped


def test_group_selects_port_by_vlan():
    sw = _switch()
    install_group(sw, 9, [1, 2], HashField.VLAN)
    install_route(sw, 4, ip("10.9.0.0"), 16, RouteAction(group=9))
    _, t0 = forward_and_execute(_packet(dst="10.9.0.1", vlan=0), sw, 0)
    _, t1 = forward_and_execute(_packet(dst="10.9.0.1", vlan=1), sw, 0)
    _, t2 = forward_and_execute(_packet(dst="10.9.0.1", vlan=2), sw, 0)
    assert (t0.output_port, t1.output_port, t2.output_port) == (1, 2, 1)


def test_hashed_group_is_deterministic():
    sw = _switch()
    group = install_group(sw, 9, [0, 1, 2], HashField.FIVE_TUPLE)
    meta = PacketMetadata(ip_src=1, ip_dst=2, ip_proto=17, src_port=1000, dst_port=2000)
    first = select_path(group, meta)
    assert first in (0, 1, 2)
    assert all(select_path(group, meta) == first for _ in range(5))
    assert select_path(None, meta, fallback_port=7) == 7


def test_qos_selects_queue():
    sw = _switch(num_queues=2)
    install_qos(sw, 1, {"dst_port": 5001}, queue=1)
    _, trace = forward_and_execute(_packet(dst_port=5001), sw, 0)
    assert trace.output_queue == 1
    assert len(sw.links[1].queues[1].frames) == 1


def test_standalone_tpp_to_switch_is_echoed():
    sw = _switch()
    install_route(sw, 4, ip("10.0.0.1"), 32, RouteAction(port=0))
    probe = assemble(".hops 2\n.standalone\nPUSH [Switch:SwitchID]")
    pkt = Packet(1, Headers(ip("10.0.0.1"), sw.ip), 42, probe)
    pkt, trace = forward_and_execute(pkt, sw, 0)
    assert pkt.echoed
    assert pkt.headers.dst_ip == ip("10.0.0.1")
    assert trace.output_port == 0


def test_drop_tail():
    sw = _switch(queue_bytes=250)
    q = sw.links[1].queues[0]
    assert enqueue(sw, q, _packet(uid=1))
    assert enqueue(sw, q, _packet(uid=2))
    assert not enqueue(sw, q, _packet(uid=3))
    assert q.drop_packets == 1 and q.drop_bytes == 100
    assert sw.links[1].drop_packets == 1
    assert q.occupancy_bytes == 200

    pkt, trace = forward_and_execute(_packet(uid=4, tpp=microburst_program(2)), sw, 0)
    assert trace.dropped
    assert q.drop_packets == 2


def test_drr_alternates_between_queues():
    sw = _switch(num_queues=2)
    link = sw.links[1]
    for uid in (1, 2, 3):
        enqueue(sw, link.queues[0], _packet(uid=uid, size=1000))
    enqueue(sw, link.queues[1], _packet(uid=10, size=1000))
    order = [dequeue(sw, link).uid for _ in range(4)]
    assert order == [1, 10, 2, 3]
    assert dequeue(sw, link) is None
    assert link.tx_packets == 4 and link.tx_bytes == 4000
    assert link.queues[0].occupancy_bytes == 0


def test_drr_weight_shares_bandwidth():
    sw = _switch(num_queues=2)
    link = sw.links[1]
    link.queues[0].sched_weight = 2
    for uid in range(6):
        enqueue(sw, link.queues[0], _packet(uid=uid, size=1500))
        enqueue(sw, link.queues[1], _packet(uid=100 + uid, size=1500))
    first = [dequeue(sw, link).uid for _ in range(6)]
    assert sum(1 for u in first if u < 100) == 4


def test_shadow_log_tracks_tpp_writes():
    sw = _switch()
    shadow = ShadowLog(lambda a: a.writable)
    sw.attach_shadow(shadow)
    before = shadow.seq
    p = assemble(".hops 1\nSTORE [Link:AppSpecific_1], [Packet:Hop[0]]\nPacketMemory:\n  Hop1: 77")
    run_sequential(p, sw, PacketMetadata(output_port_bitmap=0b10))
    writes = shadow.writes_by("tpp:")
    assert len(writes) == 1
    app1 = resolve_address("[Link1:AppSpecific_1]").raw
    assert writes[0].address == app1
    assert shadow.value_at(4, app1, before) == 0
    assert shadow.value_at(4, app1, shadow.seq) == 77


def test_dropped_metadata_port():
    assert PacketMetadata(output_port_bitmap=0).output_port == DROP_PORT
    assert PacketMetadata(output_port_bitmap=0b1100).output_port == 2


def test_rewrite_push_pop_assigns_slots():
    p = assemble(".hops 2\nPUSH [Switch:SwitchID]\nLOAD [Link:QueueSize], [Packet:Hop[2]]\nPUSH [Link:QueueSize]")
    out = rewrite_push_pop(p)
    assert [i.opcode for i in out.instructions] == [Opcode.LOAD, Opcode.LOAD, Opcode.LOAD]
    assert [i.slot for i in out.instructions] == [0, 2, 1]
    assert out.header.sp == 4


_READ = [resolve_address(m).raw for m in (
    "[Switch:SwitchID]", "[Switch:NumPorts]", "[PacketMetadata:InputPort]", "[Link:QueueSize]",
    "[Link:AppSpecific_0]", "[Queue:QueueCapacity]")] + [0x0FFF]
_WRITE = [resolve_address(m).raw for m in ("[Link:AppSpecific_0]", "[Link:AppSpecific_1]")] + [0x0000, 0x0FFF]

_stack_insn = st.one_of(
    st.builds(lambda a: Instruction(Opcode.PUSH, a), st.sampled_from(_READ)),
    st.builds(lambda a: Instruction(Opcode.POP, a), st.sampled_from(_WRITE)),
    st.builds(lambda a, s: Instruction(Opcode.LOAD, a, s), st.sampled_from(_READ), st.integers(0, 5)),
    st.builds(lambda a, s: Instruction(Opcode.STORE, a, s), st.sampled_from(_WRITE), st.integers(0, 5)),
)


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.filter_too_much])
@given(st.lists(_stack_insn, min_size=1, max_size=5), st.sampled_from([0, 2, 4]),
       st.lists(st.integers(0, 0xFFFF), min_size=6, max_size=6))
def test_rewrite_push_pop_keeps_final_state(insns, sp, words):
    p = TppProgram.create(insns, 6, 1, {0: words}, sp=sp)
    plan = assign_stack_slots(p)
    assume(all(s is not None for i, s in zip(insns, plan.slots) if i.opcode in (Opcode.PUSH, Opcode.POP)))
    sw_a, sw_b = _switch(), _switch()
    want, _ = run_sequential(p, sw_a, PacketMetadata(input_port=0, output_port_bitmap=0b10))
    got, _ = run_sequential(rewrite_push_pop(p), sw_b, PacketMetadata(input_port=0, output_port_bitmap=0b10))
    assert got.memory == want.memory
    assert (got.header.sp, got.header.flags) == (want.header.sp, want.header.flags)
    assert sw_a.snapshot() == sw_b.snapshot()


def test_rewrite_push_pop_overflow():
    p = assemble(".hops 1\n.hop_size 1\nPUSH [Switch:SwitchID]\nPUSH [Switch:NumPorts]")
    try:
        rewrite_push_pop(p)
        assert False, "should have raised"
    except MemoryOverflow:
        pass


def test_link_utilization_window():
    sw = _switch()
    link = sw.links[1]
    link.window_tx_bytes = 31_250           # 25% от 100 Мбит/с за 10 мс
    update_link_utilization(link, 10_000_000, sw)
    assert abs(link.tx_util - 65535 // 4) <= 1
    assert link.window_tx_bytes == 0
    assert link.window_start_ns == 10_000_000
    update_link_utilization(link, 20_000_000, sw)
    assert link.tx_util == 0
