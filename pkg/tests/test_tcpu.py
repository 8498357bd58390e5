from hypothesis import HealthCheck, assume, given, settings, strategies as st

from app.switch.state import PacketMetadata, SwitchState
from app.switch.tcpu import SkipReason, Tcpu, run_sequential, run_staged, stage_orders
from app.tpp.analyzer import analyze
from app.tpp.assembler import assemble
from app.tpp.memory_map import resolve_address
from app.tpp.models import Instruction, Opcode, TppFlags, TppProgram

APP0 = resolve_address("[Link:AppSpecific_0]").raw
APP1 = resolve_address("[Link:AppSpecific_1]").raw


def _switch(switch_id: int = 7) -> SwitchState:
    sw = SwitchState(switch_id)
    sw.add_link(1, 100_000_000)
    sw.add_link(2, 100_000_000)
    return sw


def _meta() -> PacketMetadata:
    # выход через порт 1
    return PacketMetadata(input_port=0, output_port_bitmap=0b10, packet_length=100)


def test_push_collects_per_hop_values():
    sw = _switch()
    sw.links[1].queues[0].occupancy_bytes = 640
    p = assemble(".hops 2\nPUSH [Switch:SwitchID]\nPUSH [PacketMetadata:OutputPort]\nPUSH [Queue:QueueOccupancy]")
    out, trace = run_sequential(p, sw, _meta())
    assert out.hop_words(0) == [7, 1, 10]
    assert out.header.sp == 6
    assert out.header.flags == 0
    assert [r.disposition() for r in trace.records] == ["ok", "ok", "ok"]


def test_cstore_succeeds_when_version_matches():
    sw = _switch()
    sw.links[1].app_specific_0 = 5
    p = TppProgram.create([Instruction(Opcode.CSTORE, APP0, 0, 1), Instruction(Opcode.STORE, APP1, 2)],
                          3, 1, {0: [5, 6, 900]})
    out, trace = run_sequential(p, sw, _meta())
    assert sw.links[1].app_specific_0 == 6
    assert sw.links[1].app_specific_1 == 900
    # успех: в pre-слоте новое значение V+1
    assert out.hop_words(0)[0] == 6
    assert trace.records[0].succeeded


def test_cstore_miss_suppresses_later_instructions():
    sw = _switch()
    sw.links[1].app_specific_0 = 9
    p = TppProgram.create([Instruction(Opcode.CSTORE, APP0, 0, 1), Instruction(Opcode.STORE, APP1, 2)],
                          3, 1, {0: [5, 6, 900]})
    out, trace = run_sequential(p, sw, _meta())
    assert sw.links[1].app_specific_0 == 9
    assert sw.links[1].app_specific_1 == 0
    assert out.hop_words(0)[0] == 9
    assert not trace.records[0].succeeded
    assert trace.skipped(SkipReason.COND_FAILED) == [1]
    # промах CSTORE не ошибка
    assert not out.header.has(TppFlags.ERROR)


def test_cexec_gates_on_switch_id():
    source = """
        .hops 1
        CEXEC [Switch:SwitchID], [Packet:Hop[0]]
        LOAD [Link:QueueSize], [Packet:Hop[4]]
        PacketMemory:
            Hop1: 0, 0xffff, 0, {sid}
    """
    sw = _switch(7)
    sw.links[1].queues[0].occupancy_bytes = 128
    out, trace = run_sequential(assemble(source.format(sid=7)), sw, _meta())
    assert trace.records[0].succeeded
    assert out.hop_words(0)[4] == 2

    out, trace = run_sequential(assemble(source.format(sid=8)), sw, _meta())
    assert not trace.records[0].succeeded
    assert trace.skipped(SkipReason.COND_FAILED) == [1]
    assert out.hop_words(0)[4] == 0


def test_nonexistent_memory_skips_one_instruction_and_sets_error():
    p = assemble("LOAD [0x0fff], [Packet:Hop[0]]\nLOAD [Switch:SwitchID], [Packet:Hop[1]]")
    out, trace = run_sequential(p, _switch(), _meta())
    assert out.header.has(TppFlags.ERROR)
    assert trace.skipped(SkipReason.NONEXISTENT_MEMORY) == [0]
    assert out.hop_words(0) == [0, 7]


def test_store_to_read_only_word_is_an_error():
    p = TppProgram.create([Instruction(Opcode.STORE, 0x0000, 0)], 1, 1, {0: [99]})
    sw = _switch()
    out, _ = run_sequential(p, sw, _meta())
    assert out.header.has(TppFlags.ERROR)


def test_missing_port_is_nonexistent():
    meta = PacketMetadata(output_port_bitmap=0)
    p = assemble("PUSH [Link:QueueSize]\nPUSH [Switch:SwitchID]")
    out, trace = run_sequential(p, _switch(), meta)
    assert out.header.has(TppFlags.ERROR)
    assert trace.skipped(SkipReason.NONEXISTENT_MEMORY) == [0]


def test_writes_disabled():
    sw = _switch()
    sw.links[1].app_specific_0 = 5
    store_first = TppProgram.create([Instruction(Opcode.STORE, APP1, 2), Instruction(Opcode.LOAD, 0, 1)],
                                    3, 1, {0: [5, 6, 900]})
    out, trace = run_sequential(store_first, sw, _meta(), write_enabled=False)
    assert out.header.has(TppFlags.WRITE_SKIPPED)
    assert trace.skipped(SkipReason.WRITE_DISABLED) == [0]
    assert sw.links[1].app_specific_1 == 0
    assert out.hop_words(0)[1] == 7

    cstore_first = TppProgram.create([Instruction(Opcode.CSTORE, APP0, 0, 1), Instruction(Opcode.LOAD, 0, 2)],
                                     3, 1, {0: [5, 6, 0]})
    out, trace = run_sequential(cstore_first, sw, _meta(), write_enabled=False)
    assert sw.links[1].app_specific_0 == 5
    assert trace.skipped(SkipReason.COND_FAILED) == [1]


def test_hop_addressing_uses_hop_index():
    p = assemble(".hops 3\n.hop_size 2\nLOAD [Switch:SwitchID], [Packet:Hop[1]]").with_header(hop_index=2)
    out, _ = run_sequential(p, _switch(3), _meta())
    assert out.words() == [0, 0, 0, 0, 0, 3]


def test_push_beyond_hop_slot_is_skipped():
    p = assemble(".hops 1\n.hop_size 1\nPUSH [Switch:SwitchID]\nPUSH [Switch:NumPorts]")
    out, trace = run_sequential(p, _switch(), _meta())
    assert out.hop_words(0) == [7]
    assert out.header.sp == 2
    assert trace.skipped(SkipReason.NONEXISTENT_MEMORY) == [1]


def test_abandoned_instructions_are_not_reached():
    p = assemble("PUSH [Switch:SwitchID]\nPUSH [Link:QueueSize]")
    tcpu = Tcpu(p, _switch(), _meta())
    tcpu.execute_stages(1, 4)
    out, trace = tcpu.finish(dropped=True)
    assert [r.disposition() for r in trace.records] == ["ok", "not-reached"]
    assert out.hop_words(0)[0] == 7


def test_every_pipeline_order_matches_sequential():
    p = assemble("PUSH [Switch:SwitchID]\nPUSH [Link:QueueSize]\nPUSH [PacketMetadata:InputPort]\n"
                 "CSTORE [Link:AppSpecific_0], [Packet:Hop[3]], [Packet:Hop[4]]\n"
                 "PacketMemory:\n  Hop1: 0, 0, 0, 0, 1")
    expected, _ = run_sequential(p, _switch(), _meta())
    orders = list(stage_orders(p))
    assert orders
    for order in orders:
        got, _ = run_staged(p, _switch(), _meta(), order=order)
        assert got == expected, order


_READABLE = [resolve_address(m).raw for m in (
    "[Switch:SwitchID]", "[Switch:NumPorts]", "[Stage2:LookupPackets]", "[PacketMetadata:InputPort]",
    "[PacketMetadata:OutputPort]", "[Link:QueueSize]", "[Link:Capacity]", "[Queue:QueueCapacity]")] + [0x0FFF]

_read_insn = st.one_of(
    st.builds(lambda a: Instruction(Opcode.PUSH, a), st.sampled_from(_READABLE)),
    st.builds(lambda a, s: Instruction(Opcode.LOAD, a, s), st.sampled_from(_READABLE),
              st.integers(min_value=3, max_value=5)),
)


@settings(max_examples=1000, deadline=None,
          suppress_health_check=[HealthCheck.filter_too_much, HealthCheck.too_slow])
@given(st.lists(_read_insn, min_size=1, max_size=5), st.booleans())
def test_staged_execution_equals_sequential(insns, with_cstore):
    assume(sum(1 for i in insns if i.opcode == Opcode.PUSH) <= 3)
    if with_cstore:
        insns = insns[:4] + [Instruction(Opcode.CSTORE, APP0, 4, 5)]
    p = TppProgram.create(insns, 6, 2, {0: [0, 0, 0, 0, 0, 1]})
    assume(analyze(p).reorder_safe)
    sw_seq = _switch()
    seq, _ = run_sequential(p, sw_seq, _meta())
    for order in stage_orders(p):
        sw = _switch()
        staged, _ = run_staged(p, sw, _meta(), order=order)
        assert staged == seq, order
        assert sw.snapshot(writable_only=True) == sw_seq.snapshot(writable_only=True), order
