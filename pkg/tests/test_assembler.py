from app.config import TPP_DEFAULT_HOPS
from app.tpp.assembler import assemble, disassemble, format_instruction
from app.tpp.codec import encode
from app.tpp.exceptions import (
    AssemblyError, BadOperandArity, MemoryTooLarge, NoInstructions, TooManyInstructions, UnknownMnemonic,
)
from app.tpp.models import Instruction, Opcode, TppFlags


def _raises(source: str, exc: type, **kw) -> None:
    try:
        assemble(source, **kw)
        assert False, "should have raised"
    except exc:
        pass


def test_push_program_defaults():
    p = assemble("""
        PUSH [Switch:SwitchID]      # id
        PUSH [Link:QueueSize]
    """)
    assert [i.opcode for i in p.instructions] == [Opcode.PUSH, Opcode.PUSH]
    assert p.header.hop_size_words == 2
    assert p.hops_allocated == TPP_DEFAULT_HOPS
    assert p.header.sp == 0
    assert p.header.mem_len == TPP_DEFAULT_HOPS * 2 * 2


def test_operands_and_directives():
    p = assemble("""
        .hops 3
        .session 0x42
        .standalone
        LOAD [Link:TX-Utilization], [Packet:Hop[1]]
        CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]
        STORE [0xa006], [Packet:Hop[2]]
        CEXEC [Switch:SwitchID], [Packet:Hop[0]]
    """)
    load, cstore, store, cexec = p.instructions
    assert load == Instruction(Opcode.LOAD, 0xA002, 1)
    assert cstore == Instruction(Opcode.CSTORE, 0xA005, 0, 1)
    assert store.address == 0xA006 and store.slot == 2
    assert cexec.slot == 0
    # CEXEC занимает блок из 4 слов
    assert p.header.hop_size_words == 4
    assert p.header.session_id == 0x42
    assert p.header.has(TppFlags.STANDALONE)


def test_line_continuation():
    p = assemble("CSTORE [Link:AppSpecific_0], \\\n  [Packet:Hop[0]], [Packet:Hop[1]]")
    assert p.instructions[0].post_slot == 1


def test_initial_packet_memory():
    p = assemble("""
        .hops 4
        .hop_size 3
        LOAD [Switch:SwitchID], [Packet:Hop[0]]
        PacketMemory:
            Hop1: 1, 2, 3
            Hop3: 0xffff
            Word10: 7
    """)
    assert p.hop_words(0) == [1, 2, 3]
    assert p.hop_words(1) == [0, 0, 0]
    assert p.hop_words(2) == [0xFFFF, 0, 0]
    assert p.words()[10] == 7


def test_error_cases():
    _raises("", NoInstructions)
    _raises("# just a comment\n.hops 3", NoInstructions)
    _raises("\n".join(["PUSH [Switch:SwitchID]"] * 6), TooManyInstructions)
    _raises("JUMP [Switch:SwitchID]", UnknownMnemonic)
    _raises("PUSH [Switch:NoSuchField]", UnknownMnemonic)
    _raises("LOAD [Switch:SwitchID]", BadOperandArity)
    _raises("PUSH [Switch:SwitchID], [Packet:Hop[0]]", BadOperandArity)
    _raises("LOAD [Packet:Hop[0]], [Packet:Hop[1]]", BadOperandArity)
    _raises("CSTORE [Link:AppSpecific_0], [Packet:Hop[16]], [Packet:Hop[1]]", BadOperandArity)
    _raises(".bogus 1\nPUSH [Switch:SwitchID]", AssemblyError)
    _raises(".hops 2\n.hop_size 1\nPUSH [Switch:SwitchID]\nPacketMemory:\n Hop1: 1, 2", AssemblyError)


def test_mtu_budget():
    _raises(".hops 200\nPUSH [Switch:SwitchID]\nPUSH [Link:QueueSize]", MemoryTooLarge, mtu=512)
    p = assemble(".hops 200\nPUSH [Switch:SwitchID]\nPUSH [Link:QueueSize]", mtu=9000)
    assert p.size == 12 + 8 + 200 * 4


def test_disassemble_reassembles_to_same_bytes():
    p = assemble("""
        .hops 2
        .session 5
        PUSH [Switch:SwitchID]
        LOAD [0x0fff], [Packet:Hop[1]]
        CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]
        PacketMemory:
            Hop2: 9, 8
    """)
    text = disassemble(p)
    assert "[0x0fff]" in text
    assert "Hop2: 9, 8" in text
    assert encode(assemble(text)) == encode(p)


def test_format_instruction():
    assert format_instruction(Instruction(Opcode.PUSH, 0)) == "PUSH [Switch:SwitchID]"
    assert (format_instruction(Instruction(Opcode.CSTORE, 0xA005, 0, 1))
            == "CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]")
