import json
from pathlib import Path

from app.apps.microburst import microburst_program
from app.endhost.control_plane import TppControlPlane
from app.endhost.exceptions import Exhausted, Unsplittable
from app.endhost.executor import (
    TppExecutor, gate_program, payload_hops, piece_first_hop, reassemble, split_large,
)
from app.endhost.shim import install_shims
from app.netsim.simulator import Simulator
from app.netsim.topology import build_topology
from app.tpp.assembler import assemble
from app.tpp.exceptions import TooManyInstructions
from app.tpp.models import Opcode, TppFlags

TOPOLOGY = Path(__file__).resolve().parent.parent / "topologies" / "dumbbell6.json"
MS = 1_000_000


def _executor(blackhole: str | None = None) -> tuple[Simulator, TppExecutor]:
    spec = json.loads(TOPOLOGY.read_text(encoding="utf-8"))
    for sw in spec["switches"]:
        sw["blackhole"] = sw["name"] == blackhole
    sim = Simulator(build_topology(spec), 1, util_interval_ns=0, queue_sample_ns=0)
    shims = install_shims(sim, TppControlPlane())
    return sim, TppExecutor(sim, shims["h0"], session_id=9, timeout_ns=1 * MS, max_retries=2)


def test_reliable_execution_to_host():
    _, ex = _executor()
    rec = ex.execute_reliable(microburst_program(5), "h3")
    assert rec.echoed
    assert rec.session_id == 9
    assert rec.forward_hops == 2
    assert [hop[0] for hop in rec.slots] == [1, 2, 2, 1]


def test_retries_then_exhausted():
    sim, ex = _executor(blackhole="s1")
    probe = ex.submit(microburst_program(5), "h3")
    sim.advance(lambda: probe.done, 50 * MS)
    assert probe.record is None
    assert isinstance(probe.error, Exhausted)
    assert probe.transmissions == 3
    try:
        ex.execute_reliable(microburst_program(5), "h3", max_retries=0)
        assert False, "should have raised"
    except Exhausted:
        pass


def test_targeted_execution_opens_gate_once():
    _, ex = _executor()
    rec = ex.execute_targeted(assemble("PUSH [Switch:SwitchID]\nPUSH [Switch:NumPorts]"), 2)
    opened = payload_hops(rec, ex.gate_hops(2))
    assert list(opened.values()) == [(2, 4)]
    assert rec.program.instructions[0].opcode == Opcode.CEXEC


def test_targeted_zero_read_still_reported():
    _, ex = _executor()
    rec = ex.execute_targeted(assemble("PUSH [Link:AppSpecific_0]"), 2)
    assert ex.gate_hops(2) == (1,)
    assert payload_hops(rec, ex.gate_hops(2)) == {1: (0,)}


def test_gate_hops_on_echo_through_host():
    _, ex = _executor()
    assert ex.gate_hops(2, "h3") == (1, 2)
    assert ex.gate_hops(1, "h3") == (0, 3)
    assert ex.gate_hops(2, "h1") == ()
    rec = ex.execute_targeted(assemble("PUSH [Switch:SwitchID]"), 2, "h3")
    assert payload_hops(rec, ex.gate_hops(2, "h3")) == {1: (2,), 2: (2,)}


def test_scatter_gather_reports_each_switch():
    _, ex = _executor(blackhole="s1")
    results = ex.scatter_gather(assemble("PUSH [Switch:SwitchID]"), [1, 2], max_retries=1)
    by_id = {r.switch_id: r for r in results}
    assert by_id[1].ok
    assert by_id[1].gate_hops == (0,)
    assert list(by_id[1].payload.values()) == [(1,)]
    assert not by_id[2].ok
    assert isinstance(by_id[2].error, Exhausted)
    assert by_id[2].transmissions == 2


def test_gate_program_layout():
    gated = gate_program(assemble("PUSH [Switch:SwitchID]\nPUSH [Link:QueueSize]"), 5, 3)
    assert [i.opcode for i in gated.instructions] == [Opcode.CEXEC, Opcode.LOAD, Opcode.LOAD]
    assert [i.slot for i in gated.instructions[1:]] == [4, 5]
    assert gated.header.has(TppFlags.STANDALONE)
    assert gated.hops_allocated == 3
    assert gated.hop_words(2)[:4] == [0, 0xFFFF, 0, 5]
    try:
        gate_program(assemble("\n".join(["PUSH [Switch:SwitchID]"] * 5)), 5, 3)
        assert False, "should have raised"
    except TooManyInstructions:
        pass


def test_split_large_aligned_pieces():
    pieces = split_large(microburst_program(5), max_bytes=50, hops=8)
    assert [piece_first_hop(p) for p in pieces] == [0, 2, 4, 6]
    assert all(p.size <= 50 for p in pieces)
    assert all(p.instructions[0].opcode == Opcode.CEXEC for p in pieces)
    assert split_large(microburst_program(5), max_bytes=100) == [microburst_program(5)]


def test_split_large_refuses():
    for program, max_bytes in ((microburst_program(5), 40),
                               (assemble("CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]"), 20),
                               (assemble("\n".join(["PUSH [Switch:SwitchID]"] * 5)), 30)):
        try:
            split_large(program, max_bytes, hops=8)
            assert False, "should have raised"
        except Unsplittable:
            pass


def test_pieces_reassemble_to_full_path():
    _, ex = _executor()
    pieces = split_large(microburst_program(5), max_bytes=48, hops=4)
    assert len(pieces) == 2
    executed = [ex.execute_reliable(p, "h3").program for p in pieces]
    hops = reassemble(executed)
    assert sorted(hops) == [0, 1, 2, 3]
    assert [hops[k][:2] for k in range(4)] == [(1, 3), (2, 0), (2, 3), (1, 0)]
