"""Библиотека исполнителя: надёжная доставка standalone TPP с повторами,
исполнение на одном коммутаторе (CEXEC по SwitchID), scatter-gather по
списку коммутаторов и разбиение TPP, не влезающего в бюджет, на части по
диапазонам хопов.

submit() не блокирует: результат приходит колбэком из цикла событий.
execute_* блокируют, прокручивая симулятор (sim.advance), поэтому их можно
звать только снаружи обработчиков событий.
"""
from __future__ import annotations
import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TYPE_CHECKING

from app.config import MTU, TPP_MAX_INSTRUCTIONS
from app.endhost.exceptions import EndhostError, Exhausted, Unsplittable
from app.endhost.records import ExecutedTppRecord
from app.endhost.shim import TppShim
from app.netsim.packet import Packet, standalone_headers
from app.tpp.codec import STANDALONE_OVERHEAD
from app.tpp.exceptions import TooManyInstructions
from app.tpp.memory_map import resolve_address
from app.tpp.models import BLOCK_WORDS, MAX_NIBBLE_OFFSET, Instruction, Opcode, TppFlags, TppHeader, TppProgram

if TYPE_CHECKING:
    from app.netsim.simulator import Simulator
    from app.netsim.topology import Topology

log = logging.getLogger("endhost.executor")

DEFAULT_TIMEOUT_NS = 5_000_000
DEFAULT_MAX_RETRIES = 3
GATE_WORDS = BLOCK_WORDS
SWITCH_ID = resolve_address("Switch:SwitchID").raw
HOP_INDEX = resolve_address("PacketMetadata:TppHopIndex").raw


@dataclass
class Probe:
    probe_id: int
    program: TppProgram
    dest: str
    dst_ip: int
    max_retries: int
    timeout_ns: int
    on_done: Optional[Callable[["Probe"], None]] = None
    vlan: int = 0
    transmissions: int = 0
    record: Optional[ExecutedTppRecord] = None
    error: Optional[EndhostError] = None
    gate_hops: tuple[int, ...] = ()

    @property
    def done(self) -> bool:
        return self.record is not None or self.error is not None


@dataclass(frozen=True)
class GatherResult:
    switch_id: int
    record: Optional[ExecutedTppRecord] = None
    error: Optional[EndhostError] = None
    transmissions: int = 0
    gate_hops: tuple[int, ...] = ()

    @property
    def ok(self) -> bool:
        return self.record is not None

    @property
    def payload(self) -> dict[int, tuple[int, ...]]:
        return payload_hops(self.record, self.gate_hops) if self.record is not None else {}


@dataclass
class TppExecutor:
    sim: "Simulator"
    shim: TppShim
    session_id: int = 0
    timeout_ns: int = DEFAULT_TIMEOUT_NS
    max_retries: int = DEFAULT_MAX_RETRIES
    _ids: itertools.count = field(default_factory=lambda: itertools.count(1), repr=False)

    @property
    def host(self) -> str:
        return self.shim.host

    def _dst_ip(self, dest: str | int) -> tuple[str, int]:
        topo = self.sim.topo
        if isinstance(dest, int):
            name = topo.switch_by_id(dest)
            if name is None:
                raise ValueError(f"no switch with id {dest}")
            return name, topo.switch_ip(name)
        if topo.is_host(dest):
            return dest, topo.host_ip(dest)
        return dest, topo.switch_ip(dest)

    # --- надёжная доставка -------------------------------------------------------

    def submit(self, tpp: TppProgram, dest: str | int, max_retries: Optional[int] = None,
               timeout_ns: Optional[int] = None, on_done: Optional[Callable[[Probe], None]] = None,
               vlan: int = 0) -> Probe:
        """Повторы, пока не вернётся эхо: всего до 1 + max_retries передач.
        vlan выбирает путь в multipath-группах."""
        name, dst_ip = self._dst_ip(dest)
        program = tpp.with_flags(TppFlags.STANDALONE).with_header(session_id=self.session_id or tpp.header.session_id)
        probe = Probe(next(self._ids), program, name, dst_ip,
                      self.max_retries if max_retries is None else max_retries,
                      self.timeout_ns if timeout_ns is None else timeout_ns, on_done, vlan)
        self._transmit(probe)
        return probe

    def _transmit(self, probe: Probe) -> None:
        probe.transmissions += 1
        headers = standalone_headers(self.sim.topo.host_ip(self.host), probe.dst_ip, probe.vlan)
        pkt = Packet(self.sim.next_uid(), headers, STANDALONE_OVERHEAD, probe.program, flow=f"probe:{self.host}", seq=probe.transmissions,
                     src=self.host, dst=probe.dest, notes={"probe": probe.probe_id})
        self.shim.expect(probe.probe_id, lambda rec: self._complete(probe, rec))
        self.sim.inject(self.host, pkt)
        attempt = probe.transmissions
        self.sim.after(probe.timeout_ns, lambda: self._on_timeout(probe, attempt))

    def _complete(self, probe: Probe, record: ExecutedTppRecord) -> None:
        if probe.done:
            return
        probe.record = record
        if probe.on_done is not None:
            probe.on_done(probe)

    def _on_timeout(self, probe: Probe, attempt: int) -> None:
        if probe.done or attempt != probe.transmissions:
            return
        if probe.transmissions > probe.max_retries:
            self.shim.forget(probe.probe_id)
            probe.error = Exhausted(f"{self.host} -> {probe.dest}: no reply after {probe.transmissions} transmissions")
            log.info(f"[EXEC] {probe.error}")
            if probe.on_done is not None:
                probe.on_done(probe)
            return
        log.debug(f"[EXEC] {self.host} -> {probe.dest}: retry {probe.transmissions}")
        self._transmit(probe)

    def _wait(self, probes: Sequence[Probe]) -> None:
        horizon = self.sim.now + sum((p.max_retries + 2) * p.timeout_ns for p in probes)
        self.sim.advance(lambda: all(p.done for p in probes), horizon)

    def execute_reliable(self, tpp: TppProgram, dest: str | int, max_retries: Optional[int] = None,
                         timeout_ns: Optional[int] = None) -> ExecutedTppRecord:
        probe = self.submit(tpp, dest, max_retries, timeout_ns)
        self._wait([probe])
        if probe.record is None:
            raise probe.error or Exhausted(f"{self.host} -> {probe.dest}: no reply")
        return probe.record

    # --- исполнение на одном коммутаторе -------------------------------------------

    def execute_targeted(self, tpp: TppProgram, switch_id: int, dest: str | int | None = None,
                         max_retries: Optional[int] = None, timeout_ns: Optional[int] = None) -> ExecutedTppRecord:
        """По умолчанию проба адресована самому коммутатору и им же отражается."""
        probe = self.submit_targeted(tpp, switch_id, dest, max_retries, timeout_ns)
        self._wait([probe])
        if probe.record is None:
            raise probe.error or Exhausted(f"switch {switch_id}: no reply")
        return probe.record

    def submit_targeted(self, tpp: TppProgram, switch_id: int, dest: str | int | None = None,
                        max_retries: Optional[int] = None, timeout_ns: Optional[int] = None,
                        on_done: Optional[Callable[[Probe], None]] = None) -> Probe:
        target = dest if dest is not None else switch_id
        name, _ = self._dst_ip(target)
        one_way = self.sim.topo.switch_hops(self.host, name) or 1
        probe = self.submit(gate_program(tpp, switch_id, 2 * one_way + 1), target, max_retries, timeout_ns, on_done)
        probe.gate_hops = self.gate_hops(switch_id, dest)
        return probe

    def gate_hops(self, switch_id: int, dest: str | int | None = None) -> tuple[int, ...]:
        """Номера хопов, где откроются ворота: позиция коммутатора на кратчайшем
        пути туда и, если эхо возвращается через него, на пути обратно."""
        topo = self.sim.topo
        target, _ = self._dst_ip(switch_id)
        name, _ = self._dst_ip(dest if dest is not None else switch_id)
        to_target = _links(topo, self.host, target)
        to_dest = _links(topo, self.host, name)
        back = _links(topo, name, target)
        if to_target is None or to_dest is None or back is None or to_target + back != to_dest:
            return ()
        if name == target:
            return (to_target - 1,)
        # эхо начинает нумерацию обратного пути с числа коммутаторов на прямом
        forward = topo.switch_hops(self.host, name) or 0
        return (to_target - 1, forward + back - 1)

    def scatter_gather(self, tpp: TppProgram, switches: Sequence[int], max_retries: Optional[int] = None,
                       timeout_ns: Optional[int] = None) -> list[GatherResult]:
        """Параллельно по одному целевому исполнению на коммутатор; отказ одного
        не валит остальные."""
        probes = [self.submit_targeted(tpp, sid, None, max_retries, timeout_ns) for sid in switches]
        if probes:
            self._wait(probes)
        return [GatherResult(sid, p.record, p.error if p.record is None else None, p.transmissions, p.gate_hops)
                for sid, p in zip(switches, probes)]


def _links(topo: "Topology", src: str, dst: str) -> Optional[int]:
    """Число линков между узлами по кратчайшему пути."""
    n = topo.switch_hops(src, dst)
    if n is None:
        return None
    return n + 1 if topo.is_host(dst) else n


# --- построение программ ---------------------------------------------------------

def _gate_block(mask: int, value: int) -> list[int]:
    return [mask >> 16 & 0xFFFF, mask & 0xFFFF, value >> 16 & 0xFFFF, value & 0xFFFF]


def gate_program(tpp: TppProgram, switch_id: int, hops: int) -> TppProgram:
    """CEXEC [Switch:SwitchID] перед полезной нагрузкой. PUSH/POP
    превращаются в LOAD/STORE с явными слотами после блока mask/value, так что
    хопы, где ворота закрыты, не двигают стек."""
    payload = tpp.instructions
    if len(payload) + 1 > TPP_MAX_INSTRUCTIONS:
        raise TooManyInstructions(f"targeted payload has {len(payload)} instructions, "
                                  f"at most {TPP_MAX_INSTRUCTIONS - 1} fit next to CEXEC")
    shifted: list[Instruction] = []
    stack = 0
    for insn in payload:
        op = insn.opcode
        if op in (Opcode.PUSH, Opcode.POP):
            if op == Opcode.POP:
                stack -= 1
            slot = GATE_WORDS + max(stack, 0)
            shifted.append(Instruction(Opcode.LOAD if op == Opcode.PUSH else Opcode.STORE, insn.address, slot))
            if op == Opcode.PUSH:
                stack += 1
        elif op == Opcode.CSTORE:
            pre, post = insn.slot + GATE_WORDS, insn.post_slot + GATE_WORDS
            if max(pre, post) > MAX_NIBBLE_OFFSET:
                raise TooManyInstructions("CSTORE offsets do not fit next to the gate block")
            shifted.append(Instruction(op, insn.address, pre, post))
        else:
            shifted.append(Instruction(op, insn.address, insn.slot + GATE_WORDS))
    own = tpp.header.hop_size_words or max(stack, 0)
    used = max([own, *(_top_slot(i) - GATE_WORDS for i in shifted)], default=0)
    hop_size = GATE_WORDS + used
    initial = tpp.hop_words(0) if tpp.header.hop_size_words else []
    block = _gate_block(0xFFFF, switch_id & 0xFFFF) + list(initial) + [0] * (used - len(initial))
    program = TppProgram.create([Instruction(Opcode.CEXEC, SWITCH_ID, 0), *shifted], hop_size, hops,
                                {h: block for h in range(hops)}, session_id=tpp.header.session_id,
                                standalone=True)
    if program.size > MTU - STANDALONE_OVERHEAD:
        raise TooManyInstructions(f"targeted TPP of {program.size} bytes exceeds the MTU")
    return program


def _top_slot(insn: Instruction) -> int:
    if insn.opcode == Opcode.CSTORE:
        return max(insn.slot, insn.post_slot) + 1
    return insn.slot + 1


def payload_hops(record: ExecutedTppRecord, hops: Sequence[int]) -> dict[int, tuple[int, ...]]:
    """Слоты нагрузки на хопах, где открылись ворота (см. TppExecutor.gate_hops).
    Значения не проверяются: нулевое чтение тоже результат."""
    return {hop: tuple(record.slots[hop][GATE_WORDS:]) for hop in hops if 0 <= hop < len(record.slots)}


# --- разбиение по хопам --------------------------------------------------------------

def _stack_payload(tpp: TppProgram) -> list[Instruction]:
    """Нагрузка как последовательность PUSH: разбиению подлежат только
    программы, пишущие в хоп подряд с нулевого слова."""
    out = []
    for k, insn in enumerate(tpp.instructions):
        if insn.opcode == Opcode.PUSH or (insn.opcode == Opcode.LOAD and insn.slot == k):
            out.append(Instruction(Opcode.PUSH, insn.address))
        else:
            raise Unsplittable(f"instruction {k} ({insn.opcode.name}) does not fill hop memory in order")
    return out


def _piece_size(n_insns: int, hops: int, words_per_hop: int) -> int:
    return 12 + 4 * (n_insns + 1) + 2 * (GATE_WORDS + hops * words_per_hop)


def split_large(tpp: TppProgram, max_bytes: int, hops: Optional[int] = None) -> list[TppProgram]:
    """Части с CEXEC по номеру хопа (выровненные блоки степени двойки) и
    общим стеком: каждая часть собирает данные только своего диапазона хопов."""
    hops = tpp.hops_allocated if hops is None else hops
    if tpp.size <= max_bytes and hops <= tpp.hops_allocated:
        return [tpp]
    if len(tpp.instructions) + 1 > TPP_MAX_INSTRUCTIONS:
        raise Unsplittable(f"{len(tpp.instructions)} instructions leave no room for the hop gate")
    payload = _stack_payload(tpp)
    per_hop = len(payload)
    if _piece_size(len(payload), 1, per_hop) > max_bytes:
        raise Unsplittable(f"a single hop needs {_piece_size(len(payload), 1, per_hop)} bytes > {max_bytes}")
    cap = 1
    while _piece_size(len(payload), cap * 2, per_hop) <= max_bytes:
        cap *= 2
    pieces = []
    start = 0
    while start < hops:
        size = cap
        while start % size or start + size > hops and size > 1:
            size //= 2
        mask = 0xFF & ~(size - 1)
        block = _gate_block(mask, start)
        mem_len = 2 * (GATE_WORDS + size * per_hop)
        header = TppHeader(flags=int(TppFlags.STANDALONE) & tpp.header.flags, insn_count=len(payload) + 1,
                           hop_size_words=0, sp=2 * GATE_WORDS, mem_len=mem_len, session_id=tpp.header.session_id)
        memory = b"".join(w.to_bytes(2, "big") for w in block) + bytes(mem_len - 2 * GATE_WORDS)
        pieces.append(TppProgram(header, (Instruction(Opcode.CEXEC, HOP_INDEX, 0), *payload), memory))
        start += size
    log.debug(f"[EXEC] split {tpp.size}-byte TPP over {hops} hops into {len(pieces)} pieces")
    return pieces


def piece_first_hop(piece: TppProgram) -> int:
    words = piece.words()
    return words[2] << 16 | words[3]


def reassemble(pieces: Sequence[TppProgram]) -> dict[int, tuple[int, ...]]:
    """Исполненные части -> {хоп: слова}, как у исходного TPP."""
    out: dict[int, tuple[int, ...]] = {}
    for piece in pieces:
        per_hop = len(piece.instructions) - 1
        words = piece.words()[GATE_WORDS:piece.header.sp // 2]
        first = piece_first_hop(piece)
        for k in range(len(words) // per_hop):
            out[first + k] = tuple(words[k * per_hop:(k + 1) * per_hop])
    return dict(sorted(out.items()))
