"""TCPU: исполнение TPP на одном коммутаторе.

Две модели исполнения:

* run_sequential: эталонный интерпретатор: инструкции строго в порядке
  программы, настоящий стек PUSH/POP.
* Tcpu / run_staged: распределённый TCPU: PUSH/POP заранее превращаются
  в LOAD/STORE с назначенными слотами (assign_stack_slots), а инструкции
  исполняются в порядке стадий конвейера (stage, index).

Правила отказа общие. Обращение к несуществующему слову (или запись в
слово только для чтения) пропускает одну инструкцию и ставит флаг ERROR.
Неуспешная условная инструкция (промах CSTORE, ложный CEXEC, условная
с несуществующим операндом, CSTORE при запрещённой записи) подавляет все
инструкции с бОльшим индексом на этом хопе.
"""
from __future__ import annotations
import itertools
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Iterator, Optional, Sequence

from app.switch.state import PacketMetadata, SwitchState
from app.tpp.memory_map import WORD_MASK, Address, lookup
from app.tpp.models import BLOCK_WORDS, Instruction, Opcode, TppFlags, TppProgram

log = logging.getLogger("switch.tcpu")


class SkipReason(str, Enum):
    NONEXISTENT_MEMORY = "NonexistentMemory"
    COND_FAILED = "CondFailed"
    WRITE_DISABLED = "WriteDisabled"


@dataclass(frozen=True)
class TraceRecord:
    index: int
    opcode: Opcode
    stage: int
    address: int
    resolved: Optional[int] = None      # абсолютный адрес слова коммутатора
    slot: Optional[int] = None          # байтовое смещение в памяти пакета
    read_value: Optional[int] = None
    written_value: Optional[int] = None
    skipped: Optional[SkipReason] = None
    succeeded: bool = True
    executed: bool = True               # False: пакет отброшен до egress-стадии

    def disposition(self) -> str:
        if not self.executed:
            return "not-reached"
        if self.skipped is not None:
            return f"skipped:{self.skipped.value}"
        return "ok" if self.succeeded else "failed"


@dataclass(frozen=True)
class ExecutionTrace:
    switch_id: int
    hop: int
    records: tuple[TraceRecord, ...]
    flags: int = 0
    sp_before: int = 0
    sp_after: int = 0
    output_port: Optional[int] = None
    output_queue: Optional[int] = None
    dropped: bool = False

    def to_log_lines(self) -> list[str]:
        lines = []
        for r in self.records:
            addr = lookup(r.address)
            values = []
            if r.read_value is not None:
                values.append(f"read={r.read_value}")
            if r.written_value is not None:
                values.append(f"wrote={r.written_value}")
            slot = "-" if r.slot is None else str(r.slot)
            lines.append(f"hop={self.hop} sw={self.switch_id} stage={r.stage} #{r.index} {r.opcode.name} "
                         f"{addr} slot={slot} {' '.join(values) or '-'} {r.disposition()}")
        return lines

    def skipped(self, reason: SkipReason) -> list[int]:
        return [r.index for r in self.records if r.skipped == reason]


# --- слоты стека ---------------------------------------------------------------

@dataclass(frozen=True)
class StackPlan:
    """slots[i]: hop-относительный слот PUSH/POP (None: переполнение или не
    стековая инструкция); sp_after[i]: sp после инструкции i."""
    slots: tuple[Optional[int], ...]
    sp_after: tuple[int, ...]


def _push_slot(sp: int, base: int, hop_size: int, mem_len: int) -> Optional[int]:
    if sp % 2 or sp + 2 > mem_len:
        return None
    if hop_size:
        if not base <= sp or sp + 2 > base + 2 * hop_size:
            return None
        return (sp - base) // 2
    slot = sp // 2
    return slot if slot <= 0x7F else None


def assign_stack_slots(p: TppProgram) -> StackPlan:
    """Назначает PUSH/POP слоты в порядке программы, начиная с текущего sp.
    Переполненный PUSH/POP не двигает sp (как в эталонном интерпретаторе)."""
    h = p.header
    base = h.hop_index * h.hop_size_words * 2
    sp = h.sp
    slots: list[Optional[int]] = []
    after: list[int] = []
    for insn in p.instructions:
        slot = None
        if insn.opcode == Opcode.PUSH:
            slot = _push_slot(sp, base, h.hop_size_words, h.mem_len)
            if slot is not None:
                sp += 2
        elif insn.opcode == Opcode.POP:
            slot = _push_slot(sp - 2, base, h.hop_size_words, h.mem_len) if sp >= 2 else None
            if slot is not None:
                sp -= 2
        slots.append(slot)
        after.append(sp)
    return StackPlan(tuple(slots), tuple(after))


# --- контекст исполнения -------------------------------------------------------

@dataclass
class ExecContext:
    sw: SwitchState
    meta: PacketMetadata
    memory: bytearray
    hop_index: int
    hop_size: int
    write_enabled: bool = True
    session_id: int = 0
    flags: int = 0
    records: dict[int, TraceRecord] = field(default_factory=dict)

    @property
    def base(self) -> int:
        return self.hop_index * self.hop_size * 2

    def slot_offset(self, slot: int, words: int = 1) -> Optional[int]:
        """Hop-адресация: base·hop_size + offset. None, если слот вне хопа
        или за mem_len."""
        if self.hop_size and slot + words > self.hop_size:
            return None
        off = self.base + 2 * slot
        if off + 2 * words > len(self.memory):
            return None
        return off

    def get(self, off: int) -> int:
        return int.from_bytes(self.memory[off:off + 2], "big")

    def put(self, off: int, value: int) -> None:
        self.memory[off:off + 2] = (value & WORD_MASK).to_bytes(2, "big")

    def read(self, addr: Address) -> Optional[int]:
        return self.sw.read_word(addr, self.meta)

    def write(self, addr: Address, value: int) -> bool:
        return self.sw.write_word(addr, value, self.meta, source=f"tpp:{self.session_id}")

    def resolved(self, addr: Address) -> Optional[int]:
        return self.sw.absolute(addr, self.meta)

    def skip(self, index: int, insn: Instruction, reason: SkipReason, **kw) -> TraceRecord:
        if reason == SkipReason.NONEXISTENT_MEMORY:
            self.flags |= TppFlags.ERROR
        elif reason == SkipReason.WRITE_DISABLED:
            self.flags |= TppFlags.WRITE_SKIPPED
        rec = TraceRecord(index, insn.opcode, lookup(insn.address).stage, insn.address,
                          skipped=reason, succeeded=False, **kw)
        self.records[index] = rec
        return rec

    def done(self, index: int, insn: Instruction, **kw) -> TraceRecord:
        rec = TraceRecord(index, insn.opcode, lookup(insn.address).stage, insn.address, **kw)
        self.records[index] = rec
        return rec


def _exec_load(ctx: ExecContext, insn: Instruction, index: int, slot: int) -> TraceRecord:
    addr = lookup(insn.address)
    value = ctx.read(addr)
    if value is None:
        return ctx.skip(index, insn, SkipReason.NONEXISTENT_MEMORY)
    off = ctx.slot_offset(slot)
    if off is None:
        return ctx.skip(index, insn, SkipReason.NONEXISTENT_MEMORY, read_value=value, resolved=ctx.resolved(addr))
    ctx.put(off, value)
    return ctx.done(index, insn, resolved=ctx.resolved(addr), slot=off, read_value=value, written_value=value)


def _exec_store(ctx: ExecContext, insn: Instruction, index: int, slot: int) -> TraceRecord:
    addr = lookup(insn.address)
    off = ctx.slot_offset(slot)
    if not addr.writable or ctx.read(addr) is None or off is None:
        return ctx.skip(index, insn, SkipReason.NONEXISTENT_MEMORY)
    if not ctx.write_enabled:
        return ctx.skip(index, insn, SkipReason.WRITE_DISABLED, slot=off)
    value = ctx.get(off)
    ctx.write(addr, value)
    return ctx.done(index, insn, resolved=ctx.resolved(addr), slot=off, read_value=value, written_value=value)


def exec_cstore(x: Address, pre_slot: int, post_slot: int, ctx: ExecContext, index: int = 0) -> bool:
    """if X == hop[pre]: X = hop[post]; затем hop[pre] = X. True при успехе."""
    insn = Instruction(Opcode.CSTORE, x.raw, pre_slot, post_slot)
    pre_off, post_off = ctx.slot_offset(pre_slot), ctx.slot_offset(post_slot)
    current = ctx.read(x)
    if not x.writable or current is None or pre_off is None or post_off is None:
        ctx.skip(index, insn, SkipReason.NONEXISTENT_MEMORY)
        return False
    if not ctx.write_enabled:
        ctx.skip(index, insn, SkipReason.WRITE_DISABLED, slot=pre_off)
        return False
    expected, new = ctx.get(pre_off), ctx.get(post_off)
    succeeded = current == expected
    if succeeded:
        ctx.write(x, new)
        current = new
    ctx.put(pre_off, current)
    ctx.done(index, insn, resolved=ctx.resolved(x), slot=pre_off, read_value=expected,
             written_value=new if succeeded else None, succeeded=succeeded)
    return succeeded


def exec_cexec(x: Address, block_slot: int, ctx: ExecContext, index: int = 0) -> bool:
    """(switch_value & mask) == value; mask и value по 32 бита из блока хопа."""
    insn = Instruction(Opcode.CEXEC, x.raw, block_slot)
    off = ctx.slot_offset(block_slot, BLOCK_WORDS)
    switch_value = ctx.read(x)
    if switch_value is None or off is None:
        ctx.skip(index, insn, SkipReason.NONEXISTENT_MEMORY)
        return False
    mask = ctx.get(off) << 16 | ctx.get(off + 2)
    value = ctx.get(off + 4) << 16 | ctx.get(off + 6)
    gate = (switch_value & mask) == value
    ctx.done(index, insn, resolved=ctx.resolved(x), slot=off, read_value=switch_value, succeeded=gate)
    return gate


def _exec_plain(ctx: ExecContext, insn: Instruction, index: int, slot: Optional[int]) -> bool:
    """Исполняет одну инструкцию; slot: назначенный слот для PUSH/POP.
    Возвращает False, если дальнейшие инструкции надо подавить."""
    op = insn.opcode
    if op == Opcode.CSTORE:
        return exec_cstore(lookup(insn.address), insn.slot, insn.post_slot, ctx, index)
    if op == Opcode.CEXEC:
        return exec_cexec(lookup(insn.address), insn.slot, ctx, index)
    if op in (Opcode.PUSH, Opcode.POP) and slot is None:
        ctx.skip(index, insn, SkipReason.NONEXISTENT_MEMORY)
        return True
    if op in (Opcode.LOAD, Opcode.PUSH):
        _exec_load(ctx, insn, index, insn.slot if op == Opcode.LOAD else slot)
    else:
        _exec_store(ctx, insn, index, insn.slot if op == Opcode.STORE else slot)
    return True


def _context(p: TppProgram, sw: SwitchState, meta: PacketMetadata, write_enabled: bool) -> ExecContext:
    return ExecContext(sw, meta, bytearray(p.memory), p.header.hop_index, p.header.hop_size_words,
                       write_enabled, p.header.session_id)


def _trace(p: TppProgram, ctx: ExecContext, sp_after: int, **kw) -> ExecutionTrace:
    records = tuple(ctx.records[i] for i in range(len(p.instructions)))
    return ExecutionTrace(ctx.sw.switch_id, p.header.hop_index, records, ctx.flags, p.header.sp, sp_after, **kw)


def _result(p: TppProgram, ctx: ExecContext, sp: int) -> TppProgram:
    return replace(p, header=replace(p.header, sp=sp, flags=int(p.header.flags | ctx.flags)), memory=bytes(ctx.memory))


def run_sequential(p: TppProgram, sw: SwitchState, meta: Optional[PacketMetadata] = None,
                   write_enabled: bool = True) -> tuple[TppProgram, ExecutionTrace]:
    """Эталонная семантика: порядок программы, стек двигается по ходу."""
    meta = meta or PacketMetadata()
    ctx = _context(p, sw, meta, write_enabled)
    h = p.header
    sp = h.sp
    failed = False
    for index, insn in enumerate(p.instructions):
        if failed:
            ctx.skip(index, insn, SkipReason.COND_FAILED)
            continue
        slot = None
        if insn.opcode == Opcode.PUSH:
            slot = _push_slot(sp, ctx.base, h.hop_size_words, h.mem_len)
        elif insn.opcode == Opcode.POP and sp >= 2:
            slot = _push_slot(sp - 2, ctx.base, h.hop_size_words, h.mem_len)
        ok = _exec_plain(ctx, insn, index, slot)
        if slot is not None:
            sp += 2 if insn.opcode == Opcode.PUSH else -2
        failed = not ok
    return _result(p, ctx, sp), _trace(p, ctx, sp)


def default_order(p: TppProgram) -> list[int]:
    return sorted(range(len(p.instructions)), key=lambda i: (lookup(p.instructions[i].address).stage, i))


def stage_orders(p: TppProgram) -> Iterator[tuple[int, ...]]:
    """Все порядки, допустимые для конвейера: стадии не убывают, а условная
    инструкция идёт раньше инструкций своей стадии с бОльшим индексом."""
    insns = p.instructions
    stages = [lookup(i.address).stage for i in insns]
    for perm in itertools.permutations(range(len(insns))):
        if any(stages[a] > stages[b] for a, b in zip(perm, perm[1:])):
            continue
        pos = {i: k for k, i in enumerate(perm)}
        if any(insns[k].opcode.is_conditional and stages[j] == stages[k] and pos[j] < pos[k]
               for k in range(len(insns)) for j in range(k + 1, len(insns))):
            continue
        yield perm


class Tcpu:
    """Распределённый TCPU одного хопа: инструкции исполняются порциями по
    стадиям (ingress до постановки в очередь, egress после)."""

    def __init__(self, p: TppProgram, sw: SwitchState, meta: PacketMetadata, write_enabled: bool = True) -> None:
        self.program = p
        self.ctx = _context(p, sw, meta, write_enabled)
        self.plan = assign_stack_slots(p)
        self.failed_at: Optional[int] = None
        self._pending = set(range(len(p.instructions)))

    def execute(self, order: Iterable[int]) -> None:
        insns = self.program.instructions
        for index in order:
            if index not in self._pending:
                continue
            self._pending.discard(index)
            insn = insns[index]
            if self.failed_at is not None and index > self.failed_at:
                self.ctx.skip(index, insn, SkipReason.COND_FAILED)
                continue
            if not _exec_plain(self.ctx, insn, index, self.plan.slots[index]):
                self.failed_at = index if self.failed_at is None else min(self.failed_at, index)

    def execute_stages(self, first: int, last: int) -> None:
        self.execute(i for i in default_order(self.program)
                     if first <= lookup(self.program.instructions[i].address).stage <= last)

    def abandon(self) -> None:
        """Пакет отброшен: оставшиеся инструкции не исполнялись."""
        for index in sorted(self._pending):
            insn = self.program.instructions[index]
            self.ctx.done(index, insn, succeeded=False, executed=False)
        self._pending.clear()

    @property
    def sp(self) -> int:
        if not self.program.instructions:
            return self.program.header.sp
        last = self.failed_at if self.failed_at is not None else len(self.program.instructions) - 1
        return self.plan.sp_after[last]

    def finish(self, **trace_kw) -> tuple[TppProgram, ExecutionTrace]:
        if self._pending:
            self.abandon()
        trace = _trace(self.program, self.ctx, self.sp, **trace_kw)
        if log.isEnabledFor(logging.DEBUG):
            for line in trace.to_log_lines():
                log.debug(f"[TCPU] {line}")
        return _result(self.program, self.ctx, self.sp), trace


def run_staged(p: TppProgram, sw: SwitchState, meta: Optional[PacketMetadata] = None, write_enabled: bool = True,
               order: Optional[Sequence[int]] = None) -> tuple[TppProgram, ExecutionTrace]:
    tcpu = Tcpu(p, sw, meta or PacketMetadata(), write_enabled)
    tcpu.execute(order if order is not None else default_order(p))
    return tcpu.finish()

