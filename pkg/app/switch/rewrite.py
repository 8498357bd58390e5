"""Переписывание TPP под распределённый TCPU и периодические таймеры
статистики порта."""
from __future__ import annotations
import logging
from dataclasses import replace

from app.config import LINK_UTIL_INTERVAL_MS
from app.switch.state import LinkState, SwitchState
from app.switch.tcpu import assign_stack_slots
from app.tpp.exceptions import MemoryOverflow
from app.tpp.memory_map import LINK_ABS_BASE, LINK_STRIDE, WORD_MASK
from app.tpp.models import Instruction, Opcode, TppProgram

log = logging.getLogger("switch.rewrite")

_TX_UTIL_OFFSET, _RX_UTIL_OFFSET = 2, 3


def rewrite_push_pop(p: TppProgram) -> TppProgram:
    """PUSH -> LOAD [X], Packet:Hop[k]; POP -> STORE. Слоты назначаются в
    порядке программы от header.sp, sp в заголовке сразу ставится в
    итоговое значение, поэтому инструкции можно переставлять по стадиям."""
    if not any(i.opcode in (Opcode.PUSH, Opcode.POP) for i in p.instructions):
        return p
    plan = assign_stack_slots(p)
    out: list[Instruction] = []
    for index, (insn, slot) in enumerate(zip(p.instructions, plan.slots)):
        if insn.opcode not in (Opcode.PUSH, Opcode.POP):
            out.append(insn)
            continue
        if slot is None:
            raise MemoryOverflow(f"instruction {index}: {insn.opcode.name} does not fit in hop memory "
                                 f"(sp={p.header.sp}, hop_size={p.header.hop_size_words} words)")
        opcode = Opcode.LOAD if insn.opcode == Opcode.PUSH else Opcode.STORE
        out.append(Instruction(opcode, insn.address, slot))
    return replace(p, instructions=tuple(out), header=replace(p.header, sp=plan.sp_after[-1]))


def _util_word(nbytes: int, capacity_bps: int, window_ns: int) -> int:
    if capacity_bps <= 0 or window_ns <= 0:
        return 0
    return min(WORD_MASK, round(WORD_MASK * nbytes * 8 * 1_000_000_000 / (capacity_bps * window_ns)))


def update_link_utilization(link: LinkState, now_ns: int, sw: SwitchState | None = None) -> None:
    """Закрывает окно измерения: TX/RX-Utilization = доля ёмкости в единицах
    1/65535 за время с прошлого вызова. Счётчики окна обнуляются."""
    window = now_ns - link.window_start_ns
    if window <= 0:
        return
    link.tx_util = _util_word(link.window_tx_bytes, link.capacity_bps, window)
    link.rx_util = _util_word(link.window_rx_bytes, link.capacity_bps, window)
    link.window_tx_bytes = 0
    link.window_rx_bytes = 0
    link.window_start_ns = now_ns
    if sw is not None:
        base = LINK_ABS_BASE + link.port * LINK_STRIDE
        sw.note(base + _TX_UTIL_OFFSET, link.tx_util, "timer")
        sw.note(base + _RX_UTIL_OFFSET, link.rx_util, "timer")


def default_util_interval_ns() -> int:
    return int(LINK_UTIL_INTERVAL_MS * 1_000_000)
