"""Статический анализ TPP перед установкой: какие слова памяти коммутатора
программа читает и пишет, покрыты ли эти обращения политиками приложения
и можно ли исполнять инструкции в порядке стадий конвейера, а не в
порядке программы."""
from __future__ import annotations
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from app.tpp.memory_map import Address, Namespace, lookup
from app.tpp.models import BLOCK_WORDS, Instruction, Opcode, TppProgram


class AccessOp(str, Enum):
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class MemoryPolicy:
    """(appid, op, address_range): приложению appid разрешено op над
    raw-адресами [start, end] включительно."""
    appid: int
    op: AccessOp
    start: int
    end: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "op", AccessOp(self.op))
        if not 0 <= self.start <= self.end <= 0xFFFF:
            raise ValueError(f"bad address range [{self.start:#x}, {self.end:#x}]")
        if not 0 <= self.appid < 2 ** 64:
            raise ValueError(f"appid {self.appid} does not fit 64 bits")

    def covers(self, appid: int, op: AccessOp, raw: int) -> bool:
        return self.appid == appid and self.op == op and self.start <= raw <= self.end


@dataclass(frozen=True)
class TouchedRange:
    op: AccessOp
    start: int
    end: int

    def contains(self, raw: int) -> bool:
        return self.start <= raw <= self.end


@dataclass(frozen=True)
class Violation:
    index: int
    reason: str


@dataclass(frozen=True)
class DataHazard:
    first: int
    second: int
    kind: str           # RAW / WAR / WAW в терминах порядка программы
    location: str


@dataclass(frozen=True)
class AnalysisReport:
    touched_ranges: tuple[TouchedRange, ...] = ()
    violations: tuple[Violation, ...] = ()
    has_writes: bool = False
    hazard_order_ok: bool = True
    data_hazards: tuple[DataHazard, ...] = field(default=())

    @property
    def admissible(self) -> bool:
        return not self.violations

    @property
    def reorder_safe(self) -> bool:
        return self.hazard_order_ok and not self.data_hazards

    def touches(self, op: AccessOp, raw: int) -> bool:
        return any(r.op == op and r.contains(raw) for r in self.touched_ranges)

    def to_dict(self) -> dict:
        return {
            "touched_ranges": [{"op": r.op.value, "start": r.start, "end": r.end} for r in self.touched_ranges],
            "violations": [{"index": v.index, "reason": v.reason} for v in self.violations],
            "has_writes": self.has_writes,
            "hazard_order_ok": self.hazard_order_ok,
            "data_hazards": [{"first": h.first, "second": h.second, "kind": h.kind, "location": h.location}
                             for h in self.data_hazards],
        }


def switch_ops(opcode: Opcode) -> tuple[AccessOp, ...]:
    if opcode in (Opcode.LOAD, Opcode.PUSH, Opcode.CEXEC):
        return (AccessOp.READ,)
    if opcode in (Opcode.STORE, Opcode.POP):
        return (AccessOp.WRITE,)
    return (AccessOp.READ, AccessOp.WRITE)


def _merge(ranges: Iterable[TouchedRange]) -> tuple[TouchedRange, ...]:
    out: list[TouchedRange] = []
    for r in sorted(set(ranges), key=lambda r: (r.op.value, r.start, r.end)):
        if out and out[-1].op == r.op and r.start <= out[-1].end + 1:
            last = out.pop()
            r = TouchedRange(r.op, last.start, max(last.end, r.end))
        out.append(r)
    return tuple(out)


# --- зависимости по данным ----------------------------------------------------

_PORT, _QUEUE = ("meta", "port"), ("meta", "queue")


def _switch_keys(addr: Address) -> tuple[list[tuple], list[tuple]]:
    """(ключи слова, ключи, через которые слово адресуется). Относительные
    Link/Queue зависят от выбранного порта/очереди, которые TPP может
    переписать через OutputPortBitmap/OutputQueue."""
    ns = addr.namespace
    if ns in (Namespace.LINK, Namespace.QUEUE):
        word = (ns.value, addr.offset, addr.index or None)
        via: list[tuple] = []
        if addr.relative:
            via = [_PORT, _QUEUE] if ns == Namespace.QUEUE else [_PORT]
        return [word], via
    if ns == Namespace.PACKET_METADATA and addr.field is not None:
        if addr.field.name in ("OutputPort", "OutputPortBitmap"):
            return [_PORT], []
        if addr.field.name == "OutputQueue":
            return [_QUEUE], []
    return [("raw", addr.raw)], []


def _same(a: tuple, b: tuple) -> bool:
    if a[0] in ("Link", "Queue") and a[0] == b[0] and a[1] == b[1]:
        return a[2] is None or b[2] is None or a[2] == b[2]
    return a == b


def _key_name(key: tuple) -> str:
    if key[0] == "pkt":
        return f"packet word {key[1]}"
    if key[0] == "meta":
        return f"output {key[1]}"
    if key[0] == "raw":
        return str(lookup(key[1]))
    return f"[{key[0]}{'' if key[2] is None else key[2]}:+{key[1]}]"


def packet_slots(p: TppProgram) -> list[tuple[list[int], list[int]]]:
    """Для каждой инструкции: (читаемые, записываемые) слова памяти пакета
    на текущем хопе; стек моделируется от header.sp."""
    h = p.header
    base = h.hop_index * h.hop_size_words
    top = h.sp // 2
    out: list[tuple[list[int], list[int]]] = []
    for insn in p.instructions:
        op = insn.opcode
        if op == Opcode.PUSH:
            out.append(([], [top]))
            top += 1
        elif op == Opcode.POP:
            top -= 1
            out.append(([top], []))
        elif op == Opcode.LOAD:
            out.append(([], [base + insn.slot]))
        elif op == Opcode.STORE:
            out.append(([base + insn.slot], []))
        elif op == Opcode.CSTORE:
            out.append(([base + insn.slot, base + insn.post_slot], [base + insn.slot]))
        else:
            out.append(([base + insn.slot + k for k in range(BLOCK_WORDS)], []))
    return out


def _access_sets(p: TppProgram) -> list[tuple[list[tuple], list[tuple]]]:
    sets = []
    for insn, (pr, pw) in zip(p.instructions, packet_slots(p)):
        words, via = _switch_keys(lookup(insn.address))
        ops = switch_ops(insn.opcode)
        reads = [("pkt", w) for w in pr] + via + (words if AccessOp.READ in ops else [])
        writes = [("pkt", w) for w in pw] + (words if AccessOp.WRITE in ops else [])
        sets.append((reads, writes))
    return sets


def _conflict(a: list[tuple], b: list[tuple]) -> Optional[tuple]:
    for x in a:
        for y in b:
            if _same(x, y):
                return x
    return None


def find_data_hazards(p: TppProgram) -> tuple[DataHazard, ...]:
    """Пары i < j, чей относительный порядок исполнение по стадиям может
    нарушить: stage(j) < stage(i), либо одна стадия и i не условная
    инструкция (внутри стадии условные идут первыми)."""
    stages = [lookup(i.address).stage for i in p.instructions]
    sets = _access_sets(p)
    hazards = []
    for i, a in enumerate(p.instructions):
        for j in range(i + 1, len(p.instructions)):
            ordered = stages[j] > stages[i] or (stages[j] == stages[i] and a.opcode.is_conditional)
            if ordered:
                continue
            (ri, wi), (rj, wj) = sets[i], sets[j]
            for kind, x, y in (("RAW", wi, rj), ("WAR", ri, wj), ("WAW", wi, wj)):
                key = _conflict(x, y)
                if key is not None:
                    hazards.append(DataHazard(i, j, kind, _key_name(key)))
                    break
    return tuple(hazards)


def hazard_order_ok(instructions: Iterable[Instruction]) -> bool:
    """Ни одна инструкция после условной не живёт на более ранней стадии."""
    insns = list(instructions)
    stages = [lookup(i.address).stage for i in insns]
    for k, insn in enumerate(insns):
        if insn.opcode.is_conditional and any(s < stages[k] for s in stages[k + 1:]):
            return False
    return True


def analyze(p: TppProgram, policies: Optional[Iterable[MemoryPolicy]] = None, appid: int = 0,
            deny_writes: bool = False) -> AnalysisReport:
    """policies=None: контроль доступа не проверяется (только touched/hazards).
    Нарушение заводится на каждую непокрытую пару (инструкция, операция)."""
    policy_list = None if policies is None else list(policies)
    touched: list[TouchedRange] = []
    violations: list[Violation] = []
    for index, insn in enumerate(p.instructions):
        addr = lookup(insn.address)
        for op in switch_ops(insn.opcode):
            touched.append(TouchedRange(op, insn.address, insn.address))
            if op == AccessOp.WRITE and deny_writes:
                violations.append(Violation(index, f"{insn.opcode.name}: write instructions are disabled"))
                continue
            if policy_list is not None and not any(pol.covers(appid, op, insn.address) for pol in policy_list):
                violations.append(Violation(index, f"{op.value} of {addr} is not permitted for app {appid}"))
    return AnalysisReport(
        touched_ranges=_merge(touched),
        violations=tuple(violations),
        has_writes=any(i.opcode.writes_switch for i in p.instructions),
        hazard_order_ok=hazard_order_ok(p.instructions),
        data_hazards=find_data_hazards(p),
    )


def _range_profile(start: int, end: int) -> tuple[set[tuple], set[tuple]]:
    """(абсолютные, относительные) пары (namespace, offset) Link/Queue в диапазоне."""
    absolute, relative = set(), set()
    for raw in range(start, end + 1):
        addr = lookup(raw)
        if addr.namespace in (Namespace.LINK, Namespace.QUEUE) and addr.exists:
            (relative if addr.relative else absolute).add((addr.namespace, addr.offset))
    return absolute, relative


def ranges_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    """Пересекаются ли диапазоны физически: совпадение raw-адресов или
    относительное слово Link/Queue против того же слова любого порта."""
    if a[0] <= b[1] and b[0] <= a[1]:
        return True
    abs_a, rel_a = _range_profile(*a)
    abs_b, rel_b = _range_profile(*b)
    return bool(rel_a & (abs_b | rel_b) or rel_b & abs_a)
