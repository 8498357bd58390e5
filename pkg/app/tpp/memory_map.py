"""Стандартизованная карта памяти коммутатора: единое 16-битное адресное
пространство, в котором TPP видит статистику, регистры и метаданные пакета.

Карта компилируется в код (не читается из файла): мнемоника -> raw-адрес
стабильна между запусками, и обратное отображение raw -> мнемоника
однозначно (биекция по каноническим мнемоникам; алиасы вроде
[Switch:ID] только разрешаются, но никогда не печатаются).

Раскладка пространств имён (база, шаг, число экземпляров):

    0x0000          Switch                  глобальное состояние коммутатора
    0x1000 + 0x100i Stage1..Stage4          регистры и статистика стадий
    0x2000 + 0x10i  FlowEntry1..FlowEntry4  запись, совпавшая на стадии i
    0x3000          PacketMetadata          метаданные текущего пакета
    0x4000 + 0x40i  Link0..Link63           порт i (абсолютная адресация)
    0x6000 + 0x10k  Queue<i>_<j>            очередь j порта i, k = 8i + j
    0xa000          Link                    выходной порт текущего пакета
    0xb000          Queue                   выходная очередь текущего пакета

Широкие счётчики (32 бита) занимают два соседних слова: младшее под
основным именем, старшее под именем с суффиксом "-Hi".
"""
from __future__ import annotations
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional

from app.tpp.exceptions import UnknownMnemonic

NUM_INGRESS_STAGES = 4
EGRESS_STAGE = NUM_INGRESS_STAGES + 1
PIPELINE_STAGES = tuple(range(1, EGRESS_STAGE + 1))
MAX_LINKS = 64
MAX_QUEUES_PER_LINK = 8
WORD_MASK = 0xFFFF


class Namespace(str, Enum):
    SWITCH = "Switch"
    STAGE = "Stage"
    FLOW_ENTRY = "FlowEntry"
    PACKET_METADATA = "PacketMetadata"
    LINK = "Link"
    QUEUE = "Queue"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    offset: int
    writable: bool = False
    stage: Optional[int] = None   # только для PacketMetadata: стадия, где поле становится известно
    doc: str = ""


def _counter(name: str, offset: int, doc: str) -> list[FieldSpec]:
    return [FieldSpec(name, offset, doc=f"{doc} (low word)"),
            FieldSpec(f"{name}-Hi", offset + 1, doc=f"{doc} (high word)")]


SWITCH_FIELDS: list[FieldSpec] = [
    FieldSpec("SwitchID", 0, doc="switch identifier"),
    FieldSpec("VersionNumber", 1, doc="forwarding-state version"),
    *_counter("Clock", 2, "simulated clock, ns mod 2^32"),
    FieldSpec("ClockFrequency", 4, doc="clock frequency, MHz"),
    FieldSpec("NumPorts", 5, doc="number of ports"),
    FieldSpec("NumStages", 6, doc="number of pipeline stages"),
]

STAGE_FIELDS: list[FieldSpec] = [
    FieldSpec("VersionNumber", 0, doc="table version"),
    FieldSpec("ReferenceCount", 1, doc="number of installed entries"),
    *_counter("LookupPackets", 2, "packets looked up"),
    *_counter("LookupBytes", 4, "bytes looked up"),
    *_counter("MatchPackets", 6, "packets matched a non-default entry"),
    *_counter("MatchBytes", 8, "bytes matched a non-default entry"),
    *[FieldSpec(f"Reg{k}", 0x10 + k, writable=True, doc="stage-local register") for k in range(8)],
]

FLOW_ENTRY_FIELDS: list[FieldSpec] = [
    FieldSpec("EntryID", 0, doc="index of the matched entry"),
    FieldSpec("Version", 1, doc="entry version"),
    *_counter("InsertClock", 2, "insertion time, ns mod 2^32"),
    *_counter("MatchPackets", 4, "packets matched"),
    *_counter("MatchBytes", 6, "bytes matched"),
]

PACKET_METADATA_FIELDS: list[FieldSpec] = [
    FieldSpec("InputPort", 0, stage=1, doc="ingress port"),
    FieldSpec("OutputPort", 1, stage=EGRESS_STAGE, doc="egress port chosen for this packet"),
    FieldSpec("OutputPortBitmap", 2, writable=True, stage=NUM_INGRESS_STAGES,
              doc="egress port bitmap (0 drops the packet)"),
    FieldSpec("OutputQueue", 3, writable=True, stage=NUM_INGRESS_STAGES, doc="egress queue id"),
    FieldSpec("MatchedEntryID", 4, stage=2, doc="entry matched by the routing stage"),
    *[FieldSpec(f"MatchedEntry{i}", 4 + i, stage=i, doc=f"entry matched at stage {i}")
      for i in range(1, NUM_INGRESS_STAGES + 1)],
    FieldSpec("PacketLength", 9, stage=1, doc="frame length, bytes"),
    FieldSpec("EtherType", 10, stage=1, doc="parsed ethertype"),
    FieldSpec("VlanID", 11, stage=1, doc="parsed VLAN id"),
    *[FieldSpec(s.name, s.offset, stage=1, doc=s.doc) for s in _counter("IpSrc", 12, "IPv4 source")],
    *[FieldSpec(s.name, s.offset, stage=1, doc=s.doc) for s in _counter("IpDst", 14, "IPv4 destination")],
    FieldSpec("IpProto", 16, stage=1, doc="IP protocol"),
    FieldSpec("SrcPort", 17, stage=1, doc="L4 source port"),
    FieldSpec("DstPort", 18, stage=1, doc="L4 destination port"),
    FieldSpec("TppHopIndex", 19, stage=1, doc="hop index from the TPP header"),
    FieldSpec("TppSessionID", 20, stage=1, doc="session id from the TPP header"),
]

LINK_FIELDS: list[FieldSpec] = [
    FieldSpec("ID", 0, doc="topology-wide link id"),
    FieldSpec("Status", 1, doc="1 = up"),
    FieldSpec("TX-Utilization", 2, doc="egress utilization over the last window, 65535 = full"),
    FieldSpec("RX-Utilization", 3, doc="ingress utilization over the last window, 65535 = full"),
    FieldSpec("QueueSize", 4, doc="bytes queued on the port, in cells"),
    FieldSpec("AppSpecific_0", 5, writable=True, doc="application register"),
    FieldSpec("AppSpecific_1", 6, writable=True, doc="application register"),
    FieldSpec("Capacity", 7, doc="link capacity, Mb/s"),
    *_counter("TX-Packets", 8, "packets transmitted"),
    *_counter("TX-Bytes", 10, "bytes transmitted"),
    *_counter("RX-Packets", 12, "packets received"),
    *_counter("RX-Bytes", 14, "bytes received"),
    *_counter("Drop-Packets", 16, "packets dropped"),
    *_counter("Drop-Bytes", 18, "bytes dropped"),
    *_counter("Queued-Packets", 20, "packets currently queued"),
    *_counter("Queued-Bytes", 22, "bytes currently queued"),
    *_counter("Error-Packets", 24, "packets with errors"),
    *_counter("Error-Bytes", 26, "bytes with errors"),
]

QUEUE_FIELDS: list[FieldSpec] = [
    FieldSpec("QueueOccupancy", 0, doc="current occupancy, in cells"),
    FieldSpec("QueueCapacity", 1, doc="capacity, in cells"),
    FieldSpec("SchedWeight", 2, writable=True, doc="scheduler weight"),
    FieldSpec("QueueID", 3, doc="queue id within the port"),
    *_counter("Enqueued-Packets", 4, "packets enqueued"),
    *_counter("Enqueued-Bytes", 6, "bytes enqueued"),
    *_counter("TX-Packets", 8, "packets dequeued"),
    *_counter("TX-Bytes", 10, "bytes dequeued"),
    *_counter("Drop-Packets", 12, "packets dropped at enqueue"),
    *_counter("Drop-Bytes", 14, "bytes dropped at enqueue"),
]

SWITCH_BASE = 0x0000
STAGE_BASE, STAGE_STRIDE = 0x1000, 0x100
FLOW_ENTRY_BASE, FLOW_ENTRY_STRIDE = 0x2000, 0x10
PACKET_METADATA_BASE = 0x3000
LINK_ABS_BASE, LINK_STRIDE = 0x4000, 0x40
QUEUE_ABS_BASE, QUEUE_STRIDE = 0x6000, 0x10
LINK_REL_BASE = 0xA000
QUEUE_REL_BASE = 0xB000

_FIELDS: dict[Namespace, list[FieldSpec]] = {
    Namespace.SWITCH: SWITCH_FIELDS,
    Namespace.STAGE: STAGE_FIELDS,
    Namespace.FLOW_ENTRY: FLOW_ENTRY_FIELDS,
    Namespace.PACKET_METADATA: PACKET_METADATA_FIELDS,
    Namespace.LINK: LINK_FIELDS,
    Namespace.QUEUE: QUEUE_FIELDS,
}
_BY_NAME = {ns: {f.name.lower(): f for f in fields} for ns, fields in _FIELDS.items()}
_BY_OFFSET = {ns: {f.offset: f for f in fields} for ns, fields in _FIELDS.items()}

ALIASES = {
    "switch:id": "Switch:SwitchID",
}


@dataclass(frozen=True)
class Address:
    raw: int
    namespace: Optional[Namespace] = None      # None: адрес вне карты (nonexistent)
    index: tuple[int, ...] = ()                # () для глобальных и относительных пространств
    offset: int = 0
    field: Optional[FieldSpec] = None

    @property
    def exists(self) -> bool:
        return self.field is not None

    @property
    def relative(self) -> bool:
        """Link/Queue без индекса и FlowEntry$i разрешаются через пакет."""
        if self.namespace in (Namespace.LINK, Namespace.QUEUE):
            return not self.index
        return self.namespace == Namespace.FLOW_ENTRY

    @property
    def writable(self) -> bool:
        return self.field is not None and self.field.writable

    @property
    def stage(self) -> int:
        return stage_of(self)

    @property
    def mnemonic(self) -> str:
        if self.field is None:
            return f"0x{self.raw:04x}"
        ns = self.namespace
        if ns in (Namespace.STAGE, Namespace.FLOW_ENTRY) or (ns == Namespace.LINK and self.index):
            prefix = f"{ns.value}{self.index[0]}"
        elif ns == Namespace.QUEUE and self.index:
            prefix = f"Queue{self.index[0]}_{self.index[1]}"
        else:
            prefix = ns.value
        return f"{prefix}:{self.field.name}"

    def __str__(self) -> str:
        return f"[{self.mnemonic}]"


def stage_of(addr: Address) -> int:
    """Стадия конвейера, на которой живёт слово. Для несуществующих адресов
    первая стадия: там инструкция и будет пропущена."""
    ns = addr.namespace
    if ns is None or addr.field is None:
        return 1
    if ns == Namespace.SWITCH:
        return 1
    if ns in (Namespace.STAGE, Namespace.FLOW_ENTRY):
        return addr.index[0]
    if ns == Namespace.PACKET_METADATA:
        return addr.field.stage or 1
    return EGRESS_STAGE


def _make(raw: int, ns: Namespace, index: tuple[int, ...], offset: int) -> Address:
    return Address(raw, ns, index, offset, _BY_OFFSET[ns].get(offset))


def lookup(raw: int) -> Address:
    """raw -> Address; адрес вне карты возвращается с field=None."""
    if not 0 <= raw <= WORD_MASK:
        raise ValueError(f"address out of 16-bit range: {raw}")
    if raw < 0x0100:
        return _make(raw, Namespace.SWITCH, (), raw - SWITCH_BASE)
    if STAGE_BASE <= raw < STAGE_BASE + NUM_INGRESS_STAGES * STAGE_STRIDE:
        i, off = divmod(raw - STAGE_BASE, STAGE_STRIDE)
        return _make(raw, Namespace.STAGE, (i + 1,), off)
    if FLOW_ENTRY_BASE <= raw < FLOW_ENTRY_BASE + NUM_INGRESS_STAGES * FLOW_ENTRY_STRIDE:
        i, off = divmod(raw - FLOW_ENTRY_BASE, FLOW_ENTRY_STRIDE)
        return _make(raw, Namespace.FLOW_ENTRY, (i + 1,), off)
    if PACKET_METADATA_BASE <= raw < PACKET_METADATA_BASE + 0x100:
        return _make(raw, Namespace.PACKET_METADATA, (), raw - PACKET_METADATA_BASE)
    if LINK_ABS_BASE <= raw < LINK_ABS_BASE + MAX_LINKS * LINK_STRIDE:
        i, off = divmod(raw - LINK_ABS_BASE, LINK_STRIDE)
        return _make(raw, Namespace.LINK, (i,), off)
    if QUEUE_ABS_BASE <= raw < QUEUE_ABS_BASE + MAX_LINKS * MAX_QUEUES_PER_LINK * QUEUE_STRIDE:
        k, off = divmod(raw - QUEUE_ABS_BASE, QUEUE_STRIDE)
        return _make(raw, Namespace.QUEUE, divmod(k, MAX_QUEUES_PER_LINK), off)
    if LINK_REL_BASE <= raw < LINK_REL_BASE + LINK_STRIDE:
        return _make(raw, Namespace.LINK, (), raw - LINK_REL_BASE)
    if QUEUE_REL_BASE <= raw < QUEUE_REL_BASE + QUEUE_STRIDE:
        return _make(raw, Namespace.QUEUE, (), raw - QUEUE_REL_BASE)
    return Address(raw)


_MNEMONIC_RE = re.compile(
    r"^\[?\s*(?P<ns>[A-Za-z]+?)(?P<i>\d+)?(?:_(?P<j>\d+))?\s*:\s*(?P<name>[A-Za-z0-9_\-]+)\s*\]?$")


def _base(ns: Namespace, i: Optional[int], j: Optional[int]) -> tuple[int, tuple[int, ...]]:
    if ns == Namespace.SWITCH and i is None:
        return SWITCH_BASE, ()
    if ns == Namespace.PACKET_METADATA and i is None:
        return PACKET_METADATA_BASE, ()
    if ns == Namespace.STAGE and i is not None and j is None and 1 <= i <= NUM_INGRESS_STAGES:
        return STAGE_BASE + (i - 1) * STAGE_STRIDE, (i,)
    if ns == Namespace.FLOW_ENTRY and i is not None and j is None and 1 <= i <= NUM_INGRESS_STAGES:
        return FLOW_ENTRY_BASE + (i - 1) * FLOW_ENTRY_STRIDE, (i,)
    if ns == Namespace.LINK and j is None:
        if i is None:
            return LINK_REL_BASE, ()
        if i < MAX_LINKS:
            return LINK_ABS_BASE + i * LINK_STRIDE, (i,)
    if ns == Namespace.QUEUE:
        if i is None and j is None:
            return QUEUE_REL_BASE, ()
        if i is not None and j is not None and i < MAX_LINKS and j < MAX_QUEUES_PER_LINK:
            return QUEUE_ABS_BASE + (i * MAX_QUEUES_PER_LINK + j) * QUEUE_STRIDE, (i, j)
    raise UnknownMnemonic(f"bad namespace index: {ns.value}{'' if i is None else i}")


def resolve_address(mnemonic: str) -> Address:
    """`[Namespace:Name]` (скобки необязательны) -> Address."""
    text = mnemonic.strip()
    key = text.strip("[] ").lower()
    if key in ALIASES:
        text = ALIASES[key]
    m = _MNEMONIC_RE.match(text)
    if m is None:
        raise UnknownMnemonic(f"malformed mnemonic: {mnemonic!r}")
    ns_name = m.group("ns").lower()
    ns = next((n for n in Namespace if n.value.lower() == ns_name), None)
    if ns is None:
        raise UnknownMnemonic(f"unknown namespace: {mnemonic!r}")
    i = int(m.group("i")) if m.group("i") is not None else None
    j = int(m.group("j")) if m.group("j") is not None else None
    field = _BY_NAME[ns].get(m.group("name").lower())
    if field is None:
        raise UnknownMnemonic(f"unknown field {m.group('name')!r} in {ns.value}")
    base, index = _base(ns, i, j)
    return Address(base + field.offset, ns, index, field.offset, field)


def iter_addresses() -> Iterator[Address]:
    """Все определённые адреса карты в порядке возрастания raw."""
    blocks: list[tuple[Namespace, int, tuple[int, ...]]] = [(Namespace.SWITCH, SWITCH_BASE, ())]
    blocks += [(Namespace.STAGE, STAGE_BASE + (i - 1) * STAGE_STRIDE, (i,))
               for i in range(1, NUM_INGRESS_STAGES + 1)]
    blocks += [(Namespace.FLOW_ENTRY, FLOW_ENTRY_BASE + (i - 1) * FLOW_ENTRY_STRIDE, (i,))
               for i in range(1, NUM_INGRESS_STAGES + 1)]
    blocks.append((Namespace.PACKET_METADATA, PACKET_METADATA_BASE, ()))
    blocks += [(Namespace.LINK, LINK_ABS_BASE + i * LINK_STRIDE, (i,)) for i in range(MAX_LINKS)]
    blocks += [(Namespace.QUEUE, QUEUE_ABS_BASE + k * QUEUE_STRIDE, divmod(k, MAX_QUEUES_PER_LINK))
               for k in range(MAX_LINKS * MAX_QUEUES_PER_LINK)]
    blocks.append((Namespace.LINK, LINK_REL_BASE, ()))
    blocks.append((Namespace.QUEUE, QUEUE_REL_BASE, ()))
    for ns, base, index in blocks:
        for f in _FIELDS[ns]:
            yield Address(base + f.offset, ns, index, f.offset, f)


def namespace_fields(ns: Namespace) -> list[FieldSpec]:
    return list(_FIELDS[ns])


def render_markdown() -> str:
    """Человекочитаемый документ карты памяти (docs/memory_map.md)."""
    access = lambda f: "rw" if f.writable else "ro"  # noqa: E731
    out = [
        "# TPP memory map",
        "",
        "Generated by `python -m scripts.gen_memory_map`; do not edit by hand.",
        "",
        "Words are 16 bits. 32-bit counters occupy two consecutive words: the low",
        "word under the field name and the high word under `<name>-Hi`.",
        f"Pipeline: stages 1..{NUM_INGRESS_STAGES} are ingress match-action stages,",
        f"stage {EGRESS_STAGE} is the egress stage.",
        "",
        "| Namespace | Base | Instances | Stage |",
        "|---|---|---|---|",
        f"| `Switch` | `0x{SWITCH_BASE:04x}` | 1 | 1 |",
        f"| `Stage<i>` | `0x{STAGE_BASE:04x} + 0x{STAGE_STRIDE:x}·(i-1)` | i = 1..{NUM_INGRESS_STAGES} | i |",
        f"| `FlowEntry<i>` | `0x{FLOW_ENTRY_BASE:04x} + 0x{FLOW_ENTRY_STRIDE:x}·(i-1)` "
        f"| i = 1..{NUM_INGRESS_STAGES}, entry matched at stage i | i |",
        f"| `PacketMetadata` | `0x{PACKET_METADATA_BASE:04x}` | 1 per packet | per field |",
        f"| `Link<i>` | `0x{LINK_ABS_BASE:04x} + 0x{LINK_STRIDE:x}·i` | i = 0..{MAX_LINKS - 1} | {EGRESS_STAGE} |",
        f"| `Queue<i>_<j>` | `0x{QUEUE_ABS_BASE:04x} + 0x{QUEUE_STRIDE:x}·({MAX_QUEUES_PER_LINK}i+j)` "
        f"| i = 0..{MAX_LINKS - 1}, j = 0..{MAX_QUEUES_PER_LINK - 1} | {EGRESS_STAGE} |",
        f"| `Link` | `0x{LINK_REL_BASE:04x}` | output port of the packet | {EGRESS_STAGE} |",
        f"| `Queue` | `0x{QUEUE_REL_BASE:04x}` | output queue of the packet | {EGRESS_STAGE} |",
        "",
        "Aliases accepted by the assembler: " + ", ".join(f"`[{k}]` = `[{v}]`" for k, v in ALIASES.items()),
        "",
    ]
    examples = {
        Namespace.SWITCH: (SWITCH_BASE, "Switch"),
        Namespace.STAGE: (STAGE_BASE, "Stage1"),
        Namespace.FLOW_ENTRY: (FLOW_ENTRY_BASE, "FlowEntry1"),
        Namespace.PACKET_METADATA: (PACKET_METADATA_BASE, "PacketMetadata"),
        Namespace.LINK: (LINK_REL_BASE, "Link"),
        Namespace.QUEUE: (QUEUE_REL_BASE, "Queue"),
    }
    for ns, (base, prefix) in examples.items():
        out += [f"## {ns.value}", "", "| Mnemonic | Raw | Offset | Width | Access | Stage | Meaning |",
                "|---|---|---|---|---|---|---|"]
        for f in _FIELDS[ns]:
            addr = lookup(base + f.offset)
            out.append(f"| `[{prefix}:{f.name}]` | `0x{addr.raw:04x}` | {f.offset} | 16 | "
                       f"{access(f)} | {stage_of(addr)} | {f.doc} |")
        out.append("")
    return "\n".join(out)
