"""Состояние одного коммутатора: всё, что видно TPP через карту памяти.

Счётчики хранятся как обычные int (по модулю 2^32 при чтении); 16-битные
слова вычисляются лениво в момент обращения, поэтому горячий путь
симулятора (enqueue/dequeue) не платит за карту памяти, пока её не читают.
"""
from __future__ import annotations
import logging
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from app.config import CELL_BYTES, DEFAULT_QUEUE_BYTES
from app.tpp.memory_map import (
    EGRESS_STAGE, LINK_ABS_BASE, LINK_STRIDE, MAX_QUEUES_PER_LINK, NUM_INGRESS_STAGES,
    QUEUE_ABS_BASE, QUEUE_STRIDE, STAGE_BASE, STAGE_STRIDE, SWITCH_BASE, WORD_MASK, Address, Namespace,
    lookup, namespace_fields, resolve_address,
)

log = logging.getLogger("switch")

MAX_PORTS = 16              # OutputPortBitmap: одно 16-битное слово
COUNTER_MASK = 0xFFFFFFFF
DROP_PORT = 0xFFFF          # значение [PacketMetadata:OutputPort] у отброшенного пакета


def cells(nbytes: int) -> int:
    return min(WORD_MASK, -(-nbytes // CELL_BYTES))


@dataclass
class FlowEntry:
    entry_id: int
    match: Any = None
    action: Any = None
    priority: int = 0
    version: int = 1
    insert_clock: int = 0
    match_packets: int = 0
    match_bytes: int = 0


@dataclass
class StageState:
    index: int
    name: str
    entries: list[FlowEntry] = field(default_factory=list)
    # id 0: запись по умолчанию (miss): у каждой таблицы она есть всегда
    default_entry: FlowEntry = field(default_factory=lambda: FlowEntry(0))
    version: int = 1
    lookup_packets: int = 0
    lookup_bytes: int = 0
    match_packets: int = 0
    match_bytes: int = 0
    regs: list[int] = field(default_factory=lambda: [0] * 8)

    @property
    def reference_count(self) -> int:
        return len(self.entries)

    def entry(self, entry_id: int) -> FlowEntry:
        if entry_id == 0:
            return self.default_entry
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        return self.default_entry

    def install(self, entry: FlowEntry, clock_ns: int = 0) -> FlowEntry:
        if entry.entry_id <= 0 or any(e.entry_id == entry.entry_id for e in self.entries):
            raise ValueError(f"stage {self.index}: bad or duplicate entry id {entry.entry_id}")
        entry.insert_clock = clock_ns
        self.entries.append(entry)
        self.version += 1
        return entry


@dataclass
class QueueState:
    port: int
    queue_id: int
    capacity_bytes: int = DEFAULT_QUEUE_BYTES
    occupancy_bytes: int = 0
    sched_weight: int = 1
    enqueued_packets: int = 0
    enqueued_bytes: int = 0
    tx_packets: int = 0
    tx_bytes: int = 0
    drop_packets: int = 0
    drop_bytes: int = 0
    frames: deque = field(default_factory=deque)

    @property
    def occupancy_cells(self) -> int:
        return cells(self.occupancy_bytes)

    @property
    def capacity_cells(self) -> int:
        return cells(self.capacity_bytes)

    def would_overflow(self, size: int) -> bool:
        return self.occupancy_bytes + size > self.capacity_bytes


@dataclass
class LinkState:
    port: int
    link_id: int
    capacity_bps: int
    status: int = 1
    tx_util: int = 0
    rx_util: int = 0
    app_specific_0: int = 0
    app_specific_1: int = 0
    tx_packets: int = 0
    tx_bytes: int = 0
    rx_packets: int = 0
    rx_bytes: int = 0
    drop_packets: int = 0
    drop_bytes: int = 0
    error_packets: int = 0
    error_bytes: int = 0
    window_tx_bytes: int = 0
    window_rx_bytes: int = 0
    window_start_ns: int = 0
    drr_next: int = 0
    drr_deficit: list[int] = field(default_factory=list)
    drr_fresh: bool = True
    queues: list[QueueState] = field(default_factory=list)

    @property
    def queued_bytes(self) -> int:
        return sum(q.occupancy_bytes for q in self.queues)

    @property
    def queued_packets(self) -> int:
        return sum(len(q.frames) for q in self.queues)

    @property
    def queue_size_cells(self) -> int:
        return cells(self.queued_bytes)

    @property
    def capacity_mbps(self) -> int:
        return min(WORD_MASK, self.capacity_bps // 1_000_000)


@dataclass
class PacketMetadata:
    """Метаданные пакета на время прохода через один коммутатор."""
    input_port: int = 0
    output_port_bitmap: int = 0
    output_queue: int = 0
    matched: list[int] = field(default_factory=lambda: [0] * NUM_INGRESS_STAGES)
    packet_length: int = 0
    ethertype: int = 0
    vlan: int = 0
    ip_src: int = 0
    ip_dst: int = 0
    ip_proto: int = 0
    src_port: int = 0
    dst_port: int = 0
    tpp_hop_index: int = 0
    tpp_session: int = 0

    @property
    def output_port(self) -> int:
        bitmap = self.output_port_bitmap & WORD_MASK
        if not bitmap:
            return DROP_PORT
        return (bitmap & -bitmap).bit_length() - 1

    @property
    def matched_entry_id(self) -> int:
        return self.matched[1]


# имя поля карты -> атрибут объекта состояния
_SWITCH_ATTRS = {"SwitchID": "switch_id", "VersionNumber": "version_number", "Clock": "clock_ns",
                 "ClockFrequency": "clock_mhz", "NumPorts": "num_ports", "NumStages": "num_stages"}
_STAGE_ATTRS = {"VersionNumber": "version", "ReferenceCount": "reference_count",
                "LookupPackets": "lookup_packets", "LookupBytes": "lookup_bytes",
                "MatchPackets": "match_packets", "MatchBytes": "match_bytes"}
_ENTRY_ATTRS = {"EntryID": "entry_id", "Version": "version", "InsertClock": "insert_clock",
                "MatchPackets": "match_packets", "MatchBytes": "match_bytes"}
_META_ATTRS = {"InputPort": "input_port", "OutputPort": "output_port", "OutputPortBitmap": "output_port_bitmap",
               "OutputQueue": "output_queue", "MatchedEntryID": "matched_entry_id", "PacketLength": "packet_length",
               "EtherType": "ethertype", "VlanID": "vlan", "IpSrc": "ip_src", "IpDst": "ip_dst",
               "IpProto": "ip_proto", "SrcPort": "src_port", "DstPort": "dst_port",
               "TppHopIndex": "tpp_hop_index", "TppSessionID": "tpp_session"}
_LINK_ATTRS = {"ID": "link_id", "Status": "status", "TX-Utilization": "tx_util", "RX-Utilization": "rx_util",
               "QueueSize": "queue_size_cells", "AppSpecific_0": "app_specific_0",
               "AppSpecific_1": "app_specific_1", "Capacity": "capacity_mbps",
               "TX-Packets": "tx_packets", "TX-Bytes": "tx_bytes", "RX-Packets": "rx_packets",
               "RX-Bytes": "rx_bytes", "Drop-Packets": "drop_packets", "Drop-Bytes": "drop_bytes",
               "Queued-Packets": "queued_packets", "Queued-Bytes": "queued_bytes",
               "Error-Packets": "error_packets", "Error-Bytes": "error_bytes"}
_QUEUE_ATTRS = {"QueueOccupancy": "occupancy_cells", "QueueCapacity": "capacity_cells",
                "SchedWeight": "sched_weight", "QueueID": "queue_id",
                "Enqueued-Packets": "enqueued_packets", "Enqueued-Bytes": "enqueued_bytes",
                "TX-Packets": "tx_packets", "TX-Bytes": "tx_bytes",
                "Drop-Packets": "drop_packets", "Drop-Bytes": "drop_bytes"}


def _attr_word(obj: Any, attrs: dict[str, str], name: str) -> Optional[int]:
    hi = name.endswith("-Hi")
    base = name[:-3] if hi else name
    if base.startswith("Reg") and isinstance(obj, StageState):
        return obj.regs[int(base[3:])] & WORD_MASK
    attr = attrs.get(base)
    if attr is None:
        return None
    value = int(getattr(obj, attr))
    if hi:
        return (value & COUNTER_MASK) >> 16
    return value & WORD_MASK


@dataclass
class ShadowEntry:
    seq: int
    time_ns: int
    switch_id: int
    address: int        # абсолютный raw-адрес
    value: int
    source: str         # "forwarding" | "tpp:<session>" | "timer" | "init"


class ShadowLog:
    """Эталонный журнал изменений слов памяти коммутаторов (оракул тестов
    согласованности). watch: предикат по Address; None означает все слова."""

    def __init__(self, watch: Optional[Callable[[Address], bool]] = None) -> None:
        self.entries: list[ShadowEntry] = []
        self._watch = watch
        self._seq = 0
        self._index: dict[tuple[int, int], tuple[list[int], list[int]]] = {}

    @property
    def seq(self) -> int:
        return self._seq

    def watching(self, addr: Address) -> bool:
        return self._watch is None or bool(self._watch(addr))

    def record(self, time_ns: int, switch_id: int, address: int, value: int, source: str) -> None:
        self._seq += 1
        self.entries.append(ShadowEntry(self._seq, time_ns, switch_id, address, value, source))
        seqs, values = self._index.setdefault((switch_id, address), ([], []))
        seqs.append(self._seq)
        values.append(value)

    def value_at(self, switch_id: int, address: int, seq: int) -> Optional[int]:
        """Значение слова после всех записей с номером <= seq."""
        seqs, values = self._index.get((switch_id, address), ([], []))
        pos = bisect_right(seqs, seq)
        return values[pos - 1] if pos else None

    def writes_by(self, prefix: str) -> list[ShadowEntry]:
        return [e for e in self.entries if e.source.startswith(prefix)]


class SwitchState:
    def __init__(self, switch_id: int, name: str = "", clock_mhz: int = 1000, ip: int = 0) -> None:
        self.switch_id = switch_id
        self.name = name or f"s{switch_id}"
        self.ip = ip
        self.version_number = 1
        self.clock_ns = 0
        self.clock_mhz = clock_mhz
        self.write_enabled = True
        self.links: list[LinkState] = []
        self.stages = [StageState(i, n) for i, n in
                       zip(range(1, NUM_INGRESS_STAGES + 1), ("acl", "route", "group", "qos"))]
        self.shadow: Optional[ShadowLog] = None

    @property
    def num_ports(self) -> int:
        return len(self.links)

    @property
    def num_stages(self) -> int:
        return EGRESS_STAGE

    def stage(self, i: int) -> StageState:
        return self.stages[i - 1]

    def add_link(self, link_id: int, capacity_bps: int, queue_bytes: int = DEFAULT_QUEUE_BYTES,
                 num_queues: int = 1) -> LinkState:
        port = len(self.links)
        if port >= MAX_PORTS:
            raise ValueError(f"{self.name}: at most {MAX_PORTS} ports")
        if not 1 <= num_queues <= MAX_QUEUES_PER_LINK:
            raise ValueError(f"{self.name}: 1..{MAX_QUEUES_PER_LINK} queues per port")
        link = LinkState(port, link_id, capacity_bps,
                         queues=[QueueState(port, j, queue_bytes) for j in range(num_queues)],
                         drr_deficit=[0] * num_queues)
        self.links.append(link)
        log.debug(f"[SWITCH] {self.name}: port {port} link {link_id} {capacity_bps} bps, {num_queues} queue(s)")
        return link

    def queue(self, port: int, queue_id: int) -> Optional[QueueState]:
        if 0 <= port < len(self.links) and 0 <= queue_id < len(self.links[port].queues):
            return self.links[port].queues[queue_id]
        return None

    # --- разыменование адресов ---------------------------------------------

    def _target(self, addr: Address, meta: Optional[PacketMetadata]) -> tuple[Any, dict, Optional[int]]:
        """(объект, таблица атрибутов, абсолютный raw) или (None, {}, None)."""
        ns = addr.namespace
        if ns == Namespace.SWITCH:
            return self, _SWITCH_ATTRS, addr.raw
        if ns == Namespace.STAGE:
            return self.stage(addr.index[0]), _STAGE_ATTRS, addr.raw
        if ns == Namespace.FLOW_ENTRY:
            if meta is None:
                return None, {}, None
            i = addr.index[0]
            return self.stage(i).entry(meta.matched[i - 1]), _ENTRY_ATTRS, None
        if ns == Namespace.PACKET_METADATA:
            return (meta, _META_ATTRS, None) if meta is not None else (None, {}, None)
        if ns == Namespace.LINK:
            port = addr.index[0] if addr.index else (meta.output_port if meta is not None else DROP_PORT)
            if not 0 <= port < len(self.links):
                return None, {}, None
            return self.links[port], _LINK_ATTRS, LINK_ABS_BASE + port * LINK_STRIDE + addr.offset
        if ns == Namespace.QUEUE:
            if addr.index:
                port, qid = addr.index
            elif meta is not None:
                port, qid = meta.output_port, meta.output_queue
            else:
                return None, {}, None
            q = self.queue(port, qid)
            if q is None:
                return None, {}, None
            return q, _QUEUE_ATTRS, QUEUE_ABS_BASE + (port * MAX_QUEUES_PER_LINK + qid) * QUEUE_STRIDE + addr.offset
        return None, {}, None

    def absolute(self, addr: Address, meta: Optional[PacketMetadata] = None) -> Optional[int]:
        """Абсолютный raw-адрес слова (для относительных Link/Queue); None для
        слов без постоянного адреса (метаданные пакета, FlowEntry)."""
        if not addr.exists:
            return None
        return self._target(addr, meta)[2]

    def read_word(self, addr: Address, meta: Optional[PacketMetadata] = None) -> Optional[int]:
        """None: слова нет (адрес вне карты, порт/очередь не существует)."""
        if not addr.exists:
            return None
        obj, attrs, _ = self._target(addr, meta)
        if obj is None:
            return None
        return _attr_word(obj, attrs, addr.field.name)

    def read(self, mnemonic_or_raw: Any, meta: Optional[PacketMetadata] = None) -> Optional[int]:
        addr = lookup(mnemonic_or_raw) if isinstance(mnemonic_or_raw, int) else resolve_address(mnemonic_or_raw)
        return self.read_word(addr, meta)

    def write_word(self, addr: Address, value: int, meta: Optional[PacketMetadata] = None,
                   source: str = "tpp") -> bool:
        """Запись слова, доступного на запись. False: слова нет или оно только для чтения."""
        if not addr.writable:
            return False
        obj, attrs, absolute = self._target(addr, meta)
        if obj is None:
            return False
        value &= WORD_MASK
        name = addr.field.name
        if name.startswith("Reg"):
            obj.regs[int(name[3:])] = value
        else:
            setattr(obj, attrs[name], value)
        if absolute is not None:
            self.note(absolute, value, source)
        return True

    # --- журнал -----------------------------------------------------------

    def note(self, absolute: int, value: int, source: str) -> None:
        shadow = self.shadow
        if shadow is not None and shadow.watching(lookup(absolute)):
            shadow.record(self.clock_ns, self.switch_id, absolute, value & WORD_MASK, source)

    def note_queue(self, q: QueueState, source: str = "forwarding") -> None:
        """Записывает в журнал слова очереди и порта, которые меняет enqueue/dequeue."""
        if self.shadow is None:
            return
        qbase = QUEUE_ABS_BASE + (q.port * MAX_QUEUES_PER_LINK + q.queue_id) * QUEUE_STRIDE
        lbase = LINK_ABS_BASE + q.port * LINK_STRIDE
        link = self.links[q.port]
        self.note(qbase + 0, q.occupancy_cells, source)
        self.note(lbase + 4, link.queue_size_cells, source)

    def attach_shadow(self, shadow: ShadowLog) -> None:
        """Подключает журнал и пишет начальные значения наблюдаемых слов."""
        self.shadow = shadow
        for addr in self.iter_addresses():
            if shadow.watching(addr):
                value = self.read_word(addr)
                if value is not None:
                    shadow.record(self.clock_ns, self.switch_id, addr.raw, value, "init")

    def _blocks(self) -> Iterable[tuple[Namespace, int, tuple[int, ...]]]:
        yield Namespace.SWITCH, SWITCH_BASE, ()
        for i in range(1, NUM_INGRESS_STAGES + 1):
            yield Namespace.STAGE, STAGE_BASE + (i - 1) * STAGE_STRIDE, (i,)
        for link in self.links:
            yield Namespace.LINK, LINK_ABS_BASE + link.port * LINK_STRIDE, (link.port,)
            for q in link.queues:
                k = link.port * MAX_QUEUES_PER_LINK + q.queue_id
                yield Namespace.QUEUE, QUEUE_ABS_BASE + k * QUEUE_STRIDE, (link.port, q.queue_id)

    def iter_addresses(self, writable_only: bool = False) -> Iterable[Address]:
        """Абсолютные адреса, существующие на этом коммутаторе (без метаданных
        пакета и FlowEntry: у них нет постоянного адреса)."""
        for ns, base, index in self._blocks():
            for f in namespace_fields(ns):
                if writable_only and not f.writable:
                    continue
                yield Address(base + f.offset, ns, index, f.offset, f)

    def snapshot(self, writable_only: bool = False) -> dict[int, int]:
        return {a.raw: self.read_word(a) for a in self.iter_addresses(writable_only)}
