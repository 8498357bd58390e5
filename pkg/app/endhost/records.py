"""Запись о полностью исполненном TPP, как её видит конечный хост."""
from __future__ import annotations
from dataclasses import dataclass
from typing import Optional

from app.netsim.packet import Packet, PathRecord
from app.tpp.models import Encapsulation, TppFlags, TppProgram


@dataclass(frozen=True)
class ExecutedTppRecord:
    host: str                       # где запись собрана
    origin: str                     # хост, отправивший TPP
    time_ns: int
    session_id: int
    hops: int                       # header.hop_index на момент приёма
    flags: int
    encapsulation: Encapsulation
    slots: tuple[tuple[int, ...], ...]
    program: TppProgram
    uid: int = 0
    birth_ns: int = 0
    flow: str = ""
    dst: str = ""
    path_log: tuple[PathRecord, ...] = ()
    forward_hops: Optional[int] = None  # хопов до отражения (только у эха от хоста)

    @classmethod
    def from_packet(cls, pkt: Packet, host: str, now_ns: int) -> "ExecutedTppRecord":
        p = pkt.tpp
        h = p.header
        if h.hop_size_words:
            slots = tuple(tuple(p.hop_words(i)) for i in range(min(h.hop_index, p.hops_allocated)))
        else:
            # чистый стек: всё, что лежит ниже sp, одним блоком
            slots = (tuple(p.words()[:h.sp // 2]),)
        return cls(host, pkt.src, now_ns, h.session_id, h.hop_index, h.flags, p.encapsulation, slots, p,
                   pkt.uid, pkt.birth_ns, pkt.flow, pkt.dst, tuple(pkt.path_log), pkt.notes.get("forward_hops"))

    @property
    def truncated(self) -> bool:
        h = self.program.header
        return bool(h.hop_size_words) and h.hop_index > self.program.hops_allocated

    @property
    def error(self) -> bool:
        return bool(self.flags & TppFlags.ERROR)

    @property
    def write_skipped(self) -> bool:
        return bool(self.flags & TppFlags.WRITE_SKIPPED)

    @property
    def echoed(self) -> bool:
        return bool(self.flags & TppFlags.ECHOED)

    @property
    def rtt_ns(self) -> int:
        return self.time_ns - self.birth_ns

    def hop(self, i: int) -> Optional[tuple[int, ...]]:
        return self.slots[i] if 0 <= i < len(self.slots) else None

    def csv_row(self) -> tuple:
        slots = ";".join(" ".join(str(w) for w in hop) for hop in self.slots)
        return (self.time_ns, self.host, self.session_id, self.hops, self.flags, self.encapsulation.value, slots)
