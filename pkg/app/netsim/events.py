"""Очередь событий симулятора: полный порядок по (time, seq), seq:
порядковый номер вставки, так что одновременные события идут в порядке
планирования."""
from __future__ import annotations
import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class EventKind(str, Enum):
    ENQUEUE_DONE = "enqueue_done"           # кадр хоста встал в очередь NIC
    TRANSMIT_DONE = "transmit_done"         # последний бит ушёл в линк
    PROPAGATE_ARRIVE = "propagate_arrive"   # кадр дошёл до соседа
    TIMER = "timer"


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self) -> None:
        self._heap: list[SimEvent] = []
        self._seq = 0

    def push(self, time: int, kind: EventKind, payload: Any = None) -> SimEvent:
        self._seq += 1
        ev = SimEvent(int(time), self._seq, kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> SimEvent:
        return heapq.heappop(self._heap)

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None

    def pending(self, kind: EventKind) -> list[SimEvent]:
        return [e for e in self._heap if e.kind == kind]

    def __len__(self) -> int:
        return len(self._heap)
