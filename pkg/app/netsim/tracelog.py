"""Журнал прогона: доставки, потери, замеры очередей и утилизации,
исполненные TPP и эталонный shadow log. После run() это неизменяемый снимок."""
from __future__ import annotations
import csv
import hashlib
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from app.switch.state import ShadowLog


@dataclass(frozen=True)
class Delivery:
    time_ns: int
    uid: int
    flow: str
    seq: int
    src: str
    dst: str
    size: int
    latency_ns: int


@dataclass(frozen=True)
class Drop:
    time_ns: int
    uid: int
    node: str
    reason: str
    flow: str = ""


@dataclass(frozen=True)
class QueueSample:
    time_ns: int
    switch: str
    port: int
    queue: int
    nbytes: int


@dataclass(frozen=True)
class UtilSample:
    time_ns: int
    switch: str
    port: int
    link_id: int
    tx_util: int
    rx_util: int


@dataclass
class TraceLog:
    seed: int
    deliveries: list[Delivery] = field(default_factory=list)
    drops: list[Drop] = field(default_factory=list)
    queue_samples: list[QueueSample] = field(default_factory=list)
    util_samples: list[UtilSample] = field(default_factory=list)
    tpp_records: list[Any] = field(default_factory=list)     # ExecutedTppRecord
    shadow: Optional[ShadowLog] = None
    injected: int = 0
    in_flight: int = 0
    end_ns: int = 0

    @property
    def delivered(self) -> int:
        return len(self.deliveries)

    @property
    def dropped(self) -> int:
        return len(self.drops)

    def drop_reasons(self) -> Counter:
        return Counter(d.reason for d in self.drops)

    def conserved(self) -> bool:
        return self.injected == self.delivered + self.dropped + self.in_flight

    # --- экспорт ---------------------------------------------------------------

    def tables(self) -> dict[str, tuple[list[str], list[tuple]]]:
        return {
            "queues.csv": (["time_ns", "switch", "port", "queue", "bytes"],
                           [(s.time_ns, s.switch, s.port, s.queue, s.nbytes) for s in self.queue_samples]),
            "utilization.csv": (["time_ns", "switch", "port", "link_id", "tx_util", "rx_util"],
                                [(s.time_ns, s.switch, s.port, s.link_id, s.tx_util, s.rx_util)
                                 for s in self.util_samples]),
            "deliveries.csv": (["time_ns", "uid", "flow", "seq", "src", "dst", "size", "latency_ns"],
                               [(d.time_ns, d.uid, d.flow, d.seq, d.src, d.dst, d.size, d.latency_ns)
                                for d in self.deliveries]),
            "drops.csv": (["time_ns", "uid", "node", "reason", "flow"],
                          [(d.time_ns, d.uid, d.node, d.reason, d.flow) for d in self.drops]),
            "tpp_records.csv": (["time_ns", "host", "session", "hops", "flags", "encapsulation", "slots"],
                                [r.csv_row() for r in self.tpp_records]),
        }

    def write_csv(self, out_dir: str | Path) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, (header, rows) in self.tables().items():
            path = out / name
            with path.open("w", newline="", encoding="utf-8") as f:
                w = csv.writer(f)
                w.writerow(header)
                w.writerows(rows)
            paths.append(path)
        return paths

    def digest(self) -> str:
        """sha256 всех таблиц и shadow log: равные прогоны дают равный хэш."""
        h = hashlib.sha256(f"seed={self.seed}".encode())
        for name, (header, rows) in self.tables().items():
            buf = io.StringIO()
            w = csv.writer(buf)
            w.writerow(header)
            w.writerows(rows)
            h.update(name.encode())
            h.update(buf.getvalue().encode())
        if self.shadow is not None:
            for e in self.shadow.entries:
                h.update(f"{e.seq},{e.time_ns},{e.switch_id},{e.address},{e.value},{e.source}\n".encode())
        return h.hexdigest()
