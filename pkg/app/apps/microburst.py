"""Монитор микробёрстов: каждый пакет собирает (SwitchID, OutputPort,
QueueOccupancy) на каждом хопе; приёмник группирует замеры по очереди.
Значения сырые, по одному на пакет, без усреднения."""
from __future__ import annotations
import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from app.apps.base import AppContext, TppApp, grant_touched
from app.endhost.records import ExecutedTppRecord
from app.netsim.tracelog import TraceLog
from app.tpp.assembler import assemble
from app.tpp.codec import encode
from app.tpp.memory_map import MAX_QUEUES_PER_LINK, QUEUE_ABS_BASE, QUEUE_STRIDE
from app.tpp.models import TppFlags, TppProgram

log = logging.getLogger("apps.microburst")

MICROBURST_SOURCE = """
PUSH [Switch:SwitchID]
PUSH [PacketMetadata:OutputPort]
PUSH [Queue:QueueOccupancy]
"""

QueueKey = tuple[int, int]      # (switch_id, port)


def microburst_program(hops: int = 5) -> TppProgram:
    return assemble(f".hops {hops}\n{MICROBURST_SOURCE}")


@dataclass
class MicroburstReport:
    series: dict[QueueKey, list[tuple[int, int]]] = field(default_factory=dict)   # (time_ns, cells)
    malformed: int = 0

    @property
    def samples(self) -> int:
        return sum(len(s) for s in self.series.values())

    def cdf(self, key: QueueKey) -> tuple[np.ndarray, np.ndarray]:
        return empirical_cdf([v for _, v in self.series.get(key, [])])

    def fraction_empty(self, key: QueueKey) -> float:
        values = [v for _, v in self.series.get(key, [])]
        return float(np.mean(np.asarray(values) == 0)) if values else 1.0


def empirical_cdf(values: Iterable[int]) -> tuple[np.ndarray, np.ndarray]:
    """(x, F(x)) по уникальным значениям."""
    arr = np.sort(np.asarray(list(values), dtype=np.int64))
    if arr.size == 0:
        return arr, np.asarray([], dtype=float)
    xs, counts = np.unique(arr, return_counts=True)
    return xs, np.cumsum(counts) / arr.size


def microburst_ingest(records: Iterable[ExecutedTppRecord]) -> MicroburstReport:
    series: dict[QueueKey, list[tuple[int, int]]] = defaultdict(list)
    malformed = 0
    for rec in records:
        if rec.flags & TppFlags.ERROR or rec.truncated:
            malformed += 1
            continue
        for hop in rec.slots:
            if len(hop) != 3:
                malformed += 1
                continue
            switch_id, port, cells = hop
            series[(switch_id, port)].append((rec.time_ns, cells))
    for s in series.values():
        s.sort()
    return MicroburstReport(dict(sorted(series.items())), malformed)


def queue_occupancy_address(port: int, queue: int) -> int:
    return QUEUE_ABS_BASE + (port * MAX_QUEUES_PER_LINK + queue) * QUEUE_STRIDE


def fidelity_mismatches(records: Iterable[ExecutedTppRecord], trace: TraceLog) -> tuple[int, list[str]]:
    """Сверка каждого замера с shadow log на момент прохода пакета.
    Возвращает (число проверенных замеров, описания расхождений)."""
    shadow = trace.shadow
    if shadow is None:
        return 0, ["shadow log is not recorded"]
    checked, problems = 0, []
    for rec in records:
        for i, (hop, path) in enumerate(zip(rec.slots, rec.path_log)):
            if len(hop) != 3 or path.out_port is None:
                continue
            checked += 1
            want = shadow.value_at(path.switch_id, queue_occupancy_address(path.out_port, path.queue or 0),
                                   path.shadow_seq)
            got = (hop[0], hop[1], hop[2])
            if got != (path.switch_id, path.out_port, want):
                problems.append(f"uid={rec.uid} hop={i}: tpp={got} shadow={(path.switch_id, path.out_port, want)}")
    return checked, problems


class MicroburstApp(TppApp):
    name = "microburst"

    def __init__(self, appid: int = 1, hops: int = 5, sample_frequency: int = 1, priority: int = 0) -> None:
        self.appid = appid
        self.program = microburst_program(hops)
        self.sample_frequency = sample_frequency
        self.priority = priority
        self.records: list[ExecutedTppRecord] = []
        self.report = MicroburstReport()
        self._ctx: AppContext | None = None

    def install(self, ctx: AppContext) -> None:
        self._ctx = ctx
        reg = ctx.cp.register_app(self.appid, self.name)
        grant_touched(ctx.cp, self.appid, self.program)
        ctx.cp.add_tpp({"proto": 17}, encode(self.program), self.sample_frequency, self.priority, self.appid)
        for shim in ctx.shims.values():
            shim.subscribe(reg.session_id, self.records.append)

    def summary(self) -> dict[str, Any]:
        self.report = microburst_ingest(self.records)
        stamped = sum(s.counters["stamped"] for s in self._ctx.shims.values()) if self._ctx else 0
        mtu = sum(s.counters["mtu_exceeded"] for s in self._ctx.shims.values()) if self._ctx else 0
        return {
            "records": len(self.records),
            "samples": self.report.samples,
            "malformed": self.report.malformed,
            "stamped": stamped,
            "mtu_exceeded": mtu,
            "queues": {f"{sid}:{port}": {"samples": len(s), "fraction_empty": round(self.report.fraction_empty((sid, port)), 4),
                                         "max_cells": max(v for _, v in s)}
                       for (sid, port), s in self.report.series.items()},
        }

    def write_outputs(self, out_dir: Path) -> list[Path]:
        path = Path(out_dir) / "microburst_cdf.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["switch_id", "port", "cells", "cdf"])
            for key in self.report.series:
                xs, fs = self.report.cdf(key)
                for x, fx in zip(xs, fs):
                    w.writerow([key[0], key[1], int(x), f"{fx:.6f}"])
        return [path]

    def check(self, trace: TraceLog) -> list[str]:
        checked, problems = fidelity_mismatches(self.records, trace)
        log.info(f"[MICROBURST] fidelity: {checked} samples, {len(problems)} mismatches")
        return problems[:20]
