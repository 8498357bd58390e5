"""Bitmap-скетч числа уникальных адресов назначения на каждом звене.

TPP даёт только контекст маршрутизации (SwitchID, OutputPort); хеширует
и ставит биты приёмник. Раз в push_interval хосты отправляют коллектору
изменившиеся битмапы, коллектор сливает их OR'ом. Оценка b*ln(b/z), z
число нулевых бит.
"""
from __future__ import annotations
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import mmh3
import numpy as np

from app.apps.base import AppContext, TppApp, grant_touched
from app.apps.exceptions import Saturated
from app.endhost.records import ExecutedTppRecord
from app.netsim.tracelog import TraceLog
from app.tpp.assembler import assemble
from app.tpp.codec import encode
from app.tpp.models import TppProgram

log = logging.getLogger("apps.sketch")

SKETCH_SOURCE = """
PUSH [Switch:SwitchID]
PUSH [PacketMetadata:OutputPort]
"""

LinkKey = tuple[int, int]       # (switch_id, port)


def sketch_program(hops: int = 5) -> TppProgram:
    return assemble(f".hops {hops}\n{SKETCH_SOURCE}")


def sketch_index(value: int, bits: int, seed: int) -> int:
    h, _ = mmh3.hash64(value.to_bytes(4, "big"), seed, signed=False)
    return h % bits


def sketch_estimate(bitmap: np.ndarray) -> float:
    b = int(bitmap.size)
    z = b - int(np.count_nonzero(bitmap))
    if z == 0:
        raise Saturated(f"all {b} bits are set")
    return b * math.log(b / z)


@dataclass
class BitmapSketch:
    bits: int = 1024
    seed: int = 0
    maps: dict[LinkKey, np.ndarray] = field(default_factory=dict)
    dirty: set[LinkKey] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.bits < 1:
            raise ValueError(f"sketch needs at least one bit, got {self.bits}")

    def bitmap(self, key: LinkKey) -> np.ndarray:
        m = self.maps.get(key)
        if m is None:
            m = self.maps[key] = np.zeros(self.bits, dtype=bool)
        return m

    def add(self, key: LinkKey, value: int) -> None:
        m = self.bitmap(key)
        i = sketch_index(value, self.bits, self.seed)
        if not m[i]:
            m[i] = True
            self.dirty.add(key)

    def estimate(self, key: LinkKey) -> float:
        return sketch_estimate(self.bitmap(key))

    def merge(self, other: "BitmapSketch", keys: Optional[Iterable[LinkKey]] = None) -> None:
        if (other.bits, other.seed) != (self.bits, self.seed):
            raise ValueError("cannot merge sketches with different size or hash seed")
        for key in (other.maps if keys is None else keys):
            np.logical_or(self.bitmap(key), other.maps[key], out=self.maps[key])

    def take_dirty(self) -> set[LinkKey]:
        dirty, self.dirty = self.dirty, set()
        return dirty


def sketch_update(s: BitmapSketch, record: ExecutedTppRecord, dest_ip: int) -> int:
    """Ставит бит dest_ip во всех (switch, port) пути; возвращает число хопов."""
    n = 0
    for hop in record.slots:
        if len(hop) != 2:
            continue
        s.add((hop[0], hop[1]), dest_ip)
        n += 1
    return n


class SketchApp(TppApp):
    name = "sketch"

    def __init__(self, appid: int = 5, bits: int = 1024, hops: int = 5, sample_frequency: int = 10,
                 push_interval_ms: float = 10_000.0, seed: int = 0, filter: Optional[dict] = None) -> None:
        self.appid = appid
        self.bits = bits
        self.program = sketch_program(hops)
        self.sample_frequency = sample_frequency
        self.push_interval_ns = int(push_interval_ms * 1_000_000)
        self.seed = seed
        self.filter = filter if filter is not None else {"proto": 17}
        self.local: dict[str, BitmapSketch] = {}
        self.collector: Optional[BitmapSketch] = None
        self.pushes = 0
        self.pushed_maps = 0
        self._ctx: Optional[AppContext] = None

    def install(self, ctx: AppContext) -> None:
        self._ctx = ctx
        self.seed = self.seed or ctx.seed
        self.collector = BitmapSketch(self.bits, self.seed)
        reg = ctx.cp.register_app(self.appid, self.name)
        grant_touched(ctx.cp, self.appid, self.program)
        ctx.cp.add_tpp(self.filter, encode(self.program), self.sample_frequency, 0, self.appid)
        topo = ctx.sim.topo
        for host, shim in ctx.shims.items():
            sketch = self.local[host] = BitmapSketch(self.bits, self.seed)
            dst_ip = topo.host_ip(host)
            shim.subscribe(reg.session_id, lambda rec, s=sketch, ip=dst_ip: sketch_update(s, rec, ip))
        ctx.sim.every(self.push_interval_ns, self.push)

    def push(self) -> None:
        """Коллектор получает только битмапы, изменившиеся с прошлого раза."""
        for sketch in self.local.values():
            dirty = sketch.take_dirty()
            if dirty:
                self.collector.merge(sketch, dirty)
                self.pushed_maps += len(dirty)
        self.pushes += 1
        log.debug(f"[SKETCH] push {self.pushes}: {self.pushed_maps} bitmaps merged so far")

    def exact_counts(self, trace: TraceLog) -> dict[LinkKey, int]:
        """Точное число адресов назначения по тем же пакетам (оракул)."""
        seen: dict[LinkKey, set[int]] = defaultdict(set)
        topo = self._ctx.sim.topo
        for rec in trace.tpp_records:
            if rec.session_id != self._ctx.cp.app(self.appid).session_id:
                continue
            for p in rec.path_log:
                if p.out_port is not None:
                    seen[(p.switch_id, p.out_port)].add(topo.host_ip(rec.host))
        return {k: len(v) for k, v in seen.items()}

    def report(self) -> dict[str, Any]:
        self.push()
        exact = self.exact_counts(self._ctx.sim.log)
        links = {}
        for key in sorted(self.collector.maps):
            try:
                est: Optional[float] = self.collector.estimate(key)
            except Saturated:
                est = None
            true = exact.get(key, 0)
            links[f"{key[0]}:{key[1]}"] = {
                "estimate": None if est is None else round(est, 3),
                "exact": true,
                "rel_error": None if est is None or not true else round(abs(est - true) / true, 4),
            }
        return {"bits": self.bits, "pushes": self.pushes, "pushed_maps": self.pushed_maps, "links": links}

    def summary(self) -> dict[str, Any]:
        rep = self.report()
        errors = [v["rel_error"] for v in rep["links"].values() if v["rel_error"] is not None]
        return {"links": len(rep["links"]), "pushes": rep["pushes"],
                "mean_rel_error": round(float(np.mean(errors)), 4) if errors else None}

    def write_outputs(self, out_dir: Path) -> list[Path]:
        path = Path(out_dir) / "sketch_report.json"
        path.write_text(json.dumps(self.report(), indent=2), encoding="utf-8")
        return [path]

    def check(self, trace: TraceLog) -> list[str]:
        # OR-слияние точно: битмап коллектора равен объединению локальных
        self.push()
        union = BitmapSketch(self.bits, self.seed)
        for sketch in self.local.values():
            union.merge(sketch)
        problems = []
        for key, m in union.maps.items():
            if not np.array_equal(m, self.collector.bitmap(key)):
                problems.append(f"collector bitmap for {key} differs from the union of host bitmaps")
        return problems

