"""CONGA*: балансировка нагрузки по flowlet'ам с конечных хостов.

Сеть даёт только multipath-группы, выбирающие порт по VLAN; хост
выбирает путь тегом. Раз в probe_interval хост шлёт по каждому пути
standalone-пробу (Link:ID, TX-Utilization, оба слова TX-Bytes) и держит таблицу
путь -> метрика m_i = max или sum утилизации switch-switch звеньев.
Новый flowlet уходит на путь с наименьшей метрикой.
"""
from __future__ import annotations
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

import mmh3
import numpy as np

from app.apps.base import AppContext, TppApp, grant_touched
from app.endhost.executor import Probe, TppExecutor
from app.endhost.records import ExecutedTppRecord
from app.netsim.packet import Packet
from app.netsim.tracelog import TraceLog
from app.netsim.workload import FlowSource
from app.tpp.assembler import assemble
from app.tpp.codec import STANDALONE_OVERHEAD
from app.tpp.models import TppProgram

log = logging.getLogger("apps.conga")

CONGA_SOURCE = """
PUSH [Link:ID]
PUSH [Link:TX-Utilization]
PUSH [Link:TX-Bytes]
PUSH [Link:TX-Bytes-Hi]
"""

UTIL_FULL = 0xFFFF
MAX_PATHS = 16


class MetricMode(str, Enum):
    MAX = "max"
    SUM = "sum"


class Baseline(str, Enum):
    CONGA = "conga"
    ECMP = "ecmp"


def conga_program(hops: int) -> TppProgram:
    return assemble(f".hops {hops}\n.standalone\n{CONGA_SOURCE}")


def conga_metric(hops: Iterable[tuple[int, float]], mode: MetricMode | str = MetricMode.MAX,
                 exclude: Iterable[int] = ()) -> float:
    """hops: (link_id, утилизация 0..1). Звенья из exclude (хост-коммутатор)
    не считаются; нет замеров: 0, путь считается свободным."""
    skip = set(exclude)
    values = [u for link, u in hops if link not in skip]
    if not values:
        return 0.0
    return float(max(values) if MetricMode(mode) == MetricMode.MAX else sum(values))


@dataclass
class Flowlet:
    path: int
    last_ns: int
    count: int = 1


@dataclass
class CongaPathTable:
    paths: int
    mode: MetricMode = MetricMode.MAX
    gap_ns: int = 100_000
    metrics: dict[int, float] = field(default_factory=dict)
    updated_ns: dict[int, int] = field(default_factory=dict)
    flowlets: dict[str, Flowlet] = field(default_factory=dict)

    def update(self, path: int, metric: float, now_ns: int) -> None:
        if not 0 <= path < self.paths:
            raise ValueError(f"path {path} out of range 0..{self.paths - 1}")
        self.metrics[path] = metric
        self.updated_ns[path] = now_ns

    def metric(self, path: int) -> float:
        return self.metrics.get(path, 0.0)

    def best(self) -> int:
        # при равенстве меньший номер пути
        return min(range(self.paths), key=lambda p: (self.metric(p), p))


def conga_select(flow_key: str, now_ns: int, table: CongaPathTable) -> int:
    fl = table.flowlets.get(flow_key)
    if fl is not None and now_ns - fl.last_ns <= table.gap_ns:
        fl.last_ns = now_ns
        return fl.path
    path = table.best()
    if fl is None:
        table.flowlets[flow_key] = Flowlet(path, now_ns)
    else:
        fl.path, fl.last_ns = path, now_ns
        fl.count += 1
    return path


def path_vlans(topo, src: str, dst: str) -> list[int]:
    """VLAN, по одному на каждый различимый путь src -> dst; номер пути =
    позиция в списке."""
    seen: dict[tuple, int] = {}
    for vlan in range(MAX_PATHS):
        key = tuple((h.switch, h.out_port) for h in topo.path(src, dst, vlan))
        seen.setdefault(key, vlan)
    return sorted(seen.values())


@dataclass
class LinkCounter:
    tx_bytes: int
    time_ns: int


def tx_rate_bps(prev: Optional[LinkCounter], tx_bytes: int, now_ns: int) -> Optional[float]:
    """Скорость по приросту 32-битного TX-Bytes с прошлой пробы."""
    if prev is None or now_ns <= prev.time_ns:
        return None
    delta = (tx_bytes - prev.tx_bytes) & 0xFFFFFFFF
    return delta * 8 / ((now_ns - prev.time_ns) / 1e9)


class CongaAgent:
    """Агент на хосте-отправителе одного потока."""

    def __init__(self, app: "CongaApp", source: FlowSource, executor: Optional[TppExecutor],
                 vlans: list[int], program: Optional[TppProgram]) -> None:
        self.app = app
        self.source = source
        self.executor = executor
        self.vlans = vlans
        self.program = program
        self.sim = source.sim
        self.table = CongaPathTable(len(vlans), app.mode, app.gap_ns)
        self.counters: dict[int, LinkCounter] = {}
        self.rtt_ns: Optional[float] = None
        self.window_bytes = [0] * len(vlans)
        self.own_bps = [0.0] * len(vlans)
        self.path_bytes = [0] * len(vlans)
        self.probes = 0
        self.probe_bytes = 0
        topo = self.sim.topo
        self.capacity = {p.link_id: p.capacity_bps for ports in topo.ports.values() for p in ports}
        self.host_links = topo.host_link_ids()

    def start(self, at_ns: int) -> None:
        self.source.tagger = self.tag
        if self.program is not None and self.executor is not None:
            self.sim.every(self.app.probe_interval_ns, self._probe_all, start_ns=at_ns)

    # --- выбор пути ------------------------------------------------------------

    def tag(self, source: FlowSource, pkt: Packet, now: int) -> None:
        if self.app.baseline == Baseline.ECMP:
            path = mmh3.hash(f"{source.name}:{pkt.seq}", self.app.seed, signed=False) % len(self.vlans)
        else:
            path = conga_select(source.name, now, self.table)
        pkt.headers = replace(pkt.headers, vlan=self.vlans[path])
        self.window_bytes[path] += pkt.frame_bytes
        self.path_bytes[path] += pkt.frame_bytes

    # --- пробы -----------------------------------------------------------------

    def _probe_all(self) -> None:
        interval = self.app.probe_interval_ns / 1e9
        self.own_bps = [b * 8 / interval for b in self.window_bytes]
        self.window_bytes = [0] * len(self.vlans)
        for path, vlan in enumerate(self.vlans):
            self.probes += 1
            self.probe_bytes += 2 * (STANDALONE_OVERHEAD + self.program.size)
            self.executor.submit(self.program, self.source.spec.dst, max_retries=0,
                                 timeout_ns=self.app.probe_interval_ns, vlan=vlan,
                                 on_done=lambda probe, path=path: self._on_probe(path, probe))

    def _on_probe(self, path: int, probe: Probe) -> None:
        if probe.record is None:
            return
        rec = probe.record
        rtt = rec.rtt_ns
        self.rtt_ns = rtt if self.rtt_ns is None else 0.875 * self.rtt_ns + 0.125 * rtt
        if self.app.gap_us is None:
            self.table.gap_ns = int(2 * self.rtt_ns)
        hops = self.link_utilizations(rec, path)
        self.table.update(path, conga_metric(hops, self.table.mode, self.host_links), rec.time_ns)

    def link_utilizations(self, rec: ExecutedTppRecord, path: int) -> list[tuple[int, float]]:
        """Утилизация звена: больше из окна коммутатора и прироста TX-Bytes с
        прошлой пробы; собственная доля потока на этом пути вычитается."""
        n = rec.forward_hops if rec.forward_hops is not None else len(rec.slots)
        out = []
        for hop in rec.slots[:n]:
            if len(hop) != 4:
                continue
            link_id, util_word, lo, hi = hop
            tx_bytes = (hi << 16) | lo
            cap = self.capacity.get(link_id)
            if not cap:
                continue
            util = util_word / UTIL_FULL
            rate = tx_rate_bps(self.counters.get(link_id), tx_bytes, rec.time_ns)
            if rate is not None:
                util = max(util, rate / cap)
            self.counters[link_id] = LinkCounter(tx_bytes, rec.time_ns)
            if self.app.discount_own:
                util -= self.own_bps[path] / cap
            out.append((link_id, float(np.clip(util, 0.0, 1.0))))
        return out


def offered_mbps(source: FlowSource) -> float:
    """Средняя нагрузка потока: rate_mbps или load от ёмкости NIC."""
    s = source.spec
    if s.rate_mbps:
        return float(s.rate_mbps)
    if s.load:
        return s.load * source.sim.topo.ports[s.src][0].capacity_bps / 1e6
    return 0.0


class CongaApp(TppApp):
    name = "conga"

    def __init__(self, appid: int = 4, mode: str = "max", baseline: str = "conga", probe_interval_ms: float = 4.0,
                 gap_us: Optional[float] = None, discount_own: bool = True, seed: int = 0) -> None:
        self.appid = appid
        self.mode = MetricMode(mode)
        self.baseline = Baseline(baseline)
        self.probe_interval_ns = int(probe_interval_ms * 1_000_000)
        self.gap_us = gap_us
        self.gap_ns = int(gap_us * 1000) if gap_us is not None else 100_000
        self.discount_own = discount_own
        self.seed = seed
        self.agents: dict[str, CongaAgent] = {}
        self._ctx: Optional[AppContext] = None

    def install(self, ctx: AppContext) -> None:
        self._ctx = ctx
        self.seed = self.seed or ctx.seed
        reg = ctx.cp.register_app(self.appid, self.name)
        topo = ctx.sim.topo
        granted = False
        for name, source in sorted(ctx.sources.items()):
            spec = source.spec
            if spec.dst == "*":
                continue
            vlans = path_vlans(topo, spec.src, spec.dst)
            if len(vlans) < 2:
                continue
            program = executor = None
            if self.baseline == Baseline.CONGA:
                program = conga_program(topo.switch_hops(spec.src, spec.dst) or 1)
                if not granted:
                    grant_touched(ctx.cp, self.appid, program)
                    granted = True
                program = ctx.cp.admit(program, self.appid)
                executor = TppExecutor(ctx.sim, ctx.shims[spec.src], reg.session_id)
            agent = CongaAgent(self, source, executor, vlans, program)
            agent.start(int(spec.start_ms * 1_000_000))
            self.agents[name] = agent
        log.info(f"[CONGA] {self.baseline.value}: {len(self.agents)} steered flows, mode={self.mode.value}")

    def throughput(self, trace: TraceLog, since_ns: int) -> dict[str, float]:
        window = max(1, trace.end_ns - since_ns) / 1e9
        out: dict[str, float] = {name: 0.0 for name in self._ctx.sources}
        for d in trace.deliveries:
            if d.flow in out and d.time_ns >= since_ns:
                out[d.flow] += d.size * 8 / window
        return out

    def max_link_utilization(self, trace: TraceLog, since_ns: int) -> float:
        host_links = self._ctx.sim.topo.host_link_ids()
        per_link: dict[int, list[int]] = {}
        for s in trace.util_samples:
            if s.time_ns >= since_ns and s.link_id not in host_links:
                per_link.setdefault(s.link_id, []).append(s.tx_util)
        if not per_link:
            return 0.0
        return max(float(np.mean(v)) / UTIL_FULL for v in per_link.values())

    def summary(self) -> dict[str, Any]:
        trace = self._ctx.sim.log
        end = self._ctx.sim.now
        since = end // 2
        tput = self.throughput(trace, since)
        delivered = sum(d.size for d in trace.deliveries)
        probe_bytes = sum(a.probe_bytes for a in self.agents.values())
        demand = sum(offered_mbps(s) for s in self._ctx.sources.values())
        return {
            "baseline": self.baseline.value,
            "mode": self.mode.value,
            "throughput_mbps": {k: round(v / 1e6, 3) for k, v in tput.items()},
            "aggregate_mbps": round(sum(tput.values()) / 1e6, 3),
            "demand_mbps": demand,
            "max_link_utilization": round(self.max_link_utilization(trace, since), 4),
            "probe_overhead": round(probe_bytes / delivered, 5) if delivered else 0.0,
            "path_share": {k: [round(b / max(1, sum(a.path_bytes)), 4) for b in a.path_bytes]
                           for k, a in self.agents.items()},
            "flowlets": {k: sum(f.count for f in a.table.flowlets.values()) for k, a in self.agents.items()},
        }

    def write_outputs(self, out_dir: Path) -> list[Path]:
        path = Path(out_dir) / "conga_summary.json"
        path.write_text(json.dumps(self.summary(), indent=2), encoding="utf-8")
        return [path]

    def check(self, trace: TraceLog) -> list[str]:
        problems = []
        for name, agent in self.agents.items():
            for path, m in agent.table.metrics.items():
                if m < 0 or (self.mode == MetricMode.MAX and m > 1):
                    problems.append(f"{name}: path {path} metric {m} out of range")
        return problems
