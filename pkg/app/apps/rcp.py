"""RCP*: управление скоростью потока по явной обратной связи, где
"маршрутизатор" RCP живёт не в коммутаторе, а на конечных хостах.

Цикл потока (раз в T):
  1. standalone-проба к приёмнику собирает по каждому звену
     (SwitchID, QueueSize, TX-Utilization, версия, R);
  2. хост считает новый R для звеньев, которые пора обновлять;
  3. вторая проба пишет (версия+1, R) через CSTORE/STORE; вернувшиеся
     pre-слоты показывают, где CSTORE проиграл гонку.

Скорость потока: alpha-агрегат R по звеньям пути; alpha = inf даёт
max-min, alpha = 1 пропорциональную справедливость.

R на проводе: 16 бит в долях C/65535; 0 (память ещё не тронута) читается
как R = C.
"""
from __future__ import annotations
import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from app.apps.base import AppContext, TppApp, grant_touched
from app.apps.exceptions import EmptyPath, StaleSamples
from app.config import CELL_BYTES
from app.endhost.executor import Probe, TppExecutor
from app.endhost.records import ExecutedTppRecord
from app.netsim.tracelog import TraceLog
from app.netsim.workload import FlowSource
from app.tpp.assembler import assemble
from app.tpp.models import Instruction, Opcode, TppProgram
from app.tpp.memory_map import resolve_address

log = logging.getLogger("apps.rcp")

WIRE_MAX = 0xFFFF
R_MIN_FRACTION = 1e-3
RTT_GAIN = 1 / 8

COLLECT_SOURCE = """
PUSH [Switch:SwitchID]
PUSH [Link:QueueSize]
PUSH [Link:TX-Utilization]
PUSH [Link:AppSpecific_0]
PUSH [Link:AppSpecific_1]
"""

VERSION = resolve_address("Link:AppSpecific_0").raw
RATE = resolve_address("Link:AppSpecific_1").raw
UPDATE_INSNS = (Instruction(Opcode.CSTORE, VERSION, 0, 1), Instruction(Opcode.STORE, RATE, 2))


def rcp_compute_rate(R: float, C: float, y: float, q: float, d: float, T: float,
                     a: float = 0.5, b: float = 0.25, r_min: Optional[float] = None) -> float:
    """R(t+T) = R(t) * (1 - (T/d) * (a*(y - C) + b*q/d) / C); q в байтах,
    скорости в бит/с, d и T в секундах. Результат зажат в [r_min, C]."""
    if C <= 0 or d <= 0 or R <= 0:
        raise ValueError(f"need C, d, R > 0 (C={C}, d={d}, R={R})")
    feedback = a * (y - C) + b * (q * 8) / d
    new = R * (1 - (T / d) * feedback / C)
    floor = C * R_MIN_FRACTION if r_min is None else r_min
    return min(C, max(floor, new))


def alpha_aggregate(rates: Sequence[float], alpha: float) -> float:
    """(sum R_i^-alpha)^(-1/alpha); alpha = inf даёт min."""
    if not rates:
        raise EmptyPath("no links to aggregate")
    if any(r <= 0 for r in rates):
        raise ValueError(f"rates must be positive: {list(rates)}")
    r = np.asarray(rates, dtype=float)
    if math.isinf(alpha):
        return float(r.min())
    m = r.min()
    return float(m * np.sum((r / m) ** -alpha) ** (-1 / alpha))


def to_wire(rate_bps: float, capacity_bps: float) -> int:
    return max(1, min(WIRE_MAX, round(rate_bps / capacity_bps * WIRE_MAX)))


def from_wire(word: int, capacity_bps: float) -> float:
    return capacity_bps if word == 0 else word / WIRE_MAX * capacity_bps


@dataclass(frozen=True)
class LinkSample:
    switch_id: int
    queue_cells: int
    tx_util: int
    version: int
    rate_word: int
    capacity_bps: float

    @property
    def rate_bps(self) -> float:
        return from_wire(self.rate_word, self.capacity_bps)

    @property
    def arrival_bps(self) -> float:
        return self.tx_util / WIRE_MAX * self.capacity_bps

    @property
    def queue_bytes(self) -> int:
        return self.queue_cells * CELL_BYTES


@dataclass
class RcpFlowState:
    capacities: list[float]
    rate: float
    alpha: float = math.inf
    a: float = 0.5
    b: float = 0.25
    T: float = 0.010
    d: Optional[float] = None
    samples: list[LinkSample] = field(default_factory=list)
    sample_time_ns: int = -1
    # номер звена -> (версия, когда впервые увидели)
    seen: dict[int, tuple[int, int]] = field(default_factory=dict)
    pending: dict[int, float] = field(default_factory=dict)     # звено -> R_new в полёте
    updates: int = 0
    failed_updates: int = 0

    @property
    def bottleneck(self) -> float:
        return min(self.capacities)

    def observe_rtt(self, rtt_ns: int) -> None:
        sample = rtt_ns / 1e9
        self.d = sample if self.d is None else (1 - RTT_GAIN) * self.d + RTT_GAIN * sample

    @property
    def control_d(self) -> float:
        # период управления не длиннее RTT, поэтому d не меньше T
        return max(self.d or self.T, self.T)

    def ingest(self, record: ExecutedTppRecord) -> list[LinkSample]:
        n = record.forward_hops if record.forward_hops is not None else len(self.capacities)
        hops = [h for h in record.slots[:n] if len(h) == 5]
        if not hops:
            raise EmptyPath(f"probe came back with no link samples (hops={record.hops})")
        self.samples = [LinkSample(*h, capacity_bps=c) for h, c in zip(hops, self.capacities)]
        self.sample_time_ns = record.time_ns
        self.observe_rtt(record.rtt_ns)
        return self.samples

    def due_links(self, now_ns: int) -> list[int]:
        """Звенья, которые этот поток обновит сейчас: версия не менялась
        не меньше T с тех пор, как поток её увидел."""
        due = []
        period = int(self.T * 1e9)
        for i, s in enumerate(self.samples):
            prev = self.seen.get(i)
            if prev is None or prev[0] != s.version:
                self.seen[i] = (s.version, now_ns)
                if prev is None:
                    due.append(i)
                continue
            if now_ns - prev[1] >= period:
                due.append(i)
        return due

    def link_rates(self) -> list[float]:
        return [self.pending.get(i, s.rate_bps) for i, s in enumerate(self.samples)]

    def aggregate(self) -> float:
        rate = alpha_aggregate(self.link_rates(), self.alpha)
        self.rate = max(self.bottleneck * R_MIN_FRACTION, min(rate, self.bottleneck))
        return self.rate


def rcp_update_phase(flow: RcpFlowState, now_ns: int, links: Optional[Sequence[int]] = None) -> TppProgram:
    """CSTORE версии и STORE нового R на каждом хопе; память хопа
    (V, V+1, R_new). Хопы вне links получают заведомо чужую версию и
    ничего не меняют."""
    if not flow.samples:
        raise StaleSamples("no collection samples yet")
    if now_ns - flow.sample_time_ns > int(flow.T * 1e9):
        raise StaleSamples(f"samples are {(now_ns - flow.sample_time_ns) / 1e6:.1f} ms old, T={flow.T * 1e3:.1f} ms")
    chosen = set(range(len(flow.samples)) if links is None else links)
    if not chosen:
        raise StaleSamples("no links are due for an update")
    d = flow.control_d
    T = min(flow.T, d)
    hop_values = {}
    flow.pending = {}
    for i, s in enumerate(flow.samples):
        if i in chosen:
            new = rcp_compute_rate(s.rate_bps, s.capacity_bps, s.arrival_bps, s.queue_bytes, d, T, flow.a, flow.b)
            flow.pending[i] = new
            hop_values[i] = [s.version, (s.version + 1) & WIRE_MAX, to_wire(new, s.capacity_bps)]
        else:
            stale = (s.version + 0x8000) & WIRE_MAX
            hop_values[i] = [stale, stale, s.rate_word]
    return TppProgram.create(UPDATE_INSNS, 3, len(flow.samples), hop_values)


def update_outcome(flow: RcpFlowState, record: ExecutedTppRecord) -> tuple[list[int], list[int]]:
    """(звенья, где CSTORE прошёл; звенья, где проиграл). Успех: в pre-слоте
    вернулась V+1."""
    ok, failed = [], []
    for i, rate in list(flow.pending.items()):
        hop = record.hop(i)
        want = (flow.samples[i].version + 1) & WIRE_MAX
        if hop is not None and hop[0] == want:
            ok.append(i)
        else:
            failed.append(i)
            flow.pending.pop(i)
    return ok, failed


@dataclass
class RateSample:
    time_ns: int
    flow: str
    rate_bps: float


class RcpController:
    """Контур одного потока на хосте-отправителе."""

    def __init__(self, app: "RcpApp", source: FlowSource, executor: TppExecutor, flow: RcpFlowState,
                 collect: TppProgram) -> None:
        self.app = app
        self.source = source
        self.executor = executor
        self.flow = flow
        self.collect = collect
        self.sim = executor.sim
        self.retries = 0

    def start(self, at_ns: int) -> None:
        self.sim.at(at_ns, self._cycle)

    def _cycle(self) -> None:
        self.retries = 0
        self._probe()
        self.sim.after(int(self.flow.T * 1e9), self._cycle)

    def _probe(self) -> None:
        self.executor.submit(self.collect, self.source.spec.dst, max_retries=0,
                             timeout_ns=int(self.flow.T * 1e9), on_done=self._on_samples)

    def _on_samples(self, probe: Probe) -> None:
        if probe.record is None:
            return
        now = self.sim.now
        try:
            self.flow.ingest(probe.record)
        except EmptyPath as e:
            log.debug(f"[RCP] {self.source.name}: {e}")
            return
        due = self.flow.due_links(now)
        if not due:
            self._apply(now)
            return
        program = self.app.admit(rcp_update_phase(self.flow, now, due))
        self.executor.submit(program, self.source.spec.dst, max_retries=0, timeout_ns=int(self.flow.T * 1e9),
                             on_done=self._on_update)

    def _on_update(self, probe: Probe) -> None:
        now = self.sim.now
        if probe.record is None:
            self.flow.pending = {}
            return
        ok, failed = update_outcome(self.flow, probe.record)
        self.flow.updates += len(ok)
        self.flow.failed_updates += len(failed)
        for i in ok:
            self.flow.seen[i] = ((self.flow.samples[i].version + 1) & WIRE_MAX, now)
        self._apply(now)
        if failed and self.retries < self.app.max_retries:
            # проиграли гонку: повторяем со свежими замерами
            self.retries += 1
            self._probe()

    def _apply(self, now: int) -> None:
        rate = self.flow.aggregate()
        self.flow.pending = {}
        self.source.rate_bps = rate
        self.app.rates.append(RateSample(now, self.source.name, rate))


class RcpApp(TppApp):
    name = "rcp"

    def __init__(self, appid: int = 2, alpha: float = math.inf, a: float = 0.5, b: float = 0.25,
                 period_ms: float = 10.0, initial_rate_mbps: float = 1.0, max_hops: int = 8,
                 max_retries: int = 1) -> None:
        self.appid = appid
        self.alpha = alpha
        self.a, self.b = a, b
        self.T = period_ms / 1000
        self.initial_rate = initial_rate_mbps * 1_000_000
        self.max_hops = max_hops
        self.max_retries = max_retries
        self.rates: list[RateSample] = []
        self.controllers: dict[str, RcpController] = {}
        self.collect = assemble(f".hops {max_hops}\n.standalone\n{COLLECT_SOURCE}")
        self._ctx: Optional[AppContext] = None

    def admit(self, program: TppProgram) -> TppProgram:
        return self._ctx.cp.admit(program, self.appid)

    def install(self, ctx: AppContext) -> None:
        self._ctx = ctx
        reg = ctx.cp.register_app(self.appid, self.name)
        grant_touched(ctx.cp, self.appid, self.collect)
        grant_touched(ctx.cp, self.appid, TppProgram.create(UPDATE_INSNS, 3, 1))
        collect = ctx.cp.admit(self.collect, self.appid)
        topo = ctx.sim.topo
        for name, source in sorted(ctx.sources.items()):
            spec = source.spec
            if spec.dst == "*":
                continue
            caps = [float(c) for c in topo.path_capacities(spec.src, spec.dst, spec.vlan)]
            if not caps:
                raise EmptyPath(f"flow {name}: no switches between {spec.src} and {spec.dst}")
            flow = RcpFlowState(caps, self.initial_rate, self.alpha, self.a, self.b, self.T)
            source.rate_bps = self.initial_rate
            executor = TppExecutor(ctx.sim, ctx.shims[spec.src], reg.session_id)
            ctl = RcpController(self, source, executor, flow, collect)
            ctl.start(int(spec.start_ms * 1_000_000))
            self.controllers[name] = ctl
        log.info(f"[RCP] {len(self.controllers)} flows, alpha={self.alpha}, a={self.a}, b={self.b}, "
                 f"T={self.T * 1e3:.1f}ms")

    def mean_rates(self, since_ns: int) -> dict[str, float]:
        out = {}
        for name in self.controllers:
            values = [r.rate_bps for r in self.rates if r.flow == name and r.time_ns >= since_ns]
            out[name] = float(np.mean(values)) if values else 0.0
        return out

    def throughput(self, trace: TraceLog, since_ns: int) -> dict[str, float]:
        window = max(1, trace.end_ns - since_ns) / 1e9
        out = {name: 0.0 for name in self.controllers}
        for d in trace.deliveries:
            if d.flow in out and d.time_ns >= since_ns:
                out[d.flow] += d.size * 8 / window
        return out

    def summary(self) -> dict[str, Any]:
        end = self._ctx.sim.now if self._ctx else 0
        since = end - end // 3
        return {
            "alpha": "inf" if math.isinf(self.alpha) else self.alpha,
            "final_third_mean_rate_mbps": {k: round(v / 1e6, 3) for k, v in self.mean_rates(since).items()},
            "final_third_throughput_mbps": {k: round(v / 1e6, 3)
                                            for k, v in self.throughput(self._ctx.sim.log, since).items()},
            "updates": {k: c.flow.updates for k, c in self.controllers.items()},
            "failed_updates": {k: c.flow.failed_updates for k, c in self.controllers.items()},
        }

    def write_outputs(self, out_dir: Path) -> list[Path]:
        path = Path(out_dir) / "rcp_rates.csv"
        with path.open("w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(["time_ns", "flow", "rate_bps"])
            for r in self.rates:
                w.writerow([r.time_ns, r.flow, f"{r.rate_bps:.1f}"])
        return [path]

    def check(self, trace: TraceLog) -> list[str]:
        problems = []
        for name, ctl in self.controllers.items():
            if not 0 < ctl.flow.rate <= ctl.flow.bottleneck * (1 + 1e-9):
                problems.append(f"{name}: rate {ctl.flow.rate:.0f} outside (0, {ctl.flow.bottleneck:.0f}]")
        return problems
