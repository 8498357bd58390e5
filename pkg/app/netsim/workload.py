"""Нагрузка: UDP-потоки с ограничением скорости, bulk-передачи и
all-to-all сообщения с пуассоновскими приходами."""
from __future__ import annotations
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Callable, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from app.config import MTU
from app.netsim.exceptions import ParseError
from app.netsim.packet import Headers, Packet

if TYPE_CHECKING:
    from app.netsim.simulator import Simulator

log = logging.getLogger("netsim.workload")

NS = 1_000_000_000


class FlowType(str, Enum):
    UDP = "rate-limited-udp"
    BULK = "bulk"
    MESSAGES = "messages"


class FlowSpec(BaseModel):
    name: Optional[str] = None
    src: str
    dst: str = "*"
    type: FlowType = FlowType.UDP
    start_ms: float = Field(default=0.0, ge=0)
    stop_ms: Optional[float] = None
    rate_mbps: Optional[float] = Field(default=None, gt=0)
    size_bytes: Optional[int] = Field(default=None, gt=0)
    load: Optional[float] = Field(default=None, gt=0, le=1)
    packet_bytes: int = Field(default=1400, ge=64)
    vlan: int = Field(default=0, ge=0, le=4095)
    src_port: int = 10000
    dst_port: int = 20000

    @model_validator(mode="after")
    def _check(self) -> "FlowSpec":
        if self.packet_bytes > MTU:
            raise ValueError(f"packet_bytes {self.packet_bytes} exceeds MTU {MTU}")
        if self.type == FlowType.UDP and self.rate_mbps is None:
            raise ValueError("rate-limited-udp flow needs rate_mbps")
        if self.type == FlowType.BULK and self.size_bytes is None:
            raise ValueError("bulk flow needs size_bytes")
        if self.type == FlowType.MESSAGES and (self.size_bytes is None or self.load is None):
            raise ValueError("messages flow needs size_bytes and load")
        if self.type != FlowType.MESSAGES and self.dst == "*":
            raise ValueError(f"{self.type.value} flow needs a dst host")
        return self


class WorkloadSpec(BaseModel):
    name: str = "workload"
    flows: list[FlowSpec] = []


def load_workload(source: Union[WorkloadSpec, dict, str, Path]) -> WorkloadSpec:
    if isinstance(source, WorkloadSpec):
        return source
    try:
        if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
            source = Path(source).read_text(encoding="utf-8")
        if isinstance(source, str):
            source = json.loads(source)
        return WorkloadSpec.model_validate(source)
    except (OSError, ValueError, ValidationError) as e:
        raise ParseError(f"bad workload: {e}") from e


Tagger = Callable[["FlowSource", Packet, int], None]


class FlowSource:
    """Источник одного потока. rate_bps меняется на лету (RCP*); tagger
    может выставить заголовки пакета перед отправкой (VLAN для CONGA*)."""

    def __init__(self, sim: "Simulator", spec: FlowSpec, name: str, rng: np.random.Generator) -> None:
        self.sim = sim
        self.spec = spec
        self.name = name
        self.rng = rng
        self.rate_bps = (spec.rate_mbps or 0) * 1_000_000
        self.vlan = spec.vlan
        self.seq = 0
        self.sent_bytes = 0
        self.tagger: Optional[Tagger] = None
        self._stop_ns = int(spec.stop_ms * 1_000_000) if spec.stop_ms is not None else None
        if spec.type == FlowType.BULK:
            self.rate_bps = sim.topo.ports[spec.src][0].capacity_bps

    def start(self) -> None:
        start_ns = int(self.spec.start_ms * 1_000_000)
        if self.spec.type == FlowType.MESSAGES:
            self.sim.at(start_ns + self._message_gap(), self._message)
        else:
            self.sim.at(start_ns, self._tick)

    def _stopped(self) -> bool:
        return self._stop_ns is not None and self.sim.now >= self._stop_ns

    def _packet(self, dst: str, nbytes: int) -> Packet:
        topo = self.sim.topo
        s = self.spec
        self.seq += 1
        headers = Headers(topo.host_ip(s.src), topo.host_ip(dst), src_port=s.src_port, dst_port=s.dst_port,
                          vlan=self.vlan)
        pkt = Packet(self.sim.next_uid(), headers, nbytes, flow=self.name, seq=self.seq, src=s.src, dst=dst,
                     birth_ns=self.sim.now)
        if self.tagger is not None:
            self.tagger(self, pkt, self.sim.now)
        return pkt

    def _tick(self) -> None:
        if self._stopped():
            return
        s = self.spec
        nbytes = s.packet_bytes
        if s.type == FlowType.BULK:
            left = s.size_bytes - self.sent_bytes
            if left <= 0:
                return
            nbytes = max(64, min(nbytes, left))
        self.sim.send(s.src, self._packet(s.dst, nbytes))
        self.sent_bytes += nbytes
        if self.rate_bps > 0:
            self.sim.after(max(1, int(nbytes * 8 * NS / self.rate_bps)), self._tick)

    def _message_gap(self) -> int:
        s = self.spec
        capacity = self.sim.topo.ports[s.src][0].capacity_bps
        mean_ns = s.size_bytes * 8 * NS / (s.load * capacity)
        return max(1, int(self.rng.exponential(mean_ns)))

    def _message(self) -> None:
        if self._stopped():
            return
        s = self.spec
        others = [h for h in self.sim.topo.host_names if h != s.src]
        dst = s.dst if s.dst != "*" else others[int(self.rng.integers(len(others)))]
        npkts = math.ceil(s.size_bytes / s.packet_bytes)
        for k in range(npkts):
            nbytes = min(s.packet_bytes, s.size_bytes - k * s.packet_bytes)
            self.sim.send(s.src, self._packet(dst, max(64, nbytes)))
        self.sent_bytes += s.size_bytes
        self.sim.after(self._message_gap(), self._message)


def _expand(spec: WorkloadSpec, hosts: list[str]) -> list[FlowSpec]:
    out = []
    for f in spec.flows:
        if f.src == "*":
            out.extend(f.model_copy(update={"src": h, "name": f"{f.name or 'msg'}:{h}"}) for h in hosts)
        else:
            out.append(f)
    return out


def install_workload(sim: "Simulator", workload: Union[WorkloadSpec, dict, str, Path, None]) -> dict[str, FlowSource]:
    """Создаёт и запускает источники. Генератор случайностей нагрузки свой,
    отдельный от генератора потерь, но тоже из seed."""
    if workload is None:
        return {}
    spec = load_workload(workload)
    hosts = sim.topo.host_names
    sources: dict[str, FlowSource] = {}
    for i, f in enumerate(_expand(spec, hosts)):
        for end in (f.src, f.dst):
            if end != "*" and end not in hosts:
                raise ParseError(f"flow {f.name or i}: unknown host {end!r}")
        name = f.name or f"{f.src}->{f.dst}:{i}"
        src = FlowSource(sim, f, name, np.random.default_rng([sim.seed, i]))
        src.start()
        sources[name] = src
    log.info(f"[WORKLOAD] {spec.name}: {len(sources)} flow source(s)")
    return sources
