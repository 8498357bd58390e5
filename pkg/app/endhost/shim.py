"""Dataplane shim конечного хоста.

На передаче: первое по приоритету правило TPP-CP, сэмплирование 1/N,
прозрачная обёртка кадра. На приёме: прозрачный TPP снимается (приложение
получает исходный кадр), запись уходит агрегатору приложения по
session_id; исполненный standalone TPP отражается отправителю; вернувшееся
эхо доставляется ожидающему исполнителю или агрегатору.
"""
from __future__ import annotations
import logging
from collections import Counter
from dataclasses import replace
from typing import Callable, Optional, TYPE_CHECKING

import numpy as np

from app.config import MTU
from app.endhost.control_plane import TppControlPlane
from app.endhost.records import ExecutedTppRecord
from app.netsim.packet import Packet
from app.tpp.codec import TRANSPARENT_OVERHEAD
from app.tpp.models import TppFlags

if TYPE_CHECKING:
    from app.netsim.simulator import Simulator

log = logging.getLogger("endhost.shim")

RecordHandler = Callable[[ExecutedTppRecord], None]
PacketHandler = Callable[[Packet, int], None]


class TppShim:
    def __init__(self, sim: "Simulator", host: str, cp: TppControlPlane, seed: int = 0, mtu: int = MTU) -> None:
        self.sim = sim
        self.host = host
        self.cp = cp
        self.mtu = mtu
        index = sim.topo.host_names.index(host)
        self.rng = np.random.default_rng([seed, index, 0x6666])
        self.aggregators: dict[int, RecordHandler] = {}
        self.app_handler: Optional[PacketHandler] = None
        self._waiters: dict[int, RecordHandler] = {}
        self.counters: Counter = Counter()
        self.payload_bytes: Counter = Counter()     # flow -> байты, отданные приложению

    def subscribe(self, session_id: int, handler: RecordHandler) -> None:
        self.aggregators[session_id] = handler

    def expect(self, probe_id: int, handler: RecordHandler) -> None:
        """Эхо standalone-пробы с notes["probe"] == probe_id уйдёт в handler."""
        self._waiters[probe_id] = handler

    def forget(self, probe_id: int) -> None:
        self._waiters.pop(probe_id, None)

    # --- передача --------------------------------------------------------------

    def on_transmit(self, pkt: Packet, now_ns: int) -> Packet:
        if pkt.tpp is not None:
            return pkt
        rule = self.cp.match(pkt.headers)
        if rule is None:
            return pkt
        self.counters["matched"] += 1
        if rule.sample_frequency > 1 and self.rng.integers(rule.sample_frequency) != 0:
            return pkt
        if pkt.size + rule.program.size + TRANSPARENT_OVERHEAD > self.mtu:
            self.counters["mtu_exceeded"] += 1
            log.debug(f"[SHIM] {self.host}: uid={pkt.uid} {pkt.size}+{rule.program.size} > MTU {self.mtu}")
            return pkt
        pkt.tpp = rule.program
        self.counters["stamped"] += 1
        return pkt

    # --- приём -----------------------------------------------------------------

    def on_receive(self, pkt: Packet, now_ns: int) -> None:
        if pkt.tpp is None:
            self._deliver(pkt, now_ns)
            return
        if pkt.standalone:
            if pkt.echoed:
                self._returned(ExecutedTppRecord.from_packet(pkt, self.host, now_ns), pkt)
            else:
                self._echo(pkt)
            return
        record = ExecutedTppRecord.from_packet(pkt, self.host, now_ns)
        pkt.tpp = None
        self.counters["stripped"] += 1
        self._deliver(pkt, now_ns)
        self._route(record)

    def _deliver(self, pkt: Packet, now_ns: int) -> None:
        self.payload_bytes[pkt.flow] += pkt.frame_bytes
        if self.app_handler is not None:
            self.app_handler(pkt, now_ns)

    def _echo(self, pkt: Packet) -> None:
        notes = dict(pkt.notes, forward_hops=pkt.tpp.header.hop_index)
        echo = Packet(self.sim.next_uid(), pkt.headers.swapped(), pkt.frame_bytes,
                      pkt.tpp.with_flags(TppFlags.ECHOED), birth_ns=pkt.birth_ns, flow=pkt.flow, seq=pkt.seq,
                      src=self.host, dst=pkt.src, path_log=list(pkt.path_log), notes=notes)
        self.counters["echoed"] += 1
        self.sim.inject(self.host, echo)

    def _returned(self, record: ExecutedTppRecord, pkt: Packet) -> None:
        record = _as_origin(record, self.host)
        waiter = self._waiters.pop(pkt.notes.get("probe", -1), None)
        if waiter is not None:
            self.sim.log.tpp_records.append(record)
            waiter(record)
            return
        self._route(record)

    def _route(self, record: ExecutedTppRecord) -> None:
        handler = self.aggregators.get(record.session_id)
        if handler is None:
            self.counters["unknown_session"] += 1
            log.debug(f"[SHIM] {self.host}: no aggregator for session {record.session_id}")
            return
        self.sim.log.tpp_records.append(record)
        handler(record)


def _as_origin(record: ExecutedTppRecord, host: str) -> ExecutedTppRecord:
    # эхо собрано у отправителя: он же origin
    return replace(record, origin=host)


def install_shims(sim: "Simulator", cp: TppControlPlane, seed: int = 0,
                  hosts: Optional[list[str]] = None, mtu: int = MTU) -> dict[str, TppShim]:
    shims = {}
    for host in hosts or sim.topo.host_names:
        shim = TppShim(sim, host, cp, seed, mtu)
        sim.attach(host, shim)
        shims[host] = shim
    return shims
