"""Детерминированный дискретно-событийный симулятор.

Store-and-forward: кадр целиком сериализуется в линк (size/capacity), затем
летит propagation delay. Очереди коммутаторов drop-tail (см.
app.switch.dataplane), у хоста одна FIFO-очередь NIC без ограничения.
Задержки обработки в коммутаторе нет. Один поток: никаких вызовов из
других потоков во время run().
"""
from __future__ import annotations
import logging
from collections import deque
from typing import Callable, Optional, Protocol

import numpy as np

from app.config import LINK_UTIL_INTERVAL_MS, QUEUE_SAMPLE_INTERVAL_MS, SIM_SEED
from app.netsim.events import EventKind, EventQueue
from app.netsim.packet import Packet
from app.netsim.topology import Topology
from app.netsim.tracelog import Delivery, Drop, QueueSample, TraceLog, UtilSample
from app.netsim.workload import install_workload
from app.switch.dataplane import dequeue, forward_and_execute
from app.switch.rewrite import update_link_utilization
from app.switch.state import ShadowLog, SwitchState
from app.tpp.memory_map import Address

log = logging.getLogger("netsim")

NS_PER_MS = 1_000_000


class HostStack(Protocol):
    def on_transmit(self, pkt: Packet, now_ns: int) -> Packet: ...

    def on_receive(self, pkt: Packet, now_ns: int) -> None: ...


class Simulator:
    def __init__(self, topo: Topology, seed: int = SIM_SEED, *, record_shadow: bool = False,
                 shadow_watch: Optional[Callable[[Address], bool]] = None,
                 util_interval_ns: Optional[int] = None, queue_sample_ns: Optional[int] = None,
                 write_enabled: bool = True) -> None:
        self.topo = topo
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.now = 0
        self.events = EventQueue()
        self.switches: dict[str, SwitchState] = topo.make_switches()
        for sw in self.switches.values():
            sw.write_enabled = write_enabled
        self.log = TraceLog(seed)
        if record_shadow:
            shadow = ShadowLog(shadow_watch)
            for sw in self.switches.values():
                sw.attach_shadow(shadow)
            self.log.shadow = shadow
        self.stacks: dict[str, HostStack] = {}
        self._nics: dict[str, deque] = {h: deque() for h in topo.host_names}
        self._busy: set[tuple[str, int]] = set()
        self._uid = 0
        self._blackholes = {s.name for s in topo.spec.switches if s.blackhole}
        self.util_interval_ns = int(LINK_UTIL_INTERVAL_MS * NS_PER_MS) if util_interval_ns is None else util_interval_ns
        self.queue_sample_ns = int(QUEUE_SAMPLE_INTERVAL_MS * NS_PER_MS) if queue_sample_ns is None else queue_sample_ns
        if self.util_interval_ns > 0:
            self.every(self.util_interval_ns, self._sample_utilization)
        if self.queue_sample_ns > 0:
            self.every(self.queue_sample_ns, self._sample_queues)

    # --- планирование ----------------------------------------------------------

    def next_uid(self) -> int:
        self._uid += 1
        return self._uid

    def at(self, time_ns: int, callback: Callable[[], None]) -> None:
        self.events.push(max(time_ns, self.now), EventKind.TIMER, callback)

    def after(self, delay_ns: int, callback: Callable[[], None]) -> None:
        self.at(self.now + delay_ns, callback)

    def every(self, interval_ns: int, callback: Callable[[], None], start_ns: Optional[int] = None) -> None:
        def tick() -> None:
            callback()
            self.after(interval_ns, tick)
        self.at(interval_ns if start_ns is None else start_ns, tick)

    def attach(self, host: str, stack: HostStack) -> None:
        self.stacks[host] = stack

    # --- отправка --------------------------------------------------------------

    def send(self, host: str, pkt: Packet) -> None:
        """Трафик приложения: проходит через shim хоста (может получить TPP)."""
        stack = self.stacks.get(host)
        if stack is not None:
            pkt = stack.on_transmit(pkt, self.now)
        self.inject(host, pkt)

    def inject(self, host: str, pkt: Packet) -> None:
        """Кадр прямо в NIC, мимо shim (эхо, пробы исполнителя)."""
        if not pkt.birth_ns:
            pkt.birth_ns = self.now
        pkt.src = pkt.src or host
        self.log.injected += 1
        self.events.push(self.now, EventKind.ENQUEUE_DONE, (host, pkt))

    def _kick(self, node: str, port: int) -> None:
        key = (node, port)
        if key in self._busy:
            return
        if node in self._nics:
            nic = self._nics[node]
            if not nic:
                return
            pkt = nic.popleft()
        else:
            sw = self.switches[node]
            pkt = dequeue(sw, sw.links[port])
            if pkt is None:
                return
        self._busy.add(key)
        p = self.topo.ports[node][port]
        tx_ns = -(-pkt.size * 8 * 1_000_000_000 // p.capacity_bps)
        self.events.push(self.now + tx_ns, EventKind.TRANSMIT_DONE, (node, port, pkt))

    def _drop(self, node: str, pkt: Packet, reason: str) -> None:
        self.log.drops.append(Drop(self.now, pkt.uid, node, reason, pkt.flow))

    # --- обработка событий -----------------------------------------------------

    def _on_enqueue(self, host: str, pkt: Packet) -> None:
        self._nics[host].append(pkt)
        self._kick(host, 0)

    def _on_transmit_done(self, node: str, port: int, pkt: Packet) -> None:
        self._busy.discard((node, port))
        p = self.topo.ports[node][port]
        if p.loss > 0 and self.rng.random() < p.loss:
            self._drop(node, pkt, "loss")
        else:
            self.events.push(self.now + p.delay_ns, EventKind.PROPAGATE_ARRIVE, (p.peer, p.peer_port, pkt))
        self._kick(node, port)

    def _on_arrive(self, node: str, in_port: int, pkt: Packet) -> None:
        if node in self._nics:
            self._host_receive(node, pkt)
            return
        if node in self._blackholes:
            self._drop(node, pkt, "blackhole")
            return
        sw = self.switches[node]
        pkt, trace = forward_and_execute(pkt, sw, in_port, self.now)
        if trace.dropped:
            self._drop(node, pkt, "queue" if trace.output_port is not None else "forwarding")
        elif trace.output_port is None:
            self._drop(node, pkt, "local")
        else:
            self._kick(node, trace.output_port)

    def _host_receive(self, host: str, pkt: Packet) -> None:
        if pkt.headers.dst_ip != self.topo.host_ip(host):
            self._drop(host, pkt, "misdelivered")
            return
        self.log.deliveries.append(Delivery(self.now, pkt.uid, pkt.flow, pkt.seq, pkt.src, host, pkt.size,
                                            self.now - pkt.birth_ns))
        stack = self.stacks.get(host)
        if stack is not None:
            stack.on_receive(pkt, self.now)

    def _sample_utilization(self) -> None:
        for sw in self.switches.values():
            for link in sw.links:
                update_link_utilization(link, self.now, sw)
                self.log.util_samples.append(UtilSample(self.now, sw.name, link.port, link.link_id,
                                                        link.tx_util, link.rx_util))

    def _sample_queues(self) -> None:
        for sw in self.switches.values():
            for link in sw.links:
                for q in link.queues:
                    self.log.queue_samples.append(QueueSample(self.now, sw.name, link.port, q.queue_id,
                                                              q.occupancy_bytes))

    # --- прогон ----------------------------------------------------------------

    def in_flight(self) -> int:
        queued = sum(len(n) for n in self._nics.values())
        queued += sum(link.queued_packets for sw in self.switches.values() for link in sw.links)
        pending = sum(len(self.events.pending(k)) for k in
                      (EventKind.ENQUEUE_DONE, EventKind.TRANSMIT_DONE, EventKind.PROPAGATE_ARRIVE))
        return queued + pending

    def _dispatch(self) -> None:
        ev = self.events.pop()
        self.now = ev.time
        if ev.kind == EventKind.ENQUEUE_DONE:
            self._on_enqueue(*ev.payload)
        elif ev.kind == EventKind.TRANSMIT_DONE:
            self._on_transmit_done(*ev.payload)
        elif ev.kind == EventKind.PROPAGATE_ARRIVE:
            self._on_arrive(*ev.payload)
        else:
            ev.payload()

    def advance(self, until: Callable[[], bool], deadline_ns: int) -> bool:
        """Крутит события, пока until() ложно и не наступил deadline.
        Вызывать только снаружи обработчиков событий."""
        while not until():
            if not self.events or self.events.peek_time() > deadline_ns:
                self.now = max(self.now, deadline_ns)
                return until()
            self._dispatch()
        return True

    def run_until(self, end_ns: int) -> TraceLog:
        while self.events and self.events.peek_time() <= end_ns:
            self._dispatch()
        self.now = max(self.now, end_ns)
        self.log.end_ns = self.now
        self.log.in_flight = self.in_flight()
        log.info(f"[SIM] t={self.now / NS_PER_MS:.1f}ms injected={self.log.injected} "
                 f"delivered={self.log.delivered} dropped={self.log.dropped} in_flight={self.log.in_flight}")
        return self.log


def run(topo: Topology, workload, seed: int = SIM_SEED, duration_ns: int = 0, **sim_kw) -> TraceLog:
    """Прогон нагрузки без стека TPP на хостах."""
    sim = Simulator(topo, seed, **sim_kw)
    install_workload(sim, workload)
    return sim.run_until(duration_ns)
