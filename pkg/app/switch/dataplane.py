"""Проход кадра через коммутатор: пересылка, ingress-стадии TCPU,
постановка в очередь (drop-tail), затем egress-стадия."""
from __future__ import annotations
import logging
from dataclasses import replace
from typing import Optional

from app.netsim.packet import Packet, PathRecord
from app.switch import pipeline
from app.switch.state import DROP_PORT, LinkState, PacketMetadata, QueueState, SwitchState
from app.switch.tcpu import ExecutionTrace, Tcpu
from app.tpp.memory_map import EGRESS_STAGE, NUM_INGRESS_STAGES
from app.tpp.models import TppFlags

log = logging.getLogger("switch.dataplane")


def packet_metadata(pkt: Packet, in_port: int) -> PacketMetadata:
    h = pkt.headers
    meta = PacketMetadata(
        input_port=in_port, packet_length=pkt.size, ethertype=h.ethertype, vlan=h.vlan,
        ip_src=h.src_ip, ip_dst=h.dst_ip, ip_proto=h.proto, src_port=h.src_port, dst_port=h.dst_port,
    )
    if pkt.tpp is not None:
        meta.tpp_hop_index = pkt.tpp.header.hop_index
        meta.tpp_session = pkt.tpp.header.session_id
    return meta


def enqueue(sw: SwitchState, q: QueueState, pkt: Packet) -> bool:
    """Drop-tail. False: очередь переполнена, пакет отброшен."""
    size = pkt.size
    link = sw.links[q.port]
    if q.would_overflow(size):
        q.drop_packets += 1
        q.drop_bytes += size
        link.drop_packets += 1
        link.drop_bytes += size
        return False
    q.frames.append(pkt)
    q.occupancy_bytes += size
    q.enqueued_packets += 1
    q.enqueued_bytes += size
    sw.note_queue(q)
    return True


def dequeue(sw: SwitchState, link: LinkState, mtu_quantum: int = 1500) -> Optional[Packet]:
    """Следующий кадр порта: deficit round robin, квант = SchedWeight * MTU
    начисляется очереди один раз за визит."""
    queues = link.queues
    if not any(q.frames for q in queues):
        return None
    n = len(queues)

    def advance(k: int) -> None:
        link.drr_next = (k + 1) % n
        link.drr_fresh = True

    while True:
        k = link.drr_next
        q = queues[k]
        if not q.frames:
            link.drr_deficit[k] = 0
            advance(k)
            continue
        if link.drr_fresh:
            link.drr_deficit[k] += max(1, q.sched_weight) * mtu_quantum
            link.drr_fresh = False
        head = q.frames[0]
        if link.drr_deficit[k] < head.size:
            advance(k)
            continue
        link.drr_deficit[k] -= head.size
        q.frames.popleft()
        q.occupancy_bytes -= head.size
        q.tx_packets += 1
        q.tx_bytes += head.size
        link.tx_packets += 1
        link.tx_bytes += head.size
        link.window_tx_bytes += head.size
        if not q.frames:
            link.drr_deficit[k] = 0
            advance(k)
        sw.note_queue(q)
        return head


def forward_and_execute(pkt: Packet, sw: SwitchState, in_port: int, now_ns: int = 0,
                        write_enabled: Optional[bool] = None) -> tuple[Packet, ExecutionTrace]:
    """Один хоп. Возвращает (кадр с обновлённым TPP, трассу). trace.dropped:
    кадр отброшен (ACL, нет маршрута, переполнение очереди); output_port None
    при локальной доставке."""
    sw.clock_ns = now_ns
    if 0 <= in_port < sw.num_ports:
        link = sw.links[in_port]
        link.rx_packets += 1
        link.rx_bytes += pkt.size
        link.window_rx_bytes += pkt.size

    meta = packet_metadata(pkt, in_port)
    local = pipeline.forward(sw, meta)
    if local and pkt.standalone and not pkt.echoed and pkt.headers.dst_ip == sw.ip:
        # standalone TPP адресован коммутатору: разворачиваем обратно к отправителю
        pkt.headers = pkt.headers.swapped()
        pkt.tpp = pkt.tpp.with_flags(TppFlags.ECHOED)
        meta = packet_metadata(pkt, in_port)
        local = pipeline.forward(sw, meta)

    enabled = sw.write_enabled if write_enabled is None else write_enabled
    tcpu = Tcpu(pkt.tpp, sw, meta, enabled) if pkt.tpp is not None else None
    if tcpu is not None:
        tcpu.execute_stages(1, NUM_INGRESS_STAGES)

    port = meta.output_port
    queue_id = meta.output_queue
    dropped = False
    if local:
        port, queue_id = None, None
    elif port == DROP_PORT:
        port, queue_id, dropped = None, None, True
    else:
        q = sw.queue(port, queue_id) or sw.queue(port, 0)
        queue_id = q.queue_id
        # сначала учёт очереди: egress-стадия читает занятость уже с этим кадром
        dropped = not enqueue(sw, q, pkt)
        if tcpu is not None and not dropped:
            tcpu.execute_stages(EGRESS_STAGE, EGRESS_STAGE)
    if dropped:
        log.debug(f"[DATAPLANE] {sw.name}: drop uid={pkt.uid} in_port={in_port}")

    if tcpu is None:
        trace = ExecutionTrace(sw.switch_id, 0, (), output_port=port, output_queue=queue_id, dropped=dropped)
        return pkt, trace

    program, trace = tcpu.finish(output_port=port, output_queue=queue_id, dropped=dropped)
    pkt.tpp = replace(program, header=replace(program.header, hop_index=program.header.hop_index + 1))
    shadow_seq = sw.shadow.seq if sw.shadow is not None else 0
    pkt.path_log.append(PathRecord(pkt.uid, trace.hop, sw.switch_id, in_port, port, queue_id,
                                   tuple(meta.matched), shadow_seq, now_ns))
    return pkt, trace
