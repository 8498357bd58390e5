"""Логика пересылки: четыре ingress-стадии match-action.

    стадия 1  acl    exact-match по полям заголовка, permit/deny
    стадия 2  route  longest-prefix match по IP назначения -> порт или группа
    стадия 3  group  multipath: выбор порта группы по хэшу поля заголовка
    стадия 4  qos    exact-match -> выходная очередь

У каждой таблицы есть запись по умолчанию с id 0; её совпадение считается
промахом (счётчики Match* не растут).
"""
from __future__ import annotations
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import mmh3

from app.switch.state import FlowEntry, PacketMetadata, SwitchState

ACL, ROUTE, GROUP, QOS = 1, 2, 3, 4


class HashField(str, Enum):
    VLAN = "vlan"
    IP_SRC = "ip_src"
    IP_DST = "ip_dst"
    SRC_PORT = "src_port"
    DST_PORT = "dst_port"
    FIVE_TUPLE = "five_tuple"


class AclAction(str, Enum):
    PERMIT = "permit"
    DENY = "deny"


@dataclass(frozen=True)
class RouteAction:
    port: Optional[int] = None      # None: адрес самого коммутатора (локальная доставка)
    group: Optional[int] = None
    local: bool = False


@dataclass(frozen=True)
class GroupAction:
    ports: tuple[int, ...]
    hash_field: HashField = HashField.VLAN


def _exact(entries: list[FlowEntry], meta: PacketMetadata) -> Optional[FlowEntry]:
    best = None
    for e in entries:
        if all(getattr(meta, k) == v for k, v in e.match.items()):
            if best is None or (e.priority, -e.entry_id) > (best.priority, -best.entry_id):
                best = e
    return best


def _lpm(entries: list[FlowEntry], ip: int) -> Optional[FlowEntry]:
    best, best_len = None, -1
    for e in entries:
        prefix, plen = e.match
        mask = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF if plen else 0
        if (ip & mask) == (prefix & mask) and plen > best_len:
            best, best_len = e, plen
    return best


def install_acl(sw: SwitchState, entry_id: int, match: dict, action: AclAction = AclAction.DENY,
                priority: int = 0) -> FlowEntry:
    return sw.stage(ACL).install(FlowEntry(entry_id, dict(match), AclAction(action), priority), sw.clock_ns)


def install_route(sw: SwitchState, entry_id: int, prefix: int, plen: int, action: RouteAction) -> FlowEntry:
    if not 0 <= plen <= 32:
        raise ValueError(f"prefix length {plen} out of range")
    return sw.stage(ROUTE).install(FlowEntry(entry_id, (prefix, plen), action), sw.clock_ns)


def install_group(sw: SwitchState, group_id: int, ports: list[int],
                  hash_field: HashField = HashField.VLAN) -> FlowEntry:
    if not ports:
        raise ValueError(f"group {group_id} has no ports")
    return sw.stage(GROUP).install(FlowEntry(group_id, group_id, GroupAction(tuple(ports), HashField(hash_field))),
                                   sw.clock_ns)


def install_qos(sw: SwitchState, entry_id: int, match: dict, queue: int, priority: int = 0) -> FlowEntry:
    return sw.stage(QOS).install(FlowEntry(entry_id, dict(match), queue, priority), sw.clock_ns)


def _hash_key(field: HashField, meta: PacketMetadata) -> bytes:
    if field == HashField.FIVE_TUPLE:
        values = (meta.ip_src, meta.ip_dst, meta.ip_proto, meta.src_port, meta.dst_port)
    else:
        values = (getattr(meta, field.value),)
    return b"".join(v.to_bytes(4, "big") for v in values)


def select_path(group: Optional[FlowEntry], meta: PacketMetadata, fallback_port: Optional[int] = None) -> Optional[int]:
    """Порт из multipath-группы. VLAN: vlan mod fan-out (хост выбирает путь
    тегом); прочие поля через mmh3. Нет группы: unicast-порт маршрута."""
    if group is None or not isinstance(group.action, GroupAction):
        return fallback_port
    ports = group.action.ports
    field = group.action.hash_field
    if field == HashField.VLAN:
        return ports[meta.vlan % len(ports)]
    return ports[mmh3.hash(_hash_key(field, meta), 0, signed=False) % len(ports)]


def _account(sw: SwitchState, stage: int, entry: Optional[FlowEntry], meta: PacketMetadata) -> FlowEntry:
    st = sw.stage(stage)
    st.lookup_packets += 1
    st.lookup_bytes += meta.packet_length
    if entry is None:
        entry = st.default_entry
    else:
        st.match_packets += 1
        st.match_bytes += meta.packet_length
    entry.match_packets += 1
    entry.match_bytes += meta.packet_length
    meta.matched[stage - 1] = entry.entry_id
    return entry


def forward(sw: SwitchState, meta: PacketMetadata) -> bool:
    """Заполняет meta (совпавшие записи, OutputPortBitmap, OutputQueue).
    Возвращает True, если пакет адресован самому коммутатору."""
    acl = _account(sw, ACL, _exact(sw.stage(ACL).entries, meta), meta)
    route = _account(sw, ROUTE, _lpm(sw.stage(ROUTE).entries, meta.ip_dst), meta)
    action = route.action if isinstance(route.action, RouteAction) else None

    group = None
    if action is not None and action.group is not None:
        group = next((e for e in sw.stage(GROUP).entries if e.entry_id == action.group), None)
    _account(sw, GROUP, group, meta)
    port = select_path(group, meta, action.port if action is not None else None)

    qos = _account(sw, QOS, _exact(sw.stage(QOS).entries, meta), meta)
    queue = qos.action if isinstance(qos.action, int) else 0

    local = action is not None and action.local
    if acl.action == AclAction.DENY or port is None or local:
        meta.output_port_bitmap = 0
    else:
        meta.output_port_bitmap = 1 << port
        if sw.queue(port, queue) is None:
            queue = 0
    meta.output_queue = queue
    return local
