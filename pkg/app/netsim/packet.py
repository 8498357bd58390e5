"""Кадр в симуляторе. Заголовки хранятся разобранными, байты собираются
только по требованию (to_frame/from_frame), чтобы горячий путь не гонял
сериализацию на каждом хопе."""
from __future__ import annotations
import ipaddress
from dataclasses import dataclass, field, replace
from typing import Any, Optional

from app.config import MTU, TPP_UDP_PORT
from app.tpp.codec import (
    ETH_HEADER_BYTES, ETHERTYPE_IPV4, IP_PROTO_UDP, IPV4_HEADER_BYTES, TRANSPARENT_OVERHEAD, UDP_HEADER_BYTES,
    EthernetHeader, UdpEndpoint, _ipv4_udp, parse_ethernet, unwrap, wrap_standalone, wrap_transparent,
)
from app.tpp.models import TppFlags, TppProgram

MIN_FRAME_BYTES = ETH_HEADER_BYTES + IPV4_HEADER_BYTES + UDP_HEADER_BYTES


def ip(text: str) -> int:
    return int(ipaddress.IPv4Address(text))


def ip_str(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


@dataclass(frozen=True)
class Headers:
    src_ip: int
    dst_ip: int
    proto: int = IP_PROTO_UDP
    src_port: int = 0
    dst_port: int = 0
    vlan: int = 0
    ethertype: int = ETHERTYPE_IPV4

    def swapped(self) -> "Headers":
        return replace(self, src_ip=self.dst_ip, dst_ip=self.src_ip, src_port=self.dst_port, dst_port=self.src_port)


@dataclass(frozen=True)
class PathRecord:
    """Эталонная запись о проходе TPP через коммутатор (только для оракулов)."""
    uid: int
    hop: int
    switch_id: int
    in_port: int
    out_port: Optional[int]
    queue: Optional[int]
    matched: tuple[int, ...]
    shadow_seq: int
    time_ns: int


@dataclass
class Packet:
    uid: int
    headers: Headers
    frame_bytes: int                    # размер исходного кадра без TPP
    tpp: Optional[TppProgram] = None
    birth_ns: int = 0
    flow: str = ""
    seq: int = 0
    src: str = ""
    dst: str = ""
    path_log: list[PathRecord] = field(default_factory=list)
    notes: dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        """Байт на проводе: кадр плюс TPP (прозрачный ещё и с внутренним ethertype)."""
        if self.tpp is None:
            return self.frame_bytes
        extra = 0 if self.standalone else TRANSPARENT_OVERHEAD
        return self.frame_bytes + self.tpp.size + extra

    @property
    def standalone(self) -> bool:
        return self.tpp is not None and self.tpp.header.has(TppFlags.STANDALONE)

    @property
    def echoed(self) -> bool:
        return self.tpp is not None and self.tpp.header.has(TppFlags.ECHOED)

    def fits(self, mtu: int = MTU) -> bool:
        return self.size <= mtu

    def to_frame(self) -> bytes:
        """Байтовое представление кадра (полезная нагрузка из нулей)."""
        h = self.headers
        eth = EthernetHeader(vlan=h.vlan or None)
        endpoint = UdpEndpoint(h.src_ip, h.dst_ip, h.src_port, h.dst_port)
        if self.standalone:
            return wrap_standalone(self.tpp, endpoint, eth)
        vlan_bytes = 4 if h.vlan else 0
        body = bytes(max(0, self.frame_bytes - ETH_HEADER_BYTES - vlan_bytes))
        inner = EthernetHeader(vlan=h.vlan or None, ethertype=h.ethertype).pack() + body
        if h.ethertype == ETHERTYPE_IPV4 and len(body) >= IPV4_HEADER_BYTES + UDP_HEADER_BYTES:
            inner = EthernetHeader(vlan=h.vlan or None).pack() + _ip_udp(endpoint, h.proto, len(body))
        return wrap_transparent(self.tpp, inner) if self.tpp is not None else inner

    @classmethod
    def from_frame(cls, frame: bytes, uid: int = 0, **kw: Any) -> "Packet":
        parsed = unwrap(frame)
        vlan = parsed.eth.vlan or 0
        if parsed.udp is not None:
            u = parsed.udp
            headers = Headers(u.src_ip, u.dst_ip, IP_PROTO_UDP, u.src_port, u.dst_port, vlan)
            return cls(uid, headers, len(frame) - parsed.program.size, parsed.program, **kw)
        inner = parsed.inner
        headers = _parse_headers(inner, vlan)
        return cls(uid, headers, len(inner), parsed.program, **kw)


def _ip_udp(endpoint: UdpEndpoint, proto: int, body_len: int) -> bytes:
    hdr = bytearray(_ipv4_udp(endpoint, body_len - IPV4_HEADER_BYTES - UDP_HEADER_BYTES))
    hdr[9] = proto
    return bytes(hdr) + bytes(body_len - len(hdr))


def _parse_headers(frame: bytes, vlan: int) -> Headers:
    eth, off = parse_ethernet(frame)
    if eth.ethertype != ETHERTYPE_IPV4 or len(frame) < off + IPV4_HEADER_BYTES:
        return Headers(0, 0, 0, vlan=vlan, ethertype=eth.ethertype)
    proto = frame[off + 9]
    src_ip = int.from_bytes(frame[off + 12:off + 16], "big")
    dst_ip = int.from_bytes(frame[off + 16:off + 20], "big")
    ihl = (frame[off] & 0x0F) * 4
    sport = dport = 0
    if len(frame) >= off + ihl + 4:
        sport = int.from_bytes(frame[off + ihl:off + ihl + 2], "big")
        dport = int.from_bytes(frame[off + ihl + 2:off + ihl + 4], "big")
    return Headers(src_ip, dst_ip, proto, sport, dport, vlan, eth.ethertype)


def standalone_headers(src_ip: int, dst_ip: int, vlan: int = 0) -> Headers:
    return Headers(src_ip, dst_ip, IP_PROTO_UDP, TPP_UDP_PORT, TPP_UDP_PORT, vlan)
