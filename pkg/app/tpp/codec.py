"""Бинарный формат TPP и обёртка в Ethernet-кадры.

Заголовок (12 байт, big-endian):

    byte 0      version << 4 | flags
    byte 1      insn_count
    byte 2      hop_size_words
    byte 3      hop_index
    bytes 4-5   sp (байтовое смещение в памяти пакета)
    bytes 6-7   mem_len (байт)
    bytes 8-9   session_id
    bytes 10-11 checksum: ones-complement по заголовку (с нулевым полем
                checksum) и инструкциям

Память пакета в контрольную сумму не входит: её переписывает каждый хоп.

Инструкция (4 байта): opcode, адрес (2 байта), байт операнда. Для
LOAD/STORE/CEXEC бит 7 операнда зарезервирован под абсолютную адресацию и
должен быть 0; для CSTORE байт операнда = pre << 4 | post.
"""
from __future__ import annotations
import struct
from dataclasses import dataclass
from typing import Optional

from app.config import TPP_ETHERTYPE, TPP_UDP_PORT, TPP_VERSION
from app.tpp.exceptions import BadMagic, BadOperand, ChecksumMismatch, DecodeError, TruncatedPacket
from app.tpp.models import (
    HEADER_BYTES, INSTRUCTION_BYTES, Encapsulation, Instruction, Opcode, TppHeader, TppProgram,
)

_HEADER = struct.Struct("!BBBBHHHH")
_INSN = struct.Struct("!BHB")

ETH_HEADER_BYTES = 14
VLAN_TAG_BYTES = 4
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
IPV4_HEADER_BYTES = 20
UDP_HEADER_BYTES = 8
IP_PROTO_UDP = 17
STANDALONE_OVERHEAD = ETH_HEADER_BYTES + IPV4_HEADER_BYTES + UDP_HEADER_BYTES
# прозрачный TPP сдвигает внутренний ethertype за себя
TRANSPARENT_OVERHEAD = 2


def ones_complement(data: bytes) -> int:
    """16-битная сумма с переносом (как в IPv4), инвертированная."""
    if len(data) % 2:
        data += b"\x00"
    total = 0
    for (word,) in struct.iter_unpack("!H", data):
        total += word
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _pack_header(h: TppHeader, checksum: int) -> bytes:
    return _HEADER.pack((h.version & 0xF) << 4 | (h.flags & 0xF), h.insn_count, h.hop_size_words,
                        h.hop_index, h.sp, h.mem_len, h.session_id, checksum)


def _pack_instruction(insn: Instruction) -> bytes:
    if insn.opcode == Opcode.CSTORE:
        operand = insn.slot << 4 | insn.post_slot
    else:
        operand = insn.slot
    return _INSN.pack(int(insn.opcode), insn.address, operand)


def checksum(p: TppProgram) -> int:
    body = _pack_header(p.header, 0) + b"".join(_pack_instruction(i) for i in p.instructions)
    return ones_complement(body)


def encode(p: TppProgram) -> bytes:
    problems = p.validate()
    if problems:
        raise ValueError(f"invalid TPP: {'; '.join(problems)}")
    insns = b"".join(_pack_instruction(i) for i in p.instructions)
    csum = ones_complement(_pack_header(p.header, 0) + insns)
    return _pack_header(p.header, csum) + insns + p.memory


def _unpack_instruction(raw: bytes, index: int) -> Instruction:
    code, address, operand = _INSN.unpack(raw)
    try:
        opcode = Opcode(code)
    except ValueError:
        raise DecodeError(f"instruction {index}: unknown opcode {code}") from None
    if opcode == Opcode.CSTORE:
        return Instruction(opcode, address, operand >> 4, operand & 0xF)
    if operand & 0x80:
        raise BadOperand(f"instruction {index}: absolute packet addressing is reserved")
    if opcode in (Opcode.PUSH, Opcode.POP) and operand:
        raise BadOperand(f"instruction {index}: {opcode.name} takes no packet operand")
    return Instruction(opcode, address, operand)


def decode_prefix(b: bytes) -> tuple[TppProgram, int]:
    """Разбирает TPP в начале b; возвращает программу и число съеденных байт."""
    if len(b) < HEADER_BYTES:
        raise TruncatedPacket(f"need {HEADER_BYTES} header bytes, got {len(b)}")
    b0, insn_count, hop_size, hop_index, sp, mem_len, session_id, csum = _HEADER.unpack_from(b)
    version, flags = b0 >> 4, b0 & 0xF
    if version != TPP_VERSION:
        raise BadMagic(f"unsupported TPP version {version}")
    insn_end = HEADER_BYTES + INSTRUCTION_BYTES * insn_count
    total = insn_end + mem_len
    if len(b) < total:
        raise TruncatedPacket(f"need {total} bytes, got {len(b)}")
    expected = ones_complement(bytes(b[:10]) + b"\x00\x00" + bytes(b[HEADER_BYTES:insn_end]))
    if expected != csum:
        raise ChecksumMismatch(f"checksum 0x{csum:04x}, expected 0x{expected:04x}")
    if mem_len % 2:
        raise DecodeError(f"mem_len {mem_len} is not a whole number of words")
    if sp > mem_len:
        raise DecodeError(f"sp {sp} beyond mem_len {mem_len}")
    if hop_size and hop_index * hop_size * 2 > mem_len:
        raise DecodeError(f"hop_index {hop_index} addresses past mem_len {mem_len}")
    instructions = tuple(
        _unpack_instruction(bytes(b[off:off + INSTRUCTION_BYTES]), k)
        for k, off in enumerate(range(HEADER_BYTES, insn_end, INSTRUCTION_BYTES)))
    header = TppHeader(version, flags, insn_count, hop_size, hop_index, sp, mem_len, session_id, csum)
    return TppProgram(header, instructions, bytes(b[insn_end:total])), total


def decode(b: bytes) -> TppProgram:
    return decode_prefix(b)[0]


# --- Ethernet / IPv4 / UDP ---------------------------------------------------

@dataclass(frozen=True)
class EthernetHeader:
    dst: bytes = b"\x00" * 6
    src: bytes = b"\x00" * 6
    vlan: Optional[int] = None
    ethertype: int = ETHERTYPE_IPV4

    def pack(self) -> bytes:
        tag = b"" if self.vlan is None else struct.pack("!HH", ETHERTYPE_VLAN, self.vlan & 0x0FFF)
        return self.dst + self.src + tag + struct.pack("!H", self.ethertype)

    @property
    def size(self) -> int:
        return ETH_HEADER_BYTES + (0 if self.vlan is None else VLAN_TAG_BYTES)


@dataclass(frozen=True)
class UdpEndpoint:
    src_ip: int
    dst_ip: int
    src_port: int = TPP_UDP_PORT
    dst_port: int = TPP_UDP_PORT
    ttl: int = 64


@dataclass(frozen=True)
class Unwrapped:
    eth: EthernetHeader
    program: Optional[TppProgram] = None
    encapsulation: Optional[Encapsulation] = None
    inner: bytes = b""                  # transparent: исходный кадр; standalone: пусто
    udp: Optional[UdpEndpoint] = None


def parse_ethernet(frame: bytes) -> tuple[EthernetHeader, int]:
    if len(frame) < ETH_HEADER_BYTES:
        raise TruncatedPacket(f"frame of {len(frame)} bytes has no Ethernet header")
    dst, src = bytes(frame[0:6]), bytes(frame[6:12])
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    if ethertype != ETHERTYPE_VLAN:
        return EthernetHeader(dst, src, None, ethertype), ETH_HEADER_BYTES
    if len(frame) < ETH_HEADER_BYTES + VLAN_TAG_BYTES:
        raise TruncatedPacket("truncated 802.1Q tag")
    tci, ethertype = struct.unpack_from("!HH", frame, 14)
    return EthernetHeader(dst, src, tci & 0x0FFF, ethertype), ETH_HEADER_BYTES + VLAN_TAG_BYTES


def _ipv4_udp(endpoint: UdpEndpoint, payload_len: int) -> bytes:
    udp_len = UDP_HEADER_BYTES + payload_len
    ip = bytearray(struct.pack("!BBHHHBBHII", 0x45, 0, IPV4_HEADER_BYTES + udp_len, 0, 0,
                               endpoint.ttl, IP_PROTO_UDP, 0, endpoint.src_ip, endpoint.dst_ip))
    ip[10:12] = struct.pack("!H", ones_complement(bytes(ip)))
    # UDP checksum 0: не используется (IPv4 это допускает)
    return bytes(ip) + struct.pack("!HHHH", endpoint.src_port, endpoint.dst_port, udp_len, 0)


def wrap_transparent(p: TppProgram, inner_frame: bytes) -> bytes:
    """Кадр с ethertype TPP: заголовок исходного кадра, TPP, затем остаток
    исходного кадра начиная с его ethertype. Кадр растёт на p.size плюс 2 байта
    внутреннего ethertype."""
    eth, off = parse_ethernet(inner_frame)
    outer = EthernetHeader(eth.dst, eth.src, eth.vlan, TPP_ETHERTYPE)
    return outer.pack() + encode(p) + bytes(inner_frame[off - 2:])


def wrap_standalone(p: TppProgram, endpoint: UdpEndpoint, eth: Optional[EthernetHeader] = None) -> bytes:
    eth = eth or EthernetHeader()
    eth = EthernetHeader(eth.dst, eth.src, eth.vlan, ETHERTYPE_IPV4)
    body = encode(p)
    return eth.pack() + _ipv4_udp(endpoint, len(body)) + body


def wrap(p: TppProgram, inner_frame: bytes = b"", endpoint: Optional[UdpEndpoint] = None,
         eth: Optional[EthernetHeader] = None) -> bytes:
    if p.encapsulation == Encapsulation.STANDALONE:
        if endpoint is None:
            raise ValueError("standalone TPP needs a UDP endpoint")
        return wrap_standalone(p, endpoint, eth)
    return wrap_transparent(p, inner_frame)


def unwrap(frame: bytes) -> Unwrapped:
    """Разбор кадра: transparent TPP, standalone TPP либо обычный кадр
    (тогда program=None и inner = сам кадр)."""
    eth, off = parse_ethernet(frame)
    if eth.ethertype == TPP_ETHERTYPE:
        program, used = decode_prefix(bytes(frame[off:]))
        rest = bytes(frame[off + used:])
        if len(rest) < 2:
            raise TruncatedPacket("transparent TPP without an inner ethertype")
        inner = bytes(frame[:off - 2]) + rest
        return Unwrapped(eth, program, Encapsulation.TRANSPARENT, inner)
    if eth.ethertype == ETHERTYPE_IPV4 and len(frame) >= off + IPV4_HEADER_BYTES + UDP_HEADER_BYTES:
        ihl = (frame[off] & 0x0F) * 4
        proto = frame[off + 9]
        if proto == IP_PROTO_UDP and len(frame) >= off + ihl + UDP_HEADER_BYTES:
            ttl = frame[off + 8]
            src_ip, dst_ip = struct.unpack_from("!II", frame, off + 12)
            sport, dport = struct.unpack_from("!HH", frame, off + ihl)
            if dport == TPP_UDP_PORT:
                program = decode(bytes(frame[off + ihl + UDP_HEADER_BYTES:]))
                return Unwrapped(eth, program, Encapsulation.STANDALONE, b"",
                                 UdpEndpoint(src_ip, dst_ip, sport, dport, ttl))
    return Unwrapped(eth, inner=bytes(frame))
