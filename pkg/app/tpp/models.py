"""Значения ISA: инструкция, заголовок, программа. Все типы неизменяемы: коммутатор
не правит TPP на месте, а на каждом хопе возвращает новый TppProgram
(dataclasses.replace)."""
from __future__ import annotations
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum, IntFlag
from typing import Optional, Sequence

from app.config import TPP_MAX_INSTRUCTIONS, TPP_VERSION
from app.tpp.memory_map import Address, lookup

HEADER_BYTES = 12
INSTRUCTION_BYTES = 4
BLOCK_WORDS = 4            # CEXEC: 32-bit mask + 32-bit value
MAX_HOP_OFFSET = 0x7F      # 7 бит смещения в байте операнда
MAX_NIBBLE_OFFSET = 0xF    # CSTORE: по 4 бита на pre/post


class Opcode(IntEnum):
    LOAD = 1
    STORE = 2
    PUSH = 3
    POP = 4
    CSTORE = 5
    CEXEC = 6

    @property
    def is_conditional(self) -> bool:
        return self in (Opcode.CSTORE, Opcode.CEXEC)

    @property
    def writes_switch(self) -> bool:
        return self in (Opcode.STORE, Opcode.POP, Opcode.CSTORE)


class TppFlags(IntFlag):
    NONE = 0
    ERROR = 0x1            # хотя бы одно обращение к несуществующей памяти
    WRITE_SKIPPED = 0x2    # запись пропущена: запись запрещена на коммутаторе
    STANDALONE = 0x4       # самостоятельный UDP-зонд, а не обёртка кадра
    ECHOED = 0x8           # эхо, возвращающееся к отправителю


class Encapsulation(str, Enum):
    STANDALONE = "standalone"
    TRANSPARENT = "transparent"


@dataclass(frozen=True)
class Instruction:
    """slot: смещение слова в хопе (LOAD/STORE), pre-слот (CSTORE) или
    начало блока mask/value (CEXEC). post_slot есть только у CSTORE."""
    opcode: Opcode
    address: int
    slot: int = 0
    post_slot: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.address <= 0xFFFF:
            raise ValueError(f"address out of range: {self.address}")
        op = self.opcode
        if op in (Opcode.PUSH, Opcode.POP):
            if self.slot or self.post_slot:
                raise ValueError(f"{op.name} takes no packet operand")
        elif op == Opcode.CSTORE:
            if not (0 <= self.slot <= MAX_NIBBLE_OFFSET and 0 <= self.post_slot <= MAX_NIBBLE_OFFSET):
                raise ValueError("CSTORE hop offsets must fit 4 bits")
        else:
            if not 0 <= self.slot <= MAX_HOP_OFFSET:
                raise ValueError(f"{op.name} hop offset must fit 7 bits")
            if self.post_slot:
                raise ValueError(f"{op.name} takes a single packet operand")

    @property
    def addr(self) -> Address:
        return lookup(self.address)

    @property
    def operands(self) -> tuple:
        op = self.opcode
        if op in (Opcode.PUSH, Opcode.POP):
            return (self.addr,)
        if op == Opcode.CSTORE:
            return (self.addr, self.slot, self.post_slot)
        return (self.addr, self.slot)


@dataclass(frozen=True)
class TppHeader:
    version: int = TPP_VERSION
    flags: int = 0
    insn_count: int = 0
    hop_size_words: int = 0
    hop_index: int = 0
    sp: int = 0
    mem_len: int = 0
    session_id: int = 0
    # пересчитывается кодеком; в сравнении не участвует, иначе
    # decode(encode(p)) != p для p, собранного без контрольной суммы
    checksum: int = field(default=0, compare=False)

    def has(self, flag: TppFlags) -> bool:
        return bool(self.flags & flag)


@dataclass(frozen=True)
class TppProgram:
    header: TppHeader
    instructions: tuple[Instruction, ...] = ()
    memory: bytes = b""

    def __post_init__(self) -> None:
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "memory", bytes(self.memory))

    @classmethod
    def create(cls, instructions: Sequence[Instruction], hop_size_words: int, hops: int,
               hop_values: Optional[dict[int, Sequence[int]]] = None, *, session_id: int = 0,
               standalone: bool = False, sp: int = 0, mem_len: Optional[int] = None) -> "TppProgram":
        """hop_values: {номер хопа с нуля: слова}, начальные значения памяти."""
        mem_len = hops * hop_size_words * 2 if mem_len is None else mem_len
        mem = bytearray(mem_len)
        for hop, words in (hop_values or {}).items():
            base = hop * hop_size_words * 2
            for k, w in enumerate(words):
                mem[base + 2 * k: base + 2 * k + 2] = (w & 0xFFFF).to_bytes(2, "big")
        header = TppHeader(
            flags=int(TppFlags.STANDALONE) if standalone else 0,
            insn_count=len(instructions), hop_size_words=hop_size_words,
            sp=sp, mem_len=mem_len, session_id=session_id,
        )
        return cls(header, tuple(instructions), bytes(mem))

    @property
    def encapsulation(self) -> Encapsulation:
        return Encapsulation.STANDALONE if self.header.has(TppFlags.STANDALONE) else Encapsulation.TRANSPARENT

    @property
    def size(self) -> int:
        return HEADER_BYTES + INSTRUCTION_BYTES * len(self.instructions) + len(self.memory)

    @property
    def hops_allocated(self) -> int:
        hs = self.header.hop_size_words
        return len(self.memory) // (2 * hs) if hs else 0

    def word(self, byte_offset: int) -> int:
        return int.from_bytes(self.memory[byte_offset:byte_offset + 2], "big")

    def words(self) -> list[int]:
        return [self.word(i) for i in range(0, len(self.memory) - 1, 2)]

    def hop_words(self, hop: int) -> list[int]:
        hs = self.header.hop_size_words
        base = hop * hs * 2
        return [self.word(base + 2 * k) for k in range(hs) if base + 2 * k + 2 <= len(self.memory)]

    def with_header(self, **changes) -> "TppProgram":
        return replace(self, header=replace(self.header, **changes))

    def with_flags(self, flags: TppFlags) -> "TppProgram":
        return self.with_header(flags=self.header.flags | int(flags))

    def validate(self) -> list[str]:
        """Нарушенные инварианты заголовка (пустой список: программа валидна)."""
        h = self.header
        problems = []
        if h.insn_count != len(self.instructions):
            problems.append(f"insn_count {h.insn_count} != {len(self.instructions)} instructions")
        if h.insn_count > TPP_MAX_INSTRUCTIONS:
            problems.append(f"insn_count {h.insn_count} > {TPP_MAX_INSTRUCTIONS}")
        if h.mem_len != len(self.memory):
            problems.append(f"mem_len {h.mem_len} != memory size {len(self.memory)}")
        if h.mem_len % 2:
            problems.append("mem_len must be a whole number of words")
        if h.sp > h.mem_len:
            problems.append(f"sp {h.sp} beyond mem_len {h.mem_len}")
        if h.hop_size_words and h.hop_index * h.hop_size_words * 2 > h.mem_len:
            problems.append(f"hop_index {h.hop_index} addresses past mem_len {h.mem_len} "
                            f"(hop size {h.hop_size_words} words)")
        if not 0 <= h.version <= 0xF or not 0 <= h.flags <= 0xF:
            problems.append("version/flags must fit 4 bits")
        for name, value, limit in (("hop_size_words", h.hop_size_words, 0xFF), ("hop_index", h.hop_index, 0xFF),
                                   ("sp", h.sp, 0xFFFF), ("mem_len", h.mem_len, 0xFFFF),
                                   ("session_id", h.session_id, 0xFFFF)):
            if not 0 <= value <= limit:
                problems.append(f"{name} {value} out of range")
        return problems
