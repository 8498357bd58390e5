"""Текстовый ассемблер TPP.

Грамматика (регистр опкодов и директив не важен, `#` начинает комментарий,
`\\` в конце строки переносит инструкцию на следующую):

    .hops 5                     # хопов в памяти пакета (по умолчанию TPP_DEFAULT_HOPS)
    .hop_size 3                 # слов на хоп (по умолчанию выводится из программы)
    .mem_len 30                 # байт памяти (перекрывает .hops)
    .sp 0 / .hop_index 0 / .session 7 / .flags 0 / .standalone
    PUSH   [Switch:SwitchID]
    LOAD   [Link:TX-Utilization], [Packet:Hop[1]]
    CSTORE [Link:AppSpecific_0], [Packet:Hop[0]], [Packet:Hop[1]]
    PacketMemory:
        Hop1: 3, 4, 80          # хопы нумеруются с единицы
        Word12: 0x10            # отдельное слово памяти, с нуля

Адрес можно задать и числом: `[0x4002]`.
"""
from __future__ import annotations
import re

from app.config import MTU, TPP_DEFAULT_HOPS, TPP_MAX_INSTRUCTIONS
from app.tpp.exceptions import (
    AssemblyError, BadOperandArity, MemoryTooLarge, NoInstructions, TooManyInstructions, UnknownMnemonic,
)
from app.tpp.memory_map import Address, lookup, resolve_address
from app.tpp.models import BLOCK_WORDS, Instruction, Opcode, TppFlags, TppHeader, TppProgram

_OPERAND_RE = re.compile(r"\[(?:[^\[\]]|\[[^\]]*\])*\]")
_PACKET_RE = re.compile(r"^\[\s*packet\s*:\s*hop\s*\[\s*(\d+)\s*\]\s*\]$", re.IGNORECASE)
_RAW_RE = re.compile(r"^\[\s*(0x[0-9a-fA-F]+|\d+)\s*\]$")
_MEMORY_LINE_RE = re.compile(r"^(hop|word)\s*(\d+)\s*:\s*(.*)$", re.IGNORECASE)

# (число switch-операндов, число packet-операндов)
_SIGNATURES: dict[Opcode, tuple[int, int]] = {
    Opcode.LOAD: (1, 1),
    Opcode.STORE: (1, 1),
    Opcode.PUSH: (1, 0),
    Opcode.POP: (1, 0),
    Opcode.CSTORE: (1, 2),
    Opcode.CEXEC: (1, 1),
}

_DIRECTIVES = {".hops", ".hop_size", ".mem_len", ".sp", ".hop_index", ".session", ".flags", ".standalone"}


def _strip_comment(line: str) -> str:
    return line.split("#", 1)[0].strip()


def _logical_lines(source: str) -> list[tuple[int, str]]:
    out: list[tuple[int, str]] = []
    pending, start = "", 0
    for lineno, raw in enumerate(source.splitlines(), 1):
        line = _strip_comment(raw)
        if not pending:
            start = lineno
        if line.endswith("\\"):
            pending += line[:-1] + " "
            continue
        line = (pending + line).strip()
        pending = ""
        if line:
            out.append((start, line))
    if pending.strip():
        out.append((start, pending.strip()))
    return out


def _int(text: str, lineno: int) -> int:
    try:
        return int(text.strip(), 0)
    except ValueError:
        raise AssemblyError(f"line {lineno}: expected a number, got {text.strip()!r}") from None


def _switch_operand(token: str, lineno: int) -> int:
    m = _RAW_RE.match(token)
    if m:
        raw = int(m.group(1), 0)
        if not 0 <= raw <= 0xFFFF:
            raise AssemblyError(f"line {lineno}: address {token} out of 16-bit range")
        return raw
    if _PACKET_RE.match(token):
        raise BadOperandArity(f"line {lineno}: expected a switch address, got {token}")
    try:
        return resolve_address(token).raw
    except UnknownMnemonic as e:
        raise UnknownMnemonic(f"line {lineno}: {e}") from None


def _packet_operand(token: str, lineno: int) -> int:
    m = _PACKET_RE.match(token)
    if m is None:
        raise BadOperandArity(f"line {lineno}: expected [Packet:Hop[k]], got {token}")
    return int(m.group(1))


def _parse_instruction(line: str, lineno: int) -> Instruction:
    mnemonic, *tail = line.split(None, 1)
    rest = tail[0] if tail else ""
    try:
        opcode = Opcode[mnemonic.strip().upper()]
    except KeyError:
        raise UnknownMnemonic(f"line {lineno}: unknown opcode {mnemonic!r}") from None
    tokens = _OPERAND_RE.findall(rest)
    leftover = _OPERAND_RE.sub("", rest).replace(",", "").strip()
    if leftover:
        raise BadOperandArity(f"line {lineno}: unexpected text {leftover!r}")
    n_switch, n_packet = _SIGNATURES[opcode]
    if len(tokens) != n_switch + n_packet:
        raise BadOperandArity(
            f"line {lineno}: {opcode.name} takes {n_switch + n_packet} operand(s), got {len(tokens)}")
    address = _switch_operand(tokens[0], lineno)
    slots = [_packet_operand(t, lineno) for t in tokens[1:]]
    try:
        return Instruction(opcode, address, *slots)
    except ValueError as e:
        raise BadOperandArity(f"line {lineno}: {e}") from None


def _words_needed(insn: Instruction) -> int:
    if insn.opcode == Opcode.CEXEC:
        return insn.slot + BLOCK_WORDS
    if insn.opcode == Opcode.CSTORE:
        return max(insn.slot, insn.post_slot) + 1
    if insn.opcode in (Opcode.LOAD, Opcode.STORE):
        return insn.slot + 1
    return 0


def assemble(source: str, mtu: int = MTU) -> TppProgram:
    directives: dict[str, int] = {}
    instructions: list[Instruction] = []
    hop_init: dict[int, list[int]] = {}
    word_init: dict[int, int] = {}
    in_memory = False

    for lineno, line in _logical_lines(source):
        head = line.split(None, 1)[0].lower()
        if head.rstrip(":") == "packetmemory" and line.rstrip().endswith(":"):
            in_memory = True
            continue
        if in_memory:
            m = _MEMORY_LINE_RE.match(line)
            if m is None:
                raise AssemblyError(f"line {lineno}: expected HopN: or WordN: inside PacketMemory")
            index = int(m.group(2))
            values = [_int(v, lineno) & 0xFFFF for v in m.group(3).split(",") if v.strip()]
            if m.group(1).lower() == "hop":
                if index < 1:
                    raise AssemblyError(f"line {lineno}: hops are numbered from 1")
                hop_init[index - 1] = values
            else:
                for k, v in enumerate(values):
                    word_init[index + k] = v
            continue
        if head.startswith("."):
            if head not in _DIRECTIVES:
                raise AssemblyError(f"line {lineno}: unknown directive {head}")
            if head == ".standalone":
                directives[".flags"] = directives.get(".flags", 0) | int(TppFlags.STANDALONE)
            else:
                parts = line.split(None, 1)
                if len(parts) != 2:
                    raise AssemblyError(f"line {lineno}: {head} needs a value")
                directives[head] = _int(parts[1], lineno)
            continue
        instructions.append(_parse_instruction(line, lineno))

    if not instructions:
        raise NoInstructions("program has no instructions")
    if len(instructions) > TPP_MAX_INSTRUCTIONS:
        raise TooManyInstructions(f"{len(instructions)} instructions, at most {TPP_MAX_INSTRUCTIONS} allowed")

    pushes = sum(1 for i in instructions if i.opcode == Opcode.PUSH)
    hop_size = directives.get(".hop_size")
    if hop_size is None:
        hop_size = max([pushes, *(_words_needed(i) for i in instructions),
                        *(len(v) for v in hop_init.values())])
    hops = directives.get(".hops", TPP_DEFAULT_HOPS)
    mem_len = directives.get(".mem_len", hops * hop_size * 2)
    if mem_len % 2 or not 0 <= mem_len <= 0xFFFF:
        raise AssemblyError(f".mem_len {mem_len} must be an even byte count")

    memory = bytearray(mem_len)

    def put(word: int, value: int) -> None:
        if 2 * word + 2 > mem_len:
            raise AssemblyError(f"initial value for word {word} is beyond mem_len {mem_len}")
        memory[2 * word:2 * word + 2] = value.to_bytes(2, "big")

    for hop, values in sorted(hop_init.items()):
        if len(values) > hop_size:
            raise AssemblyError(f"Hop{hop + 1} has {len(values)} values, hop size is {hop_size}")
        for k, v in enumerate(values):
            put(hop * hop_size + k, v)
    for word, value in sorted(word_init.items()):
        put(word, value)

    header = TppHeader(
        flags=directives.get(".flags", 0), insn_count=len(instructions), hop_size_words=hop_size,
        hop_index=directives.get(".hop_index", 0), sp=directives.get(".sp", 0), mem_len=mem_len,
        session_id=directives.get(".session", 0),
    )
    program = TppProgram(header, tuple(instructions), bytes(memory))
    problems = program.validate()
    if problems:
        raise AssemblyError("; ".join(problems))
    if program.size > mtu:
        raise MemoryTooLarge(f"TPP is {program.size} bytes, MTU budget is {mtu}")
    return program


def _operand_text(addr: Address) -> str:
    return f"[0x{addr.raw:04x}]" if not addr.exists else str(addr)


def format_instruction(insn: Instruction) -> str:
    addr = _operand_text(lookup(insn.address))
    name = insn.opcode.name
    if insn.opcode in (Opcode.PUSH, Opcode.POP):
        return f"{name} {addr}"
    if insn.opcode == Opcode.CSTORE:
        return f"{name} {addr}, [Packet:Hop[{insn.slot}]], [Packet:Hop[{insn.post_slot}]]"
    return f"{name} {addr}, [Packet:Hop[{insn.slot}]]"


def disassemble(p: TppProgram) -> str:
    """Канонический текст: assemble(disassemble(p)) кодируется в те же байты."""
    h = p.header
    lines = [f".hop_size {h.hop_size_words}", f".mem_len {h.mem_len}"]
    for directive, value in ((".sp", h.sp), (".hop_index", h.hop_index), (".session", h.session_id),
                             (".flags", h.flags)):
        if value:
            lines.append(f"{directive} {value}")
    lines += [format_instruction(i) for i in p.instructions]

    words = p.words()
    memory_lines: list[str] = []
    covered = 0
    if h.hop_size_words:
        covered = p.hops_allocated * h.hop_size_words
        for hop in range(p.hops_allocated):
            chunk = words[hop * h.hop_size_words:(hop + 1) * h.hop_size_words]
            if any(chunk):
                memory_lines.append(f"    Hop{hop + 1}: " + ", ".join(str(w) for w in chunk))
    for word in range(covered, len(words)):
        if words[word]:
            memory_lines.append(f"    Word{word}: {words[word]}")
    if memory_lines:
        lines += ["PacketMemory:", *memory_lines]
    return "\n".join(lines) + "\n"

