"""Командная строка: ассемблер, дизассемблер, анализатор TPP и прогон
экспериментов.

Примеры:
  python -m app.cli asm probe.tpp -o probe.bin
  python -m app.cli disasm probe.bin
  python -m app.cli analyze rcp_update.tpp --deny-writes
  python -m app.cli run experiments/rcp_maxmin.json --seed 7 --out out/rcp
  python -m app.cli list-experiments

Коды выхода: 0 успех, 1 анализатор нашёл нарушения, 2 ошибка входных
данных, 3 нарушен инвариант прогона.
"""
from __future__ import annotations
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from app.config import LOG_LEVEL
from app.experiments.config import list_experiments, load_experiment
from app.experiments.report import format_result
from app.experiments.runner import run_experiment
from app.netsim.exceptions import InvariantViolation, TopologyError
from app.tpp.analyzer import AccessOp, MemoryPolicy, analyze
from app.tpp.assembler import assemble, disassemble
from app.tpp.codec import decode, encode
from app.tpp.exceptions import TppError
from app.tpp.models import TppProgram
from app.apps.exceptions import AppError
from app.endhost.exceptions import EndhostError

log = logging.getLogger("cli")

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INPUT = 2
EXIT_INVARIANT = 3


class InputError(Exception):
    """Вход не читается или не разбирается."""


def _read_program(path: str) -> TppProgram:
    """Исходник или бинарный TPP: сначала пробуем как текст."""
    try:
        raw = sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from e
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        return decode(raw)
    if "\x00" in text:
        return decode(raw)
    return assemble(text)


def _parse_grant(text: str) -> tuple[AccessOp, int, int]:
    """read:0x1000-0x10ff или write:0x2005"""
    try:
        op, _, span = text.partition(":")
        start, _, end = span.partition("-")
        return AccessOp(op.lower()), int(start, 0), int(end or start, 0)
    except ValueError as e:
        raise InputError(f"bad --grant {text!r}: expected op:start[-end]") from e


def cmd_asm(args) -> int:
    try:
        source = Path(args.file).read_text(encoding="utf-8") if args.file != "-" else sys.stdin.read()
    except OSError as e:
        raise InputError(str(e)) from e
    data = encode(assemble(source))
    if args.out:
        Path(args.out).write_bytes(data)
        print(f"{len(data)} bytes -> {args.out}")
    elif args.hex:
        print(data.hex())
    else:
        sys.stdout.buffer.write(data)
    return EXIT_OK


def cmd_disasm(args) -> int:
    try:
        raw = sys.stdin.buffer.read() if args.file == "-" else Path(args.file).read_bytes()
    except OSError as e:
        raise InputError(str(e)) from e
    if args.hex:
        raw = bytes.fromhex(raw.decode("ascii").strip())
    print(disassemble(decode(raw)), end="")
    return EXIT_OK


def cmd_analyze(args) -> int:
    program = _read_program(args.file)
    policies = None
    if args.grant:
        policies = [MemoryPolicy(args.appid, op, start, end) for op, start, end in map(_parse_grant, args.grant)]
    report = analyze(program, policies, args.appid, deny_writes=args.deny_writes)
    if args.json:
        print(json.dumps({"size": program.size, **report.to_dict()}, indent=2))
    else:
        print(f"size: {program.size} bytes, {len(program.instructions)} instructions")
        for r in report.touched_ranges:
            print(f"  {r.op.value:5} [{r.start:#06x}, {r.end:#06x}]")
        for h in report.data_hazards:
            print(f"  hazard: {h.kind} between #{h.first} and #{h.second} on {h.location}")
        for v in report.violations:
            print(f"  violation: #{v.index}: {v.reason}")
        print("admissible" if report.admissible else "REJECTED")
    return EXIT_OK if report.admissible else EXIT_VIOLATIONS


def cmd_run(args) -> int:
    cfg, base = load_experiment(args.experiment)
    if args.seed is not None:
        cfg = cfg.model_copy(update={"seed": args.seed})
    if args.duration_ms is not None:
        cfg = cfg.model_copy(update={"duration_ms": args.duration_ms})
    result = run_experiment(cfg, args.out, base, strict=False)
    print(format_result(result))
    if not result.ok:
        raise InvariantViolation(f"{cfg.name}: {len(result.problems)} invariant violations")
    return EXIT_OK


def cmd_list(args) -> int:
    for key, cfg in list_experiments(Path(args.dir) if args.dir else None):
        print(f"{key:16} app={cfg.app:10} {cfg.duration_ms:>8.0f} ms  {cfg.description}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tpp", description="Tiny packet programs toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("asm", help="assemble source into a TPP binary")
    p.add_argument("file")
    p.add_argument("-o", "--out")
    p.add_argument("--hex", action="store_true", help="print hex instead of raw bytes")
    p.set_defaults(func=cmd_asm)

    p = sub.add_parser("disasm", help="decode a TPP binary into canonical source")
    p.add_argument("file")
    p.add_argument("--hex", action="store_true", help="input is hex text")
    p.set_defaults(func=cmd_disasm)

    p = sub.add_parser("analyze", help="static access analysis")
    p.add_argument("file", help="source or binary TPP")
    p.add_argument("--deny-writes", action="store_true")
    p.add_argument("--appid", type=int, default=0)
    p.add_argument("--grant", action="append", help="op:start[-end], repeatable; enables policy checks")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="run an experiment preset")
    p.add_argument("experiment", help="experiment JSON or bundled preset name")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--duration-ms", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("list-experiments", help="list bundled experiments")
    p.add_argument("--dir")
    p.set_defaults(func=cmd_list)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level="DEBUG" if args.verbose else LOG_LEVEL,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvariantViolation as e:
        log.error(f"[CLI] {e}")
        return EXIT_INVARIANT
    except (InputError, TppError, TopologyError, AppError, EndhostError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
