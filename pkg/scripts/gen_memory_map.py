"""Перегенерировать docs/memory_map.md из таблиц app/tpp/memory_map.py.

Запуск: python -m scripts.gen_memory_map [--out docs/memory_map.md] [--check]
--check: ничего не пишет, код выхода 1, если документ устарел.
"""
import argparse
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.tpp.memory_map import render_markdown


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="docs/memory_map.md")
    ap.add_argument("--check", action="store_true")
    args = ap.parse_args()

    text = render_markdown()
    if args.check:
        current = open(args.out, encoding="utf-8").read() if os.path.exists(args.out) else ""
        if current != text:
            print(f"{args.out} is stale, rerun without --check", file=sys.stderr)
            sys.exit(1)
        print(f"{args.out} is up to date")
        return
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(text)
    print(f"wrote {args.out} ({len(text.splitlines())} lines)")


if __name__ == "__main__":
    main()
