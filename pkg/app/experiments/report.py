"""Консольная сводка прогона."""
from __future__ import annotations
from typing import Any

from app.experiments.runner import RunResult


def _flatten(d: dict[str, Any], prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and v and len(v) <= 16:
            out.extend(_flatten(v, key + "."))
        else:
            out.append((key, v))
    return out


def format_result(result: RunResult) -> str:
    t = result.trace
    verdict = "OK" if result.ok else f"FAIL ({len(result.problems)})"
    lines = [
        f"  Эксперимент:            {result.config.name} ({result.config.app})",
        f"  Время модели:           {t.end_ns / 1e6:.1f} мс, seed {result.config.seed}",
        f"  Пакеты:                 отправлено {t.injected}, доставлено {t.delivered}, "
        f"потеряно {t.dropped}, в пути {t.in_flight}",
        f"  Исполненных TPP:        {len(t.tpp_records)}",
        f"  Инварианты:             {verdict}",
        f"  Хэш журнала:            {result.digest[:16]}",
    ]
    width = max((len(k) for k, _ in _flatten(result.summary)), default=0)
    for k, v in _flatten(result.summary):
        lines.append(f"    {k.ljust(width)}  {v}")
    for p in result.problems[:10]:
        lines.append(f"  ! {p}")
    return "\n".join(lines)
