from __future__ import annotations
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from app.endhost.control_plane import TppControlPlane
from app.endhost.shim import TppShim
from app.netsim.simulator import Simulator
from app.netsim.tracelog import TraceLog
from app.netsim.workload import FlowSource
from app.tpp.analyzer import analyze
from app.tpp.models import TppProgram


@dataclass
class AppContext:
    """Всё, что приложение получает при установке в прогон."""
    sim: Simulator
    cp: TppControlPlane
    shims: dict[str, TppShim]
    sources: dict[str, FlowSource] = field(default_factory=dict)
    seed: int = 0


class TppApp(ABC):
    """
    Приложение поверх интерфейса TPP. Видит сеть только через TPP-CP
    (регистрация, политики, правила), агрегаторы shim и таймеры симулятора.
    Оракулы (shadow log, path_log) доступны только в check().

    Контракт:
      - install() вызывается до запуска симулятора;
      - summary() и write_outputs() после run_until();
      - check() возвращает список нарушенных инвариантов (пусто: всё ок).
    """
    name: str = "app"

    @abstractmethod
    def install(self, ctx: AppContext) -> None:
        raise NotImplementedError

    @abstractmethod
    def summary(self) -> dict[str, Any]:
        raise NotImplementedError

    def write_outputs(self, out_dir: Path) -> list[Path]:
        return []

    def check(self, trace: TraceLog) -> list[str]:
        return []


def grant_touched(cp: TppControlPlane, appid: int, program: TppProgram) -> None:
    """Выдаёт приложению ровно те диапазоны, которые трогает программа."""
    for r in analyze(program).touched_ranges:
        cp.grant(appid, r.op, r.start, r.end)
