"""Явный реестр пресетов приложений, которые можно запускать из CLI.

Не автообнаружение через TppApp.__subclasses__(): вспомогательные
приложения тестов не должны попадать в list-experiments.
"""
from __future__ import annotations
import math
from dataclasses import dataclass
from typing import Any, Optional

from app.apps.base import TppApp
from app.apps.conga import CongaApp
from app.apps.microburst import MicroburstApp
from app.apps.ndb import NdbApp
from app.apps.params import ParamSpec, ParamType, validate_params
from app.apps.rcp import RcpApp
from app.apps.sketch import SketchApp


@dataclass(frozen=True)
class AppMeta:
    key: str
    label: str
    cls: type[TppApp]
    params: list[ParamSpec]


APP_REGISTRY: dict[str, AppMeta] = {
    "microburst": AppMeta(
        key="microburst", label="Micro-burst monitor", cls=MicroburstApp,
        params=[
            ParamSpec("hops", ParamType.INT, 5, "Хопов в TPP", min=1, max=64, help=(
                "Сколько хопов памяти выделить в каждом TPP; пакеты с более "
                "длинным путём приходят усечёнными и не учитываются.")),
            ParamSpec("sample_frequency", ParamType.INT, 1, "1 из N пакетов", min=1, max=65535),
        ],
    ),
    "rcp": AppMeta(
        key="rcp", label="RCP* (alpha-fair)", cls=RcpApp,
        params=[
            ParamSpec("alpha", ParamType.FLOAT, math.inf, "alpha", min=0.0, max=1e6, allow_inf=True, help=(
                "Агрегация скоростей по звеньям: inf даёт max-min, 1 даёт "
                "пропорциональную справедливость.")),
            ParamSpec("a", ParamType.FLOAT, 0.5, "Вес рассогласования скорости", min=0.0, max=2.0),
            ParamSpec("b", ParamType.FLOAT, 0.25, "Вес очереди", min=0.0, max=2.0),
            ParamSpec("period_ms", ParamType.FLOAT, 10.0, "Период обновления T, мс", min=0.1, max=1000.0),
            ParamSpec("initial_rate_mbps", ParamType.FLOAT, 1.0, "Стартовая скорость, Мбит/с", min=0.001, max=1e5),
            ParamSpec("max_hops", ParamType.INT, 8, "Хопов в пробе сбора", min=2, max=64, help=(
                "Проба сбора исполняется и на обратном пути, поэтому нужно "
                "не меньше двух длин пути.")),
            ParamSpec("max_retries", ParamType.INT, 1, "Повторов после проигранного CSTORE", min=0, max=10),
        ],
    ),
    "ndb": AppMeta(
        key="ndb", label="Packet histories + netwatch", cls=NdbApp,
        params=[
            ParamSpec("hops", ParamType.INT, 10, "Хопов в TPP", min=1, max=64),
            ParamSpec("sample_frequency", ParamType.INT, 1, "1 из N пакетов", min=1, max=65535),
        ],
    ),
    "conga": AppMeta(
        key="conga", label="CONGA* load balancing", cls=CongaApp,
        params=[
            ParamSpec("mode", ParamType.ENUM, "max", "Метрика пути", choices=["max", "sum"]),
            ParamSpec("baseline", ParamType.ENUM, "conga", "Выбор пути", choices=["conga", "ecmp"], help=(
                "ecmp: равное статическое разбиение по хешу, без проб.")),
            ParamSpec("probe_interval_ms", ParamType.FLOAT, 4.0, "Период проб, мс", min=0.05, max=1000.0),
            ParamSpec("gap_us", ParamType.FLOAT, math.inf, "Порог flowlet, мкс", min=1.0, max=1e6,
                      allow_inf=True, help="inf: 2 x измеренный RTT."),
            ParamSpec("discount_own", ParamType.BOOL, True, "Не считать собственную нагрузку"),
        ],
    ),
    "sketch": AppMeta(
        key="sketch", label="Bitmap sketch (distinct destinations)", cls=SketchApp,
        params=[
            ParamSpec("bits", ParamType.INT, 1024, "Бит на звено", min=8, max=1 << 20),
            ParamSpec("sample_frequency", ParamType.INT, 10, "1 из N пакетов", min=1, max=65535),
            ParamSpec("push_interval_ms", ParamType.FLOAT, 10_000.0, "Период отправки коллектору, мс",
                      min=0.1, max=1e7),
        ],
    ),
}


def build_app(app_key: str, params: dict, netwatch: Optional[dict] = None, seed: int = 0) -> TppApp:
    meta = APP_REGISTRY.get(app_key)
    if meta is None:
        raise ValueError(f"unknown app preset: {app_key!r}")
    clean: dict[str, Any] = validate_params(meta.params, params)
    if app_key == "ndb":
        clean["policy"] = netwatch
    if app_key == "conga":
        if math.isinf(clean["gap_us"]):
            clean["gap_us"] = None
        clean["seed"] = seed
    if app_key == "sketch":
        clean["seed"] = seed
    return meta.cls(**clean)
