"""TPP-CP: реестр приложений, политики доступа к памяти коммутаторов и
таблица правил (фильтр -> TPP).

Правило устанавливается только если статический анализ TPP не нашёл
обращений вне политик приложения. На провод попадает 16-битный session_id,
64-битный appid живёт только здесь.

Чтение таблицы правил идёт по неизменяемому снимку (кортеж), запись
(установка/удаление) под блокировкой: shim может читать из другого потока.
"""
from __future__ import annotations
import logging
import threading
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from app.netsim.packet import Headers, ip, ip_str
from app.tpp.analyzer import AccessOp, AnalysisReport, MemoryPolicy, analyze, ranges_overlap
from app.tpp.codec import decode, encode
from app.tpp.models import TppProgram
from app.endhost.exceptions import PolicyConflict, PolicyViolation, UnknownApp, UnknownRule

log = logging.getLogger("endhost.tppcp")

MAX_SESSION_ID = 0xFFFF


@dataclass(frozen=True)
class FlowFilter:
    """5-tuple с wildcard: None совпадает с чем угодно."""
    src_ip: Optional[int] = None
    dst_ip: Optional[int] = None
    proto: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None

    def matches(self, h: Headers) -> bool:
        return all(want is None or want == got for want, got in (
            (self.src_ip, h.src_ip), (self.dst_ip, h.dst_ip), (self.proto, h.proto),
            (self.src_port, h.src_port), (self.dst_port, h.dst_port)))

    @classmethod
    def from_dict(cls, d: Optional[dict]) -> "FlowFilter":
        d = dict(d or {})
        unknown = set(d) - {"src_ip", "dst_ip", "proto", "src_port", "dst_port"}
        if unknown:
            raise ValueError(f"unknown filter fields: {sorted(unknown)}")
        for key in ("src_ip", "dst_ip"):
            if isinstance(d.get(key), str):
                d[key] = None if d[key] in ("", "*") else ip(d[key])
        return cls(**d)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {}
        for key in ("src_ip", "dst_ip"):
            if getattr(self, key) is not None:
                out[key] = ip_str(getattr(self, key))
        for key in ("proto", "src_port", "dst_port"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        return out


@dataclass(frozen=True)
class FilterRule:
    rule_id: int
    appid: int
    filter: FlowFilter
    tpp_bytes: bytes
    sample_frequency: int
    priority: int
    program: TppProgram = field(compare=False, repr=False)

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "appid": self.appid, "filter": self.filter.to_dict(),
                "tpp_hex": self.tpp_bytes.hex(), "sample_frequency": self.sample_frequency,
                "priority": self.priority}


@dataclass(frozen=True)
class AppRegistration:
    appid: int
    session_id: int
    name: str = ""


class TppControlPlane:
    def __init__(self, deny_writes: bool = False) -> None:
        self.deny_writes = deny_writes
        self._lock = threading.RLock()
        self._apps: dict[int, AppRegistration] = {}
        self._by_session: dict[int, AppRegistration] = {}
        self._policies: list[MemoryPolicy] = []
        self._rules: tuple[FilterRule, ...] = ()
        self._next_rule_id = 1

    # --- приложения и политики -------------------------------------------------

    def register_app(self, appid: int, name: str = "", session_id: Optional[int] = None) -> AppRegistration:
        with self._lock:
            if appid in self._apps:
                reg = self._apps[appid]
                if session_id is not None and session_id != reg.session_id:
                    raise PolicyConflict(f"app {appid} already bound to session {reg.session_id}")
                return reg
            if session_id is None:
                session_id = next((s for s in range(1, MAX_SESSION_ID + 1) if s not in self._by_session), None)
                if session_id is None:
                    raise PolicyConflict("no free session ids")
            elif session_id in self._by_session:
                raise PolicyConflict(f"session {session_id} already used by app {self._by_session[session_id].appid}")
            if not 1 <= session_id <= MAX_SESSION_ID:
                raise ValueError(f"session id {session_id} out of range")
            reg = AppRegistration(appid, session_id, name)
            self._apps[appid] = reg
            self._by_session[session_id] = reg
        log.info(f"[TPPCP] app {appid} ({name or '-'}) -> session {session_id}")
        return reg

    def app(self, appid: int) -> AppRegistration:
        reg = self._apps.get(appid)
        if reg is None:
            raise UnknownApp(f"app {appid} is not registered")
        return reg

    def app_for_session(self, session_id: int) -> Optional[AppRegistration]:
        return self._by_session.get(session_id)

    @property
    def apps(self) -> list[AppRegistration]:
        return sorted(self._apps.values(), key=lambda a: a.session_id)

    def grant(self, appid: int, op: AccessOp | str, start: int, end: int) -> MemoryPolicy:
        """Диапазон записи принадлежит приложению монопольно."""
        policy = MemoryPolicy(appid, AccessOp(op), start, end)
        with self._lock:
            self.app(appid)
            if policy.op == AccessOp.WRITE:
                for other in self._policies:
                    if (other.op == AccessOp.WRITE and other.appid != appid
                            and ranges_overlap((other.start, other.end), (start, end))):
                        raise PolicyConflict(f"write range [{start:#06x}, {end:#06x}] overlaps app {other.appid} "
                                             f"range [{other.start:#06x}, {other.end:#06x}]")
            if policy not in self._policies:
                self._policies.append(policy)
        log.info(f"[TPPCP] grant app={appid} {policy.op.value} [{start:#06x}, {end:#06x}]")
        return policy

    def policies_for(self, appid: int) -> list[MemoryPolicy]:
        return [p for p in self._policies if p.appid == appid]

    @property
    def policies(self) -> list[MemoryPolicy]:
        return list(self._policies)

    # --- правила ---------------------------------------------------------------

    def check(self, program: TppProgram, appid: int) -> AnalysisReport:
        return analyze(program, self.policies_for(appid), appid, deny_writes=self.deny_writes)

    def admit(self, program: TppProgram, appid: int) -> TppProgram:
        """Проверка TPP по политикам приложения; возвращает программу с его session_id."""
        reg = self.app(appid)
        report = self.check(program, appid)
        if not report.admissible:
            reasons = "; ".join(v.reason for v in report.violations)
            log.warning(f"[TPPCP] TPP denied for app {appid}: {reasons}")
            raise PolicyViolation(f"TPP rejected: {reasons}", report)
        return program.with_header(session_id=reg.session_id)

    def add_tpp(self, filter: FlowFilter | dict | None, tpp_bytes: bytes, sample_frequency: int = 1,
                priority: int = 0, appid: int = 0, rule_id: Optional[int] = None) -> int:
        """Возвращает rule_id. PolicyViolation: TPP не установлен."""
        if sample_frequency < 1:
            raise ValueError(f"sample_frequency must be >= 1, got {sample_frequency}")
        flt = filter if isinstance(filter, FlowFilter) else FlowFilter.from_dict(filter)
        self.app(appid)
        program = self.admit(decode(bytes(tpp_bytes)), appid)
        with self._lock:
            if rule_id is None:
                rule_id = self._next_rule_id
            elif any(r.rule_id == rule_id for r in self._rules):
                raise PolicyConflict(f"rule {rule_id} already exists")
            self._next_rule_id = max(self._next_rule_id, rule_id + 1)
            rule = FilterRule(rule_id, appid, flt, encode(program), sample_frequency, priority, program)
            self._rules = tuple(sorted(self._rules + (rule,), key=lambda r: (-r.priority, r.rule_id)))
        log.info(f"[TPPCP] rule {rule_id}: app={appid} prio={priority} N={sample_frequency} {flt.to_dict()}")
        return rule_id

    def remove(self, rule_id: int) -> FilterRule:
        with self._lock:
            rule = next((r for r in self._rules if r.rule_id == rule_id), None)
            if rule is None:
                raise UnknownRule(f"rule {rule_id} does not exist")
            self._rules = tuple(r for r in self._rules if r.rule_id != rule_id)
        log.info(f"[TPPCP] rule {rule_id} removed")
        return rule

    def list_rules(self) -> list[FilterRule]:
        return list(self._rules)

    def match(self, headers: Headers) -> Optional[FilterRule]:
        """Первое совпадение в порядке приоритета: не больше одного TPP на пакет."""
        for rule in self._rules:
            if rule.filter.matches(headers):
                return rule
        return None

    # --- персистентность ---------------------------------------------------------

    @classmethod
    async def hydrate(cls, apps_repo, policy_repo, rule_repo, deny_writes: bool = False) -> "TppControlPlane":
        cp = cls(deny_writes)
        for a in await apps_repo.list_all():
            cp.register_app(a["appid"], a["name"], a["session_id"])
        for p in await policy_repo.list_all():
            cp.grant(p["appid"], p["op"], p["start_addr"], p["end_addr"])
        for r in await rule_repo.list_all():
            cp.add_tpp(r["filter"], bytes.fromhex(r["tpp_hex"]), r["sample_frequency"], r["priority"],
                       r["appid"], rule_id=r["id"])
        log.info(f"[TPPCP] hydrated: {len(cp._apps)} apps, {len(cp._policies)} policies, {len(cp._rules)} rules")
        return cp


def bootstrap(cp: TppControlPlane, apps: Iterable[dict]) -> None:
    """Загрузка из JSON-документа: [{"appid", "name", "session_id"?,
    "policies": [{"op", "start", "end"}], "rules": [{"filter", "tpp_hex" | "program",
    "sample_frequency", "priority"}]}]."""
    for a in apps:
        cp.register_app(int(a["appid"]), a.get("name", ""), a.get("session_id"))
        for p in a.get("policies", []):
            cp.grant(int(a["appid"]), p["op"], int(str(p["start"]), 0), int(str(p["end"]), 0))
        for r in a.get("rules", []):
            tpp = r.get("program")
            if isinstance(tpp, TppProgram):
                raw = encode(tpp)
            else:
                raw = bytes.fromhex(r["tpp_hex"])
            cp.add_tpp(r.get("filter"), raw, int(r.get("sample_frequency", 1)), int(r.get("priority", 0)),
                       int(a["appid"]))
