"""История пакета: на каждом хопе TPP складывает (SwitchID, MatchedEntryID,
InputPort). Приёмник восстанавливает путь и состояние таблиц, по которому
пакет был переслан, и проверяет его политикой netwatch."""
from __future__ import annotations
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Optional

from pydantic import BaseModel, Field

from app.apps.base import AppContext, TppApp, grant_touched
from app.apps.exceptions import TruncatedHistory
from app.endhost.records import ExecutedTppRecord
from app.netsim.tracelog import TraceLog
from app.tpp.assembler import assemble
from app.tpp.codec import encode
from app.tpp.models import TppProgram

log = logging.getLogger("apps.ndb")

NDB_SOURCE = """
PUSH [Switch:SwitchID]
PUSH [PacketMetadata:MatchedEntryID]
PUSH [PacketMetadata:InputPort]
"""


def ndb_program(hops: int = 10) -> TppProgram:
    return assemble(f".hops {hops}\n{NDB_SOURCE}")


@dataclass(frozen=True)
class HistoryHop:
    switch_id: int
    entry_id: int
    in_port: int


@dataclass(frozen=True)
class PacketHistory:
    uid: int
    flow: str
    src: str
    dst: str
    time_ns: int
    hops: tuple[HistoryHop, ...]

    @property
    def switches(self) -> list[int]:
        return [h.switch_id for h in self.hops]

    def to_dict(self) -> dict:
        return {"uid": self.uid, "flow": self.flow, "src": self.src, "dst": self.dst, "time_ns": self.time_ns,
                "hops": [[h.switch_id, h.entry_id, h.in_port] for h in self.hops]}


def build_history(record: ExecutedTppRecord) -> PacketHistory:
    if record.truncated:
        raise TruncatedHistory(f"uid={record.uid}: {record.hops} hops, only "
                               f"{record.program.hops_allocated} allocated")
    hops = []
    for i, slot in enumerate(record.slots):
        if len(slot) < 3:
            raise TruncatedHistory(f"uid={record.uid}: hop {i} carries {len(slot)} words")
        hops.append(HistoryHop(slot[0], slot[1], slot[2]))
    return PacketHistory(record.uid, record.flow, record.origin, record.dst, record.time_ns, tuple(hops))


class NetwatchPolicy(BaseModel):
    """
    permitted: разрешённые пары (switch_id, entry_id); пусто: любые.
    forbidden_entries: записи таблиц, через которые не должен идти никто.
    classes / slices: поток -> класс, класс -> коммутаторы, по которым ему
    можно ходить (изоляция классов трафика).
    """
    permitted: list[tuple[int, int]] = Field(default_factory=list)
    forbidden_entries: list[int] = Field(default_factory=list)
    classes: dict[str, str] = Field(default_factory=dict)
    slices: dict[str, list[int]] = Field(default_factory=dict)


@dataclass(frozen=True)
class Verdict:
    passed: bool
    hop: Optional[int] = None
    reason: str = ""

    def to_dict(self) -> dict:
        return {"passed": self.passed, "hop": self.hop, "reason": self.reason}


def netwatch_check(h: PacketHistory, policy: Optional[NetwatchPolicy] = None) -> Verdict:
    """Первый хоп, нарушающий политику; пустая политика пропускает всё."""
    if policy is None:
        return Verdict(True)
    permitted = {tuple(p) for p in policy.permitted}
    forbidden = set(policy.forbidden_entries)
    cls = policy.classes.get(h.flow)
    allowed_switches = set(policy.slices[cls]) if cls is not None and cls in policy.slices else None
    for i, hop in enumerate(h.hops):
        if hop.entry_id in forbidden:
            return Verdict(False, i, f"switch {hop.switch_id} forwarded by forbidden entry {hop.entry_id}")
        if permitted and (hop.switch_id, hop.entry_id) not in permitted:
            return Verdict(False, i, f"entry {hop.entry_id} on switch {hop.switch_id} is not permitted")
        if allowed_switches is not None and hop.switch_id not in allowed_switches:
            return Verdict(False, i, f"class {cls} left its slice at switch {hop.switch_id}")
    return Verdict(True)


def history_mismatches(records: Iterable[ExecutedTppRecord]) -> tuple[int, list[str]]:
    """Сверка истории с эталонным path_log симулятора."""
    checked, problems = 0, []
    for rec in records:
        try:
            hist = build_history(rec)
        except TruncatedHistory:
            continue
        truth = [HistoryHop(p.switch_id, p.matched[1], p.in_port) for p in rec.path_log]
        checked += 1
        if list(hist.hops) != truth:
            problems.append(f"uid={rec.uid}: tpp={hist.hops} path={tuple(truth)}")
    return checked, problems


class NdbApp(TppApp):
    name = "ndb"

    def __init__(self, appid: int = 3, hops: int = 10, sample_frequency: int = 1, priority: int = 0,
                 filter: Optional[dict] = None, policy: Optional[NetwatchPolicy | dict] = None) -> None:
        self.appid = appid
        self.program = ndb_program(hops)
        self.sample_frequency = sample_frequency
        self.priority = priority
        self.filter = filter if filter is not None else {"proto": 17}
        self.policy = NetwatchPolicy.model_validate(policy) if isinstance(policy, dict) else policy
        self.records: list[ExecutedTppRecord] = []
        self.histories: list[PacketHistory] = []
        self.violations: list[tuple[PacketHistory, Verdict]] = []
        self.truncated = 0

    def install(self, ctx: AppContext) -> None:
        reg = ctx.cp.register_app(self.appid, self.name)
        grant_touched(ctx.cp, self.appid, self.program)
        ctx.cp.add_tpp(self.filter, encode(self.program), self.sample_frequency, self.priority, self.appid)
        for shim in ctx.shims.values():
            shim.subscribe(reg.session_id, self.ingest)

    def ingest(self, record: ExecutedTppRecord) -> None:
        self.records.append(record)
        try:
            hist = build_history(record)
        except TruncatedHistory as e:
            self.truncated += 1
            log.debug(f"[NDB] {e}")
            return
        self.histories.append(hist)
        verdict = netwatch_check(hist, self.policy)
        if not verdict.passed:
            self.violations.append((hist, verdict))
            log.warning(f"[NDB] netwatch: uid={hist.uid} flow={hist.flow} hop {verdict.hop}: {verdict.reason}")

    def summary(self) -> dict[str, Any]:
        return {
            "histories": len(self.histories),
            "truncated": self.truncated,
            "violations": len(self.violations),
            "tpp_bytes": self.program.size,
        }

    def write_outputs(self, out_dir: Path) -> list[Path]:
        hist_path = Path(out_dir) / "histories.jsonl"
        with hist_path.open("w", encoding="utf-8") as f:
            for h in self.histories:
                f.write(json.dumps(h.to_dict()) + "\n")
        watch_path = Path(out_dir) / "netwatch.json"
        watch_path.write_text(json.dumps({
            "policy": self.policy.model_dump() if self.policy else None,
            "checked": len(self.histories),
            "violations": [{"uid": h.uid, "flow": h.flow, **v.to_dict()} for h, v in self.violations],
        }, indent=2), encoding="utf-8")
        return [hist_path, watch_path]

    def check(self, trace: TraceLog) -> list[str]:
        checked, problems = history_mismatches(self.records)
        log.info(f"[NDB] fidelity: {checked} histories, {len(problems)} mismatches")
        return problems[:20]
