"""HTTP-агент TPP-CP: регистрация приложений, политики и правила add_tpp.
Каждое изменение сначала проходит через TppControlPlane (анализ,
конфликты), затем пишется в БД."""
from __future__ import annotations
import logging

from fastapi import APIRouter, HTTPException, Request

from app.api.schemas import AnalyzePayload, AppPayload, PolicyPayload, RulePayload
from app.endhost.control_plane import FlowFilter
from app.endhost.exceptions import PolicyConflict, PolicyViolation, UnknownApp, UnknownRule
from app.tpp.analyzer import analyze
from app.tpp.assembler import assemble
from app.tpp.codec import encode
from app.tpp.exceptions import TppError

log = logging.getLogger("api.tppcp")
router = APIRouter()


@router.get("/healthz")
def healthz():
    return {"status": "ok"}


@router.get("/apps")
def list_apps(request: Request):
    cp = request.app.state.cp
    return {"apps": [{"appid": a.appid, "session_id": a.session_id, "name": a.name} for a in cp.apps]}


@router.post("/apps")
async def register_app(payload: AppPayload, request: Request):
    cp = request.app.state.cp
    try:
        reg = cp.register_app(payload.appid, payload.name, payload.session_id)
    except (PolicyConflict, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    app = await request.app.state.apps_repo.upsert(reg.appid, reg.session_id, reg.name)
    return {"app": app}


@router.get("/policies")
def list_policies(request: Request):
    cp = request.app.state.cp
    return {"policies": [{"appid": p.appid, "op": p.op.value, "start": p.start, "end": p.end}
                         for p in cp.policies]}


@router.post("/policies")
async def grant_policy(payload: PolicyPayload, request: Request):
    cp = request.app.state.cp
    try:
        policy = cp.grant(payload.appid, payload.op, payload.start, payload.end)
    except UnknownApp as e:
        raise HTTPException(status_code=404, detail=str(e))
    except (PolicyConflict, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    row = await request.app.state.policy_repo.add(policy.appid, policy.op.value, policy.start, policy.end)
    return {"policy": row}


@router.get("/rules")
def list_rules(request: Request):
    return {"rules": [r.to_dict() for r in request.app.state.cp.list_rules()]}


@router.post("/rules")
async def add_rule(payload: RulePayload, request: Request):
    cp = request.app.state.cp
    try:
        raw = bytes.fromhex(payload.tpp_hex) if payload.tpp_hex is not None else encode(assemble(payload.program))
        flt = FlowFilter.from_dict(payload.filter)
        rule_id = cp.add_tpp(flt, raw, payload.sample_frequency, payload.priority, payload.appid)
    except UnknownApp as e:
        raise HTTPException(status_code=404, detail=str(e))
    except PolicyViolation as e:
        raise HTTPException(status_code=400, detail={"error": str(e), "report": e.report.to_dict()})
    except (TppError, PolicyConflict, ValueError) as e:
        raise HTTPException(status_code=400, detail=str(e))
    rule = next(r for r in cp.list_rules() if r.rule_id == rule_id)
    await request.app.state.rule_repo.create(rule.appid, flt.to_dict(), rule.tpp_bytes.hex(),
                                             rule.sample_frequency, rule.priority, rule_id=rule_id)
    return {"rule": rule.to_dict()}


@router.delete("/rules/{rule_id}")
async def remove_rule(rule_id: int, request: Request):
    try:
        request.app.state.cp.remove(rule_id)
    except UnknownRule as e:
        raise HTTPException(status_code=404, detail=str(e))
    await request.app.state.rule_repo.delete(rule_id)
    return {"status": "ok"}


@router.post("/analyze")
def analyze_program(payload: AnalyzePayload, request: Request):
    """Проверка без установки: что TPP трогает и пропустили бы его."""
    cp = request.app.state.cp
    try:
        program = assemble(payload.program)
    except TppError as e:
        raise HTTPException(status_code=400, detail=str(e))
    policies = cp.policies_for(payload.appid) if payload.appid is not None else None
    report = analyze(program, policies, payload.appid or 0, deny_writes=payload.deny_writes or cp.deny_writes)
    return {"size": program.size, "report": report.to_dict(), "admissible": report.admissible}
