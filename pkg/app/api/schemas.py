from __future__ import annotations
from typing import Any, Optional
from pydantic import BaseModel, Field, field_validator, model_validator


def _validate_op(v: str) -> str:
    v2 = v.lower()
    if v2 not in ("read", "write"):
        raise ValueError("op must be 'read' or 'write'")
    return v2


def _address(v: Any) -> int:
    # "0x1234" и 4660 одинаково годятся
    n = int(v, 0) if isinstance(v, str) else int(v)
    if not 0 <= n <= 0xFFFF:
        raise ValueError(f"address {v!r} out of range")
    return n


class AppPayload(BaseModel):
    appid: int = Field(ge=0)
    name: str = ""
    session_id: Optional[int] = Field(default=None, ge=1, le=0xFFFF)


class PolicyPayload(BaseModel):
    appid: int
    op: str
    start: int
    end: int

    @field_validator("op")
    @classmethod
    def validate_op(cls, v: str) -> str:
        return _validate_op(v)

    @field_validator("start", "end", mode="before")
    @classmethod
    def validate_address(cls, v: Any) -> int:
        return _address(v)

    @model_validator(mode="after")
    def validate_range(self) -> "PolicyPayload":
        if self.start > self.end:
            raise ValueError("start must be <= end")
        return self


class RulePayload(BaseModel):
    """TPP передаётся либо байтами (tpp_hex), либо исходником (program)."""
    appid: int
    filter: dict[str, Any] = {}
    tpp_hex: Optional[str] = None
    program: Optional[str] = None
    sample_frequency: int = Field(default=1, ge=1)
    priority: int = 0

    @model_validator(mode="after")
    def validate_tpp(self) -> "RulePayload":
        if (self.tpp_hex is None) == (self.program is None):
            raise ValueError("exactly one of tpp_hex / program is required")
        return self


class AnalyzePayload(BaseModel):
    program: str
    appid: Optional[int] = None
    deny_writes: bool = False
