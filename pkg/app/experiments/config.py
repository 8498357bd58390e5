"""Описание прогона: какая топология, какая нагрузка, какое приложение и с
какими параметрами. Пути к topology/workload берутся относительно файла
эксперимента, затем относительно корня репозитория."""
from __future__ import annotations
import hashlib
import json
from pathlib import Path
from typing import Any, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from app.apps.registry import APP_REGISTRY
from app.apps.params import validate_params
from app.config import MTU, MAX_MTU, SIM_SEED
from app.netsim.exceptions import ParseError

REPO_ROOT = Path(__file__).resolve().parents[2]


class ExperimentConfig(BaseModel):
    name: str
    app: str
    topology: Union[str, dict]
    workload: Union[str, dict, None] = None
    duration_ms: float = Field(gt=0)
    seed: int = SIM_SEED
    params: dict[str, Any] = Field(default_factory=dict)
    netwatch: Optional[dict] = None
    record_shadow: bool = True
    deny_writes: bool = False
    mtu: int = Field(default=MTU, ge=64, le=MAX_MTU)
    description: str = ""

    @field_validator("app")
    @classmethod
    def _known_app(cls, v: str) -> str:
        if v not in APP_REGISTRY:
            raise ValueError(f"unknown app preset {v!r}, known: {sorted(APP_REGISTRY)}")
        return v

    def validated_params(self) -> dict:
        return validate_params(APP_REGISTRY[self.app].params, self.params)

    @property
    def duration_ns(self) -> int:
        return int(self.duration_ms * 1_000_000)

    def config_hash(self) -> str:
        """sha256 канонического JSON конфига."""
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()


def resolve_ref(ref: Union[str, dict, None], base: Optional[Path]) -> Union[Path, dict, None]:
    if ref is None or isinstance(ref, dict):
        return ref
    candidates = [Path(ref)]
    if base is not None:
        candidates.insert(0, base / ref)
    candidates.append(REPO_ROOT / ref)
    for c in candidates:
        if c.is_file():
            return c
    raise ParseError(f"file not found: {ref}")


def load_experiment(source: Union[str, Path, dict]) -> tuple[ExperimentConfig, Optional[Path]]:
    """(конфиг, каталог файла эксперимента или None для dict)."""
    base: Optional[Path] = None
    try:
        if isinstance(source, (str, Path)):
            path = Path(source)
            if not path.is_file() and (REPO_ROOT / "experiments" / f"{source}.json").is_file():
                path = REPO_ROOT / "experiments" / f"{source}.json"
            base = path.parent
            source = json.loads(path.read_text(encoding="utf-8"))
        cfg = ExperimentConfig.model_validate(source)
        cfg.validated_params()
    except (OSError, ValueError, ValidationError) as e:
        raise ParseError(f"bad experiment: {e}") from e
    return cfg, base


def list_experiments(directory: Optional[Path] = None) -> list[tuple[str, ExperimentConfig]]:
    directory = directory or REPO_ROOT / "experiments"
    out = []
    for path in sorted(Path(directory).glob("*.json")):
        cfg, _ = load_experiment(path)
        out.append((path.stem, cfg))
    return out
