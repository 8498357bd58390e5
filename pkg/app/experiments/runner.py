"""Прогон эксперимента: топология + нагрузка + shim на каждом хосте +
одно приложение, затем проверки инвариантов и выгрузка результатов.

В каталог вывода ложатся CSV симулятора, файлы приложения, summary.json
и manifest.json (конфиг и его хэш, seed, версии пакетов, хэш журнала,
список файлов). Одинаковые конфиг и seed дают одинаковый хэш журнала.
"""
from __future__ import annotations
import json
import logging
from dataclasses import dataclass, field
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Any, Optional

from app import __version__
from app.apps.base import AppContext, TppApp
from app.apps.registry import build_app
from app.config import OUTPUT_DIR
from app.endhost.control_plane import TppControlPlane
from app.endhost.shim import install_shims
from app.experiments.config import ExperimentConfig, resolve_ref
from app.netsim.exceptions import InvariantViolation
from app.netsim.simulator import Simulator
from app.netsim.topology import build_topology
from app.netsim.tracelog import TraceLog
from app.netsim.workload import install_workload

log = logging.getLogger("experiments")

_VERSIONED = ("numpy", "mmh3", "pydantic")


@dataclass
class RunResult:
    config: ExperimentConfig
    app: TppApp
    trace: TraceLog
    summary: dict[str, Any]
    problems: list[str] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)
    digest: str = ""

    @property
    def ok(self) -> bool:
        return not self.problems


def conservation_problems(trace: TraceLog) -> list[str]:
    if trace.conserved():
        return []
    return [f"packet conservation: injected={trace.injected} delivered={trace.delivered} "
            f"dropped={trace.dropped} in_flight={trace.in_flight}"]


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str | Path] = None, base: Optional[Path] = None,
                   strict: bool = True, write: bool = True) -> RunResult:
    """strict: нарушение инварианта поднимает InvariantViolation (после
    выгрузки файлов, чтобы было что разбирать)."""
    topo = build_topology(resolve_ref(cfg.topology, base))
    sim = Simulator(topo, cfg.seed, record_shadow=cfg.record_shadow, write_enabled=not cfg.deny_writes)
    cp = TppControlPlane(deny_writes=cfg.deny_writes)
    shims = install_shims(sim, cp, cfg.seed, mtu=cfg.mtu)
    sources = install_workload(sim, resolve_ref(cfg.workload, base))
    app = build_app(cfg.app, cfg.params, netwatch=cfg.netwatch, seed=cfg.seed)
    app.install(AppContext(sim, cp, shims, sources, cfg.seed))
    log.info(f"[RUN] {cfg.name}: app={cfg.app} topo={topo.name} flows={len(sources)} "
             f"duration={cfg.duration_ms}ms seed={cfg.seed}")

    trace = sim.run_until(cfg.duration_ns)
    problems = conservation_problems(trace) + app.check(trace)
    summary = app.summary()
    result = RunResult(cfg, app, trace, summary, problems, digest=trace.digest())

    if write:
        out = Path(out_dir or Path(OUTPUT_DIR) / cfg.name)
        out.mkdir(parents=True, exist_ok=True)
        files = trace.write_csv(out) + app.write_outputs(out)
        summary_path = out / "summary.json"
        summary_path.write_text(json.dumps(summary, indent=2, default=str), encoding="utf-8")
        files.append(summary_path)
        manifest_path = out / "manifest.json"
        files.append(manifest_path)
        manifest_path.write_text(json.dumps(_manifest(result, files), indent=2, default=str), encoding="utf-8")
        result.files = files
        log.info(f"[RUN] {cfg.name}: {len(files)} files in {out}")

    for p in problems:
        log.error(f"[RUN] {cfg.name}: {p}")
    if problems and strict:
        raise InvariantViolation(f"{cfg.name}: {len(problems)} invariant violations, first: {problems[0]}")
    return result


def versions() -> dict[str, str]:
    out = {"app": __version__}
    for pkg in _VERSIONED:
        try:
            out[pkg] = version(pkg)
        except PackageNotFoundError:
            out[pkg] = "unknown"
    return out


def _manifest(result: RunResult, files: list[Path]) -> dict:
    trace = result.trace
    return {
        "experiment": result.config.model_dump(),
        "config_hash": result.config.config_hash(),
        "seed": result.config.seed,
        "versions": versions(),
        "digest": result.digest,
        "end_ns": trace.end_ns,
        "packets": {"injected": trace.injected, "delivered": trace.delivered, "dropped": trace.dropped,
                    "in_flight": trace.in_flight, "drop_reasons": dict(trace.drop_reasons())},
        "tpp_records": len(trace.tpp_records),
        "problems": result.problems,
        "files": sorted(p.name for p in files),
    }
