"""Хранилище TPP-CP: приложения, политики доступа и правила. Возвращает
простые dict; ключи совпадают с тем, что ждёт TppControlPlane.hydrate()."""
from __future__ import annotations
import json
import time
from typing import Optional

import aiosqlite


def _now_ms() -> int:
    return int(time.time() * 1000)


def _row_to_app(row: aiosqlite.Row) -> dict:
    return {"appid": row["appid"], "session_id": row["session_id"], "name": row["name"],
            "created_at_ms": row["created_at_ms"]}


def _row_to_policy(row: aiosqlite.Row) -> dict:
    return {"id": row["id"], "appid": row["appid"], "op": row["op"], "start_addr": row["start_addr"],
            "end_addr": row["end_addr"], "created_at_ms": row["created_at_ms"]}


def _row_to_rule(row: aiosqlite.Row) -> dict:
    return {
        "id": row["id"],
        "appid": row["appid"],
        "filter": json.loads(row["filter_json"]),
        "tpp_hex": row["tpp_hex"],
        "sample_frequency": row["sample_frequency"],
        "priority": row["priority"],
        "created_at_ms": row["created_at_ms"],
    }


class AppRepository:
    def __init__(self, conn: aiosqlite.Connection) -> None:
        self._conn = conn

    async def upsert(self, appid: int, session_id: int, name: str = "") -> dict:
        await self._conn.execute(
            """INSERT INTO tpp_apps (appid, session_id, name, created_at_ms) VALUES (?, ?, ?, ?)
               ON CONFLICT(appid) DO UPDATE SET name = excluded.name""",
            (appid, session_id, name, _now_ms()),
        )
        await self._conn.commit()
        app = await self.get(appid)
        assert app is not None
        return app

    async def get(self, appid: int) -> Optional[dict]:
        cur = await self._conn.execute("SELECT * FROM tpp_apps WHERE appid = ?", (appid,))
        row = await cur.fetchone()
        return _row_to_app(row) if row else None

    async def list_all(self) -> list[dict]:
        cur = await self._conn.execute("SELECT * FROM tpp_apps ORDER BY session_id")
        return [_row_to_app(r) for r in await cur.fetchall()]


class PolicyRepository:
    def __init__(self, conn: aiosqlite.Connection) -> None:
        self._conn = conn

    async def add(self, appid: int, op: str, start_addr: int, end_addr: int) -> dict:
        await self._conn.execute(
            """INSERT OR IGNORE INTO tpp_policies (appid, op, start_addr, end_addr, created_at_ms)
               VALUES (?, ?, ?, ?, ?)""",
            (appid, op, start_addr, end_addr, _now_ms()),
        )
        await self._conn.commit()
        cur = await self._conn.execute(
            "SELECT * FROM tpp_policies WHERE appid = ? AND op = ? AND start_addr = ? AND end_addr = ?",
            (appid, op, start_addr, end_addr))
        return _row_to_policy(await cur.fetchone())

    async def list_all(self) -> list[dict]:
        cur = await self._conn.execute("SELECT * FROM tpp_policies ORDER BY id")
        return [_row_to_policy(r) for r in await cur.fetchall()]

    async def list_for(self, appid: int) -> list[dict]:
        cur = await self._conn.execute("SELECT * FROM tpp_policies WHERE appid = ? ORDER BY id", (appid,))
        return [_row_to_policy(r) for r in await cur.fetchall()]


class RuleRepository:
    def __init__(self, conn: aiosqlite.Connection) -> None:
        self._conn = conn

    async def create(self, appid: int, filter: dict, tpp_hex: str, sample_frequency: int = 1,
                     priority: int = 0, rule_id: Optional[int] = None) -> dict:
        cur = await self._conn.execute(
            """INSERT INTO tpp_rules (id, appid, filter_json, tpp_hex, sample_frequency, priority, created_at_ms)
               VALUES (?, ?, ?, ?, ?, ?, ?)""",
            (rule_id, appid, json.dumps(filter, sort_keys=True), tpp_hex, sample_frequency, priority, _now_ms()),
        )
        await self._conn.commit()
        rule = await self.get(cur.lastrowid)
        assert rule is not None
        return rule

    async def get(self, rule_id: int) -> Optional[dict]:
        cur = await self._conn.execute("SELECT * FROM tpp_rules WHERE id = ?", (rule_id,))
        row = await cur.fetchone()
        return _row_to_rule(row) if row else None

    async def list_all(self) -> list[dict]:
        cur = await self._conn.execute("SELECT * FROM tpp_rules ORDER BY priority DESC, id")
        return [_row_to_rule(r) for r in await cur.fetchall()]

    async def delete(self, rule_id: int) -> bool:
        cur = await self._conn.execute("DELETE FROM tpp_rules WHERE id = ?", (rule_id,))
        await self._conn.commit()
        return cur.rowcount > 0
