import asyncio

from app.apps.microburst import microburst_program
from app.endhost.control_plane import TppControlPlane
from app.persistence.db import close_db, open_db
from app.persistence.tppcp_repository import AppRepository, PolicyRepository, RuleRepository
from app.tpp.codec import encode


def test_apps_and_policies():
    async def run():
        conn = await open_db(":memory:")
        try:
            apps = AppRepository(conn)
            policies = PolicyRepository(conn)

            created = await apps.upsert(100, 1, "microburst")
            assert created["session_id"] == 1
            renamed = await apps.upsert(100, 1, "mb")
            assert renamed["name"] == "mb"
            assert [a["appid"] for a in await apps.list_all()] == [100]
            assert await apps.get(5) is None

            p = await policies.add(100, "read", 0x0000, 0x00FF)
            again = await policies.add(100, "read", 0x0000, 0x00FF)
            assert again["id"] == p["id"]
            assert (p["start_addr"], p["end_addr"]) == (0, 0xFF)
            assert len(await policies.list_for(100)) == 1
            assert await policies.list_for(7) == []
        finally:
            await close_db(conn)

    asyncio.run(run())


def test_rules_crud():
    async def run():
        conn = await open_db(":memory:")
        try:
            await AppRepository(conn).upsert(1, 1)
            rules = RuleRepository(conn)
            low = await rules.create(1, {"proto": 17}, "00ff", priority=0)
            high = await rules.create(1, {}, "00ee", sample_frequency=4, priority=9, rule_id=50)
            assert high["id"] == 50
            assert low["filter"] == {"proto": 17}
            assert [r["id"] for r in await rules.list_all()] == [50, low["id"]]
            assert await rules.delete(50)
            assert not await rules.delete(50)
            assert await rules.get(50) is None
        finally:
            await close_db(conn)

    asyncio.run(run())


def test_hydrate_restores_control_plane():
    async def run():
        conn = await open_db(":memory:")
        try:
            apps, policies, rules = AppRepository(conn), PolicyRepository(conn), RuleRepository(conn)
            await apps.upsert(100, 3, "microburst")
            for start, end in [(0x0000, 0x00FF), (0x3000, 0x30FF), (0xB000, 0xB00F)]:
                await policies.add(100, "read", start, end)
            await rules.create(100, {"proto": 17}, encode(microburst_program(5)).hex(), 2, 1, rule_id=7)

            cp = await TppControlPlane.hydrate(apps, policies, rules)
            assert cp.app(100).session_id == 3
            [rule] = cp.list_rules()
            assert rule.rule_id == 7
            assert rule.sample_frequency == 2
            assert rule.program.header.session_id == 3
            assert len(cp.policies_for(100)) == 3
        finally:
            await close_db(conn)

    asyncio.run(run())
