from __future__ import annotations
import logging
from contextlib import asynccontextmanager

import uvicorn
from fastapi import FastAPI

from app import __version__
from app.api.routes_tppcp import router as tppcp_router
from app.config import DB_PATH, LOG_LEVEL, PORT
from app.endhost.control_plane import TppControlPlane
from app.persistence.db import close_db, open_db
from app.persistence.tppcp_repository import AppRepository, PolicyRepository, RuleRepository

logging.basicConfig(level=LOG_LEVEL, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
log = logging.getLogger("app")


@asynccontextmanager
async def lifespan(app: FastAPI):
    conn = await open_db(DB_PATH)
    apps_repo = AppRepository(conn)
    policy_repo = PolicyRepository(conn)
    rule_repo = RuleRepository(conn)

    # политики и правила из БД проходят ту же проверку, что и новые
    cp = await TppControlPlane.hydrate(apps_repo, policy_repo, rule_repo)

    app.state.cp = cp
    app.state.apps_repo = apps_repo
    app.state.policy_repo = policy_repo
    app.state.rule_repo = rule_repo

    log.info(f"Startup OK: TPP-CP agent on {DB_PATH}, {len(cp.list_rules())} rules")
    try:
        yield
    finally:
        await close_db(conn)


app = FastAPI(title="TPP control plane agent", version=__version__, lifespan=lifespan)
app.include_router(tppcp_router)


if __name__ == "__main__":
    uvicorn.run("app.main:app", host="0.0.0.0", port=PORT, reload=True)
