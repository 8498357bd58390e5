"""tppctl: управление правилами TPP-CP в локальной БД агента.

Изменения проходят через TppControlPlane, поднятый из той же БД, так что
конфликт политик или недопустимый TPP отклоняется до записи.

Примеры:
  python -m scripts.tppctl register-app 1 --name microburst
  python -m scripts.tppctl grant 1 read 0x0000 0x0000
  python -m scripts.tppctl add-tpp 1 microburst.tpp --filter '{"proto": 17}' --sample 10
  python -m scripts.tppctl list-rules
  python -m scripts.tppctl remove 3
"""
import argparse
import asyncio
import json
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app.config import DB_PATH
from app.endhost.control_plane import FlowFilter, TppControlPlane
from app.endhost.exceptions import EndhostError, PolicyViolation
from app.persistence.db import close_db, open_db
from app.persistence.tppcp_repository import AppRepository, PolicyRepository, RuleRepository
from app.tpp.assembler import assemble
from app.tpp.codec import encode
from app.tpp.exceptions import TppError


async def _run(args) -> int:
    conn = await open_db(args.db)
    apps, policies, rules = AppRepository(conn), PolicyRepository(conn), RuleRepository(conn)
    try:
        cp = await TppControlPlane.hydrate(apps, policies, rules)
        if args.verb == "register-app":
            reg = cp.register_app(args.appid, args.name, args.session)
            print(json.dumps(await apps.upsert(reg.appid, reg.session_id, reg.name)))
        elif args.verb == "grant":
            p = cp.grant(args.appid, args.op, int(args.start, 0), int(args.end, 0))
            print(json.dumps(await policies.add(p.appid, p.op.value, p.start, p.end)))
        elif args.verb == "add-tpp":
            text = open(args.file, encoding="utf-8").read()
            raw = bytes.fromhex(text.strip()) if args.hex else encode(assemble(text))
            flt = FlowFilter.from_dict(json.loads(args.filter))
            rule_id = cp.add_tpp(flt, raw, args.sample, args.priority, args.appid)
            rule = next(r for r in cp.list_rules() if r.rule_id == rule_id)
            await rules.create(rule.appid, flt.to_dict(), rule.tpp_bytes.hex(), rule.sample_frequency,
                               rule.priority, rule_id=rule_id)
            print(json.dumps(rule.to_dict()))
        elif args.verb == "list-rules":
            for r in cp.list_rules():
                print(json.dumps(r.to_dict()))
        elif args.verb == "remove":
            cp.remove(args.rule_id)
            await rules.delete(args.rule_id)
            print(f"rule {args.rule_id} removed")
    except PolicyViolation as e:
        print(f"rejected: {e}", file=sys.stderr)
        return 1
    except (EndhostError, TppError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    finally:
        await close_db(conn)
    return 0


def main() -> None:
    ap = argparse.ArgumentParser(prog="tppctl")
    ap.add_argument("--db", default=DB_PATH)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("register-app")
    p.add_argument("appid", type=int)
    p.add_argument("--name", default="")
    p.add_argument("--session", type=int)

    p = sub.add_parser("grant")
    p.add_argument("appid", type=int)
    p.add_argument("op", choices=["read", "write"])
    p.add_argument("start")
    p.add_argument("end")

    p = sub.add_parser("add-tpp")
    p.add_argument("appid", type=int)
    p.add_argument("file", help="TPP source, or hex with --hex")
    p.add_argument("--hex", action="store_true")
    p.add_argument("--filter", default="{}")
    p.add_argument("--sample", type=int, default=1)
    p.add_argument("--priority", type=int, default=0)

    sub.add_parser("list-rules")

    p = sub.add_parser("remove")
    p.add_argument("rule_id", type=int)

    sys.exit(asyncio.run(_run(ap.parse_args())))


if __name__ == "__main__":
    main()
