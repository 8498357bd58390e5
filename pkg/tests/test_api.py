from fastapi.testclient import TestClient

import app.main as main
from app.apps.microburst import MICROBURST_SOURCE


def _client(tmp_path, monkeypatch) -> TestClient:
    monkeypatch.setattr(main, "DB_PATH", str(tmp_path / "tppcp.db"))
    return TestClient(main.app)


def _install(client: TestClient) -> None:
    assert client.post("/apps", json={"appid": 100, "name": "microburst"}).status_code == 200
    for start, end in (("0x0000", "0x00ff"), ("0x3000", "0x30ff"), ("0xb000", "0xb00f")):
        r = client.post("/policies", json={"appid": 100, "op": "read", "start": start, "end": end})
        assert r.status_code == 200


def test_rule_lifecycle_survives_restart(tmp_path, monkeypatch):
    with _client(tmp_path, monkeypatch) as client:
        assert client.get("/healthz").json() == {"status": "ok"}
        _install(client)
        r = client.post("/rules", json={"appid": 100, "filter": {"proto": 17}, "program": MICROBURST_SOURCE,
                                        "priority": 3})
        assert r.status_code == 200
        rule_id = r.json()["rule"]["rule_id"]

    with _client(tmp_path, monkeypatch) as client:
        rules = client.get("/rules").json()["rules"]
        assert [r["rule_id"] for r in rules] == [rule_id]
        assert client.get("/apps").json()["apps"][0]["session_id"] == 1
        assert client.delete(f"/rules/{rule_id}").status_code == 200
        assert client.delete(f"/rules/{rule_id}").status_code == 404


def test_rejected_program(tmp_path, monkeypatch):
    with _client(tmp_path, monkeypatch) as client:
        _install(client)
        r = client.post("/rules", json={"appid": 100, "program": "STORE [Link:AppSpecific_0], [Packet:Hop[0]]"})
        assert r.status_code == 400
        assert r.json()["detail"]["report"]["violations"]
        assert client.post("/rules", json={"appid": 9, "program": MICROBURST_SOURCE}).status_code == 404
        assert client.post("/rules", json={"appid": 100}).status_code == 422
        assert client.get("/rules").json()["rules"] == []


def test_analyze_endpoint(tmp_path, monkeypatch):
    with _client(tmp_path, monkeypatch) as client:
        _install(client)
        r = client.post("/analyze", json={"program": MICROBURST_SOURCE, "appid": 100})
        body = r.json()
        assert body["admissible"]
        assert body["size"] == 12 + 3 * 4 + 5 * 3 * 2
        r = client.post("/analyze", json={"program": "NOPE [x]"})
        assert r.status_code == 400
