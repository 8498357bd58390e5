from app.apps.microburst import microburst_program
from app.apps.rcp import UPDATE_INSNS
from app.endhost.control_plane import FlowFilter, TppControlPlane, bootstrap
from app.endhost.exceptions import PolicyConflict, PolicyViolation, UnknownApp, UnknownRule
from app.netsim.packet import Headers, ip
from app.tpp.analyzer import AccessOp
from app.tpp.codec import decode, encode
from app.tpp.models import TppProgram

MICROBURST_READS = [(0x0000, 0x00FF), (0x3000, 0x30FF), (0xB000, 0xB00F)]


def _cp(deny_writes: bool = False) -> TppControlPlane:
    cp = TppControlPlane(deny_writes)
    cp.register_app(100, "microburst")
    for start, end in MICROBURST_READS:
        cp.grant(100, AccessOp.READ, start, end)
    return cp


def _headers(dst: str = "10.0.1.1", dst_port: int = 20000) -> Headers:
    return Headers(ip("10.0.0.1"), ip(dst), src_port=10000, dst_port=dst_port)


def test_register_assigns_sessions():
    cp = TppControlPlane()
    a = cp.register_app(1 << 40, "big")
    b = cp.register_app(7)
    assert (a.session_id, b.session_id) == (1, 2)
    assert cp.register_app(7).session_id == 2
    assert cp.app_for_session(1).appid == 1 << 40
    try:
        cp.register_app(8, session_id=1)
        assert False, "should have raised"
    except PolicyConflict:
        pass


def test_add_tpp_stamps_session_id():
    cp = _cp()
    rule_id = cp.add_tpp({"dst_ip": "10.0.1.1"}, encode(microburst_program(5)), appid=100)
    rule = cp.match(_headers())
    assert rule.rule_id == rule_id
    assert rule.program.header.session_id == cp.app(100).session_id
    assert decode(rule.tpp_bytes).header.session_id == cp.app(100).session_id
    assert cp.match(_headers(dst="10.0.1.2")) is None


def test_policy_violation_is_not_installed():
    cp = TppControlPlane()
    cp.register_app(5)
    cp.grant(5, "read", 0x0000, 0x00FF)
    try:
        cp.add_tpp(None, encode(microburst_program(5)), appid=5)
        assert False, "should have raised"
    except PolicyViolation as e:
        assert not e.report.admissible
        assert len(e.report.violations) == 2
    assert cp.list_rules() == []


def test_unknown_app():
    cp = _cp()
    try:
        cp.add_tpp(None, encode(microburst_program(5)), appid=999)
        assert False, "should have raised"
    except UnknownApp:
        pass
    try:
        cp.grant(999, "read", 0, 1)
        assert False, "should have raised"
    except UnknownApp:
        pass


def test_write_ranges_are_exclusive():
    cp = TppControlPlane()
    cp.register_app(1)
    cp.register_app(2)
    cp.grant(1, "write", 0xA005, 0xA006)
    cp.grant(1, "write", 0xA005, 0xA006)
    cp.grant(2, "read", 0xA005, 0xA006)
    try:
        cp.grant(2, "write", 0x4000 + 0x40 * 2 + 5, 0x4000 + 0x40 * 2 + 5)
        assert False, "should have raised"
    except PolicyConflict:
        pass
    assert len(cp.policies_for(1)) == 1


def test_deny_writes_rejects_update_tpp():
    cp = TppControlPlane(deny_writes=True)
    cp.register_app(1)
    cp.grant(1, "read", 0xA000, 0xA03F)
    cp.grant(1, "write", 0xA005, 0xA006)
    update = TppProgram.create(list(UPDATE_INSNS), 3, 3)
    try:
        cp.add_tpp(None, encode(update), appid=1)
        assert False, "should have raised"
    except PolicyViolation:
        pass


def test_priority_then_rule_id():
    cp = _cp()
    raw = encode(microburst_program(5))
    low = cp.add_tpp({}, raw, priority=0, appid=100)
    high = cp.add_tpp({"dst_port": 20000}, raw, priority=5, appid=100)
    same = cp.add_tpp({}, raw, priority=5, appid=100)
    assert cp.match(_headers()).rule_id == high
    assert cp.match(_headers(dst_port=1)).rule_id == same
    cp.remove(same)
    assert cp.match(_headers(dst_port=1)).rule_id == low
    assert [r.rule_id for r in cp.list_rules()] == [high, low]


def test_remove_unknown_rule():
    cp = _cp()
    try:
        cp.remove(42)
        assert False, "should have raised"
    except UnknownRule:
        pass


def test_bad_sample_frequency():
    cp = _cp()
    try:
        cp.add_tpp(None, encode(microburst_program(5)), sample_frequency=0, appid=100)
        assert False, "should have raised"
    except ValueError:
        pass


def test_flow_filter_dict_form():
    flt = FlowFilter.from_dict({"src_ip": "10.0.0.1", "dst_ip": "*", "proto": 17})
    assert flt.dst_ip is None
    assert flt.matches(_headers())
    assert flt.to_dict() == {"src_ip": "10.0.0.1", "proto": 17}
    try:
        FlowFilter.from_dict({"vlan": 3})
        assert False, "should have raised"
    except ValueError:
        pass


def test_bootstrap_document():
    cp = TppControlPlane()
    bootstrap(cp, [{
        "appid": 3, "name": "mb", "session_id": 30,
        "policies": [{"op": "read", "start": hex(s), "end": hex(e)} for s, e in MICROBURST_READS],
        "rules": [{"filter": {"proto": 17}, "program": microburst_program(5), "sample_frequency": 4}],
    }])
    [rule] = cp.list_rules()
    assert rule.sample_frequency == 4
    assert rule.program.header.session_id == 30
