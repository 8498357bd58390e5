from pathlib import Path

from app.netsim.exceptions import DanglingLink, ParseError, RoutingLoop
from app.netsim.packet import ip
from app.netsim.topology import Hop, build_topology

TOPOLOGIES = Path(__file__).resolve().parent.parent / "topologies"


def _raises(spec, exc: type) -> None:
    try:
        build_topology(spec)
        assert False, "should have raised"
    except exc:
        pass


def _spec(**overrides) -> dict:
    spec = {
        "hosts": [{"name": "h0", "ip": "10.0.0.1"}, {"name": "h1", "ip": "10.0.0.2"}],
        "switches": [{"name": "s0", "id": 1}],
        "links": [{"a": "h0", "b": "s0", "capacity_mbps": 10}, {"a": "h1", "b": "s0", "capacity_mbps": 10}],
    }
    spec.update(overrides)
    return spec


def test_dumbbell_paths():
    topo = build_topology(TOPOLOGIES / "dumbbell6.json")
    assert topo.host_names == ["h0", "h1", "h2", "h3", "h4", "h5"]
    assert topo.switch_names == ["s0", "s1"]
    assert topo.path("h0", "h3") == [Hop("s0", 0, 3), Hop("s1", 3, 0)]
    assert topo.path("h1", "h2") == [Hop("s0", 1, 2)]
    assert topo.switch_hops("h0", "h3") == 2
    assert topo.switch_hops("h0", "h1") == 1
    assert topo.path_capacities("h0", "h5") == [100_000_000, 100_000_000]


def test_switch_addresses_and_ids():
    topo = build_topology(TOPOLOGIES / "dumbbell6.json")
    assert topo.switch_ip("s0") == ip("10.255.0.1")
    assert topo.switch_by_id(2) == "s1"
    assert topo.switch_by_id(99) is None
    assert topo.host_by_ip(ip("10.0.1.2")) == "h4"
    assert len(topo.host_link_ids()) == 6


def test_make_switches_installs_routes():
    topo = build_topology(TOPOLOGIES / "dumbbell6.json")
    switches = topo.make_switches()
    s0 = switches["s0"]
    assert s0.switch_id == 1
    assert s0.num_ports == 4
    # локальный адрес, шесть хостов, второй коммутатор
    assert s0.stage(2).reference_count == 8


def test_conga_group_splits_by_vlan():
    topo = build_topology(TOPOLOGIES / "conga2path.json")
    via = lambda vlan: [h.switch for h in topo.path("h1", "h2", vlan=vlan)]  # noqa: E731
    assert via(0) == ["L1", "S0", "L2"]
    assert via(1) == ["L1", "S1", "L2"]
    assert via(2) == ["L1", "S0", "L2"]
    assert [h.switch for h in topo.path("h0", "h2")] == ["L0", "S0", "L2"]


def test_ecmp_builds_groups():
    spec = {
        "ecmp": True,
        "hosts": [{"name": "h0", "ip": "10.0.0.1"}, {"name": "h1", "ip": "10.0.0.2"}],
        "switches": [{"name": "a", "id": 1}, {"name": "b", "id": 2}, {"name": "c", "id": 3}, {"name": "d", "id": 4}],
        "links": [
            {"a": "h0", "b": "a", "capacity_mbps": 10}, {"a": "h1", "b": "d", "capacity_mbps": 10},
            {"a": "a", "b": "b", "capacity_mbps": 10}, {"a": "a", "b": "c", "capacity_mbps": 10},
            {"a": "b", "b": "d", "capacity_mbps": 10}, {"a": "c", "b": "d", "capacity_mbps": 10},
        ],
    }
    topo = build_topology(spec)
    assert len(topo.next_ports[("a", "h1")]) == 2
    assert {topo.path("h0", "h1", vlan=v)[1].switch for v in (0, 1)} == {"b", "c"}


def test_json_string_is_accepted():
    topo = build_topology('{"hosts": [], "switches": [{"name": "s", "id": 1}], "links": []}')
    assert topo.switch_names == ["s"]


def test_validation_errors():
    _raises(_spec(links=[{"a": "h0", "b": "s9", "capacity_mbps": 10}]), DanglingLink)
    _raises(_spec(switches=[{"name": "h0", "id": 1}]), ParseError)
    _raises(_spec(switches=[{"name": "s0", "id": 1}, {"name": "s1", "id": 1}]), ParseError)
    _raises(_spec(links=[{"a": "h0", "b": "s0", "capacity_mbps": 10}]), ParseError)
    _raises(_spec(links=[{"a": "h0", "b": "s0", "capacity_mbps": 10}, {"a": "h1", "b": "s0", "capacity_mbps": 10},
                         {"a": "s0", "b": "s0", "capacity_mbps": 10}]), ParseError)
    _raises(_spec(links=[{"a": "h0", "b": "s0", "capacity_mbps": 0}, {"a": "h1", "b": "s0", "capacity_mbps": 10}]),
            ParseError)
    _raises(_spec(hosts=[{"name": "h0", "ip": "not-an-ip"}, {"name": "h1", "ip": "10.0.0.2"}]), ParseError)
    _raises(_spec(groups=[{"switch": "s0", "dst": "h1", "via": ["s7"]}]), DanglingLink)
    _raises("{not json", ParseError)
    _raises(TOPOLOGIES / "missing.json", ParseError)


def test_group_loop_is_rejected():
    spec = {
        "hosts": [{"name": "h0", "ip": "10.0.0.1"}, {"name": "h1", "ip": "10.0.0.2"}],
        "switches": [{"name": "a", "id": 1}, {"name": "b", "id": 2}, {"name": "c", "id": 3}],
        "links": [
            {"a": "h0", "b": "a", "capacity_mbps": 10}, {"a": "h1", "b": "c", "capacity_mbps": 10},
            {"a": "a", "b": "b", "capacity_mbps": 10}, {"a": "b", "b": "c", "capacity_mbps": 10},
            {"a": "a", "b": "c", "capacity_mbps": 10},
        ],
        "groups": [
            {"switch": "a", "dst": "h1", "via": ["b"]},
            {"switch": "b", "dst": "h1", "via": ["a"]},
        ],
    }
    _raises(spec, RoutingLoop)
