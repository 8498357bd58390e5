"""Топология из JSON: хосты, коммутаторы, линки, таблицы маршрутов и
multipath-групп. Маршруты считаются кратчайшими путями (BFS по числу
хопов); при "ecmp": true равноценные соседи собираются в группу.
Явные groups перекрывают вычисленный маршрут."""
from __future__ import annotations
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator

from app.config import DEFAULT_QUEUE_BYTES
from app.netsim.exceptions import DanglingLink, ParseError, RoutingLoop
from app.netsim.packet import ip
from app.switch import pipeline
from app.switch.pipeline import HashField, RouteAction
from app.switch.state import MAX_PORTS, FlowEntry, PacketMetadata, SwitchState
from app.tpp.memory_map import MAX_QUEUES_PER_LINK

log = logging.getLogger("netsim.topology")


class HostSpec(BaseModel):
    name: str
    ip: str

    @field_validator("ip")
    @classmethod
    def _ip_ok(cls, v: str) -> str:
        ip(v)
        return v


class SwitchSpec(BaseModel):
    name: str
    id: int = Field(ge=1, le=0xFFFF)
    ip: Optional[str] = None
    queues: int = Field(default=1, ge=1, le=MAX_QUEUES_PER_LINK)
    blackhole: bool = False


class LinkSpec(BaseModel):
    a: str
    b: str
    capacity_mbps: float = Field(gt=0)
    delay_us: float = Field(default=1.0, gt=0)
    queue_bytes: int = Field(default=DEFAULT_QUEUE_BYTES, gt=0)
    loss: float = Field(default=0.0, ge=0.0, le=1.0)


class GroupSpec(BaseModel):
    switch: str
    dst: str                        # имя хоста назначения
    via: list[str]                  # соседи в порядке портов группы
    hash_field: HashField = HashField.VLAN


class TopologySpec(BaseModel):
    name: str = "topology"
    hosts: list[HostSpec]
    switches: list[SwitchSpec]
    links: list[LinkSpec]
    groups: list[GroupSpec] = []
    ecmp: bool = False
    hash_field: HashField = HashField.VLAN


@dataclass(frozen=True)
class Port:
    node: str
    port: int
    peer: str
    peer_port: int
    link_id: int
    capacity_bps: int
    delay_ns: int
    queue_bytes: int
    loss: float


@dataclass(frozen=True)
class Hop:
    switch: str
    in_port: int
    out_port: int


@dataclass
class Topology:
    spec: TopologySpec
    ports: dict[str, list[Port]]
    # (switch, host) -> список выходных портов; больше одного = группа
    next_ports: dict[tuple[str, str], list[int]]
    hash_fields: dict[tuple[str, str], HashField] = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.spec.name

    @property
    def host_names(self) -> list[str]:
        return [h.name for h in self.spec.hosts]

    @property
    def switch_names(self) -> list[str]:
        return [s.name for s in self.spec.switches]

    def is_host(self, name: str) -> bool:
        return any(h.name == name for h in self.spec.hosts)

    def host_ip(self, name: str) -> int:
        return ip(next(h.ip for h in self.spec.hosts if h.name == name))

    def host_by_ip(self, addr: int) -> Optional[str]:
        return next((h.name for h in self.spec.hosts if ip(h.ip) == addr), None)

    def switch_spec(self, name: str) -> SwitchSpec:
        return next(s for s in self.spec.switches if s.name == name)

    def switch_by_id(self, switch_id: int) -> Optional[str]:
        return next((s.name for s in self.spec.switches if s.id == switch_id), None)

    def switch_ip(self, name: str) -> int:
        s = self.switch_spec(name)
        if s.ip is not None:
            return ip(s.ip)
        return ip("10.255.0.0") + s.id

    def host_link_ids(self) -> set[int]:
        """ID линков, у которых хотя бы один конец хост."""
        return {p.link_id for h in self.host_names for p in self.ports[h]}

    def make_switches(self) -> dict[str, SwitchState]:
        """Свежие состояния коммутаторов с портами, маршрутами и группами."""
        out: dict[str, SwitchState] = {}
        for s in self.spec.switches:
            sw = SwitchState(s.id, s.name, ip=self.switch_ip(s.name))
            for p in self.ports[s.name]:
                sw.add_link(p.link_id, p.capacity_bps, p.queue_bytes, s.queues)
            self._install_routes(sw)
            out[s.name] = sw
        return out

    def _install_routes(self, sw: SwitchState) -> None:
        entry_id, group_id = 1, 0
        pipeline.install_route(sw, entry_id, sw.ip, 32, RouteAction(local=True))
        for host in self.host_names:
            ports = self.next_ports.get((sw.name, host))
            if not ports:
                continue
            entry_id += 1
            if len(ports) == 1:
                action = RouteAction(port=ports[0])
            else:
                group_id += 1
                pipeline.install_group(sw, group_id, ports, self.hash_fields.get((sw.name, host), HashField.VLAN))
                action = RouteAction(group=group_id)
            pipeline.install_route(sw, entry_id, self.host_ip(host), 32, action)
        for other in self.switch_names:
            if other == sw.name:
                continue
            port = self._port_towards(sw.name, other)
            if port is not None:
                entry_id += 1
                pipeline.install_route(sw, entry_id, self.switch_ip(other), 32, RouteAction(port=port))

    def _port_towards(self, src: str, dst: str) -> Optional[int]:
        """Первый порт кратчайшего пути src -> dst между коммутаторами."""
        dist = _bfs(self.ports, dst, set(self.host_names))
        if src not in dist:
            return None
        best = [p for p in self.ports[src] if not self.is_host(p.peer) and dist.get(p.peer, -1) == dist[src] - 1]
        return best[0].port if best else None

    def path(self, src: str, dst: str, vlan: int = 0, src_port: int = 0, dst_port: int = 0) -> list[Hop]:
        """Путь src -> dst, выбранный таблицами групп для данных заголовков."""
        hops: list[Hop] = []
        first = self.ports[src][0]
        node, in_port = first.peer, first.peer_port
        meta = PacketMetadata(vlan=vlan, ip_src=self.host_ip(src), ip_dst=self.host_ip(dst),
                              src_port=src_port, dst_port=dst_port, ip_proto=17)
        seen = set()
        while not self.is_host(node):
            if node in seen:
                raise RoutingLoop(f"{src}->{dst}: loop at {node}")
            seen.add(node)
            ports = self.next_ports.get((node, dst))
            if not ports:
                return hops
            if len(ports) == 1:
                out = ports[0]
            else:
                group = FlowEntry(1, None, pipeline.GroupAction(tuple(ports), self.hash_fields[(node, dst)]))
                out = pipeline.select_path(group, meta)
            hops.append(Hop(node, in_port, out))
            p = self.ports[node][out]
            node, in_port = p.peer, p.peer_port
        return hops

    def switch_hops(self, src: str, dst: str) -> Optional[int]:
        """Сколько коммутаторов пройдёт кадр от src до узла dst (dst-коммутатор
        тоже считается)."""
        dist = _bfs(self.ports, dst, set(self.host_names))
        if src not in dist:
            return None
        return dist[src] - 1 if self.is_host(dst) else dist[src]

    def path_capacities(self, src: str, dst: str, vlan: int = 0) -> list[int]:
        return [self.ports[h.switch][h.out_port].capacity_bps for h in self.path(src, dst, vlan)]


def _bfs(ports: dict[str, list[Port]], target: str, hosts: set[str]) -> dict[str, int]:
    """Расстояние в хопах до target; транзит только через коммутаторы."""
    dist = {target: 0}
    q = deque([target])
    while q:
        node = q.popleft()
        if node != target and node in hosts:
            continue
        for p in ports[node]:
            if p.peer not in dist:
                dist[p.peer] = dist[node] + 1
                q.append(p.peer)
    return dist


def _check_loops(topo: Topology) -> None:
    """Граф (коммутатор -> все порты групп) к каждому адресату ацикличен,
    значит цикла нет ни для какого значения селектора."""
    for dst in topo.host_names:
        graph = {}
        for sw in topo.switch_names:
            ports = topo.next_ports.get((sw, dst), [])
            graph[sw] = [topo.ports[sw][p].peer for p in ports if not topo.is_host(topo.ports[sw][p].peer)]
        state: dict[str, int] = {}

        def visit(n: str, stack: list[str]) -> None:
            state[n] = 1
            for m in graph.get(n, []):
                if state.get(m) == 1:
                    raise RoutingLoop(f"routes to {dst} loop: {' -> '.join(stack + [n, m])}")
                if m not in state:
                    visit(m, stack + [n])
            state[n] = 2

        for sw in topo.switch_names:
            if sw not in state:
                visit(sw, [])


def build_topology(spec: Union[TopologySpec, dict, str, Path]) -> Topology:
    """Разбирает и проверяет описание. dict, JSON-строка или путь к файлу."""
    if isinstance(spec, Path) or (isinstance(spec, str) and not spec.lstrip().startswith("{")):
        try:
            spec = Path(spec).read_text(encoding="utf-8")
        except OSError as e:
            raise ParseError(f"cannot read topology: {e}") from e
    try:
        if isinstance(spec, str):
            spec = json.loads(spec)
        if isinstance(spec, dict):
            spec = TopologySpec.model_validate(spec)
    except (ValueError, ValidationError) as e:
        raise ParseError(f"bad topology: {e}") from e

    hosts = [h.name for h in spec.hosts]
    names = hosts + [s.name for s in spec.switches]
    if len(set(names)) != len(names):
        raise ParseError("duplicate node names")
    if len({s.id for s in spec.switches}) != len(spec.switches):
        raise ParseError("duplicate switch ids")

    ports: dict[str, list[Port]] = {n: [] for n in names}
    for link_id, l in enumerate(spec.links, start=1):
        for end in (l.a, l.b):
            if end not in ports:
                raise DanglingLink(f"link {l.a}-{l.b}: unknown node {end!r}")
        if l.a == l.b:
            raise ParseError(f"link {l.a}-{l.b} is a self-loop")
        pa, pb = len(ports[l.a]), len(ports[l.b])
        kw = dict(link_id=link_id, capacity_bps=int(l.capacity_mbps * 1_000_000),
                  delay_ns=int(l.delay_us * 1000), queue_bytes=l.queue_bytes, loss=l.loss)
        ports[l.a].append(Port(l.a, pa, l.b, pb, **kw))
        ports[l.b].append(Port(l.b, pb, l.a, pa, **kw))
    for h in hosts:
        if len(ports[h]) != 1:
            raise ParseError(f"host {h} must have exactly one link, has {len(ports[h])}")
    for s in spec.switches:
        if len(ports[s.name]) > MAX_PORTS:
            raise ParseError(f"switch {s.name}: more than {MAX_PORTS} ports")

    next_ports: dict[tuple[str, str], list[int]] = {}
    hash_fields: dict[tuple[str, str], HashField] = {}
    for dst in hosts:
        dist = _bfs(ports, dst, set(hosts))
        for s in spec.switches:
            if s.name not in dist:
                continue
            best = [p.port for p in ports[s.name] if dist.get(p.peer, -1) == dist[s.name] - 1
                    and (p.peer == dst or p.peer not in hosts)]
            if not spec.ecmp:
                best = best[:1]
            next_ports[(s.name, dst)] = best
            hash_fields[(s.name, dst)] = spec.hash_field
    for g in spec.groups:
        if g.switch not in ports or g.dst not in hosts:
            raise DanglingLink(f"group on {g.switch} to {g.dst}: unknown node")
        by_peer = {p.peer: p.port for p in ports[g.switch]}
        missing = [v for v in g.via if v not in by_peer]
        if missing or not g.via:
            raise DanglingLink(f"group on {g.switch}: no link to {missing or 'any neighbour'}")
        next_ports[(g.switch, g.dst)] = [by_peer[v] for v in g.via]
        hash_fields[(g.switch, g.dst)] = g.hash_field

    topo = Topology(spec, ports, next_ports, hash_fields)
    _check_loops(topo)
    log.info(f"[TOPO] {spec.name}: {len(hosts)} hosts, {len(spec.switches)} switches, {len(spec.links)} links")
    return topo
