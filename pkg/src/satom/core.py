"""Static world model: nodes, links, frames and symbolic encryption.

Frames are split into three fields. The PHY-related field is always
cleartext, the routing field is an n-bit integer rewritten per hop by the
MTD layer, and the content field is either plaintext or a symbolic
ciphertext that only key holders can open.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .errors import AuthFailure, MalformedSpec, NoKey, NoPath

NodeId = int
LinkId = int


class NodeKind(enum.Enum):
    NOCC = "NOCC"
    TTC_CENTER = "TTCCenter"
    GATEWAY = "Gateway"
    ACCESS_SATELLITE = "AccessSatellite"
    RELAY_SATELLITE = "RelaySatellite"
    TARGET_SATELLITE = "TargetSatellite"
    USER_TERMINAL = "UserTerminal"

    @property
    def is_satellite(self) -> bool:
        return self in _SATELLITE_KINDS


_SATELLITE_KINDS = {
    NodeKind.ACCESS_SATELLITE,
    NodeKind.RELAY_SATELLITE,
    NodeKind.TARGET_SATELLITE,
}


class LinkKind(enum.Enum):
    TERRESTRIAL_WIRED = "TerrestrialWired"
    FEEDER = "Feeder"
    ISL = "ISL"
    TTC = "TTC"
    USER_LINK = "UserLink"


@dataclass(frozen=True)
class Node:
    id: NodeId
    kind: NodeKind
    keyring: frozenset[str] = frozenset()
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or str(self.id)


@dataclass(frozen=True)
class Link:
    """Bidirectional link; ``a -> b`` is the uplink direction."""

    id: LinkId
    kind: LinkKind
    endpoints: tuple[NodeId, NodeId]
    latency: float = 0.0
    eavesdroppable: bool = True
    uplink_block_prob: float = 0.0
    downlink_block_prob: float = 0.0

    def __post_init__(self):
        if self.latency < 0:
            raise MalformedSpec(f"link {self.id}: negative latency {self.latency}")
        for name in ("uplink_block_prob", "downlink_block_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise MalformedSpec(f"link {self.id}: {name}={p} outside [0, 1]")

    def other(self, node: NodeId) -> NodeId:
        a, b = self.endpoints
        if node == a:
            return b
        if node == b:
            return a
        raise MalformedSpec(f"node {node} is not an endpoint of link {self.id}")

    def direction(self, src: NodeId) -> str:
        """``"up"`` when sending from the first endpoint, else ``"down"``."""
        a, _ = self.endpoints
        if src not in self.endpoints:
            raise MalformedSpec(f"node {src} is not an endpoint of link {self.id}")
        return "up" if src == a else "down"

    def block_prob(self, src: NodeId) -> float:
        if self.direction(src) == "up":
            return self.uplink_block_prob
        return self.downlink_block_prob


# ---------------------------------------------------------------------------
# Frames


@dataclass(frozen=True)
class PhyField:
    sync: str = "SYNC"
    modcod: int = 0
    crc_ok: bool = True


@dataclass(frozen=True)
class Plaintext:
    payload: Any


@dataclass(frozen=True)
class SymbolicCiphertext:
    key_id: str
    payload: Any = field(repr=False)
    auth_tag_valid: bool = True


ContentField = Plaintext | SymbolicCiphertext


@dataclass(frozen=True)
class FrameMeta:
    """Instrumentation only; never read by routers or adversaries."""

    flow_id: str | None = None
    created_at: float = 0.0
    seq: int = 0


@dataclass(frozen=True)
class Frame:
    phy: PhyField
    routing: int
    content: ContentField
    meta: FrameMeta = field(default_factory=FrameMeta, compare=False)

    def with_routing(self, value: int) -> Frame:
        return replace(self, routing=value)


def make_frame(routing: int, content: ContentField, n_bits: int, meta: FrameMeta | None = None) -> Frame:
    if not 0 <= routing < (1 << n_bits):
        raise ValueError(f"routing value {routing:#x} does not fit in {n_bits} bits")
    return Frame(PhyField(), routing, content, meta or FrameMeta())


def symbolic_encrypt(key_id: str, payload: Any) -> SymbolicCiphertext:
    return SymbolicCiphertext(key_id, payload, True)


def tamper(content: SymbolicCiphertext) -> SymbolicCiphertext:
    return replace(content, auth_tag_valid=False)


def symbolic_decrypt(node: Node, content: ContentField) -> Any:
    """Open ``content`` for ``node``.

    Plaintext is returned as-is. A ciphertext opens only when the node holds
    its key (else :class:`NoKey`) and the integrity tag is intact (else
    :class:`AuthFailure`).
    """
    if isinstance(content, Plaintext):
        return content.payload
    if content.key_id not in node.keyring:
        raise NoKey(f"node {node.label} does not hold key {content.key_id!r}")
    if not content.auth_tag_valid:
        raise AuthFailure(f"integrity check failed at node {node.label}")
    return content.payload


# ---------------------------------------------------------------------------
# Topology


@dataclass(frozen=True)
class Topology:
    nodes: Mapping[NodeId, Node]
    links: Mapping[LinkId, Link]
    adjacency: Mapping[NodeId, tuple[tuple[NodeId, LinkId], ...]]
    n_bits: int = 8

    def node(self, node_id: NodeId) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise MalformedSpec(f"unknown node {node_id}") from None

    def link_between(self, a: NodeId, b: NodeId) -> Link:
        for nbr, link_id in self.adjacency.get(a, ()):
            if nbr == b:
                return self.links[link_id]
        raise NoPath(f"no link between {a} and {b}")

    def by_name(self, name: str) -> Node:
        for node in self.nodes.values():
            if node.name == name:
                return node
        raise MalformedSpec(f"unknown node name {name!r}")

    @property
    def nocc(self) -> Node:
        return next(n for n in self.nodes.values() if n.kind is NodeKind.NOCC)

    def path_links(self, path: list[NodeId]) -> list[Link]:
        return [self.link_between(u, v) for u, v in zip(path, path[1:])]


def _parse_kind(enum_cls, raw, where):
    try:
        return enum_cls(raw)
    except ValueError:
        names = ", ".join(k.value for k in enum_cls)
        raise MalformedSpec(f"{where}: unknown kind {raw!r} (expected one of {names})") from None


def build_topology(spec: Mapping[str, Any]) -> Topology:
    """Validate the ``topology`` section of a scenario and build a Topology."""
    if not isinstance(spec, Mapping):
        raise MalformedSpec("topology: expected an object")
    raw_nodes = spec.get("nodes") or []
    if not raw_nodes:
        raise MalformedSpec("topology.nodes: empty node list")
    n_bits = spec.get("n_bits", 8)
    if not isinstance(n_bits, int) or isinstance(n_bits, bool) or not 1 <= n_bits <= 32:
        raise MalformedSpec(f"topology.n_bits: expected integer in [1, 32], got {n_bits!r}")

    nodes: dict[NodeId, Node] = {}
    for i, raw in enumerate(raw_nodes):
        where = f"topology.nodes[{i}]"
        try:
            node_id = raw["id"]
            kind = _parse_kind(NodeKind, raw["kind"], where)
        except (KeyError, TypeError):
            raise MalformedSpec(f"{where}: needs 'id' and 'kind'") from None
        if not isinstance(node_id, int) or isinstance(node_id, bool) or node_id < 0:
            raise MalformedSpec(f"{where}: id must be an unsigned integer")
        if node_id in nodes:
            raise MalformedSpec(f"{where}: duplicate node id {node_id}")
        nodes[node_id] = Node(node_id, kind, frozenset(raw.get("keys", ())), raw.get("name", ""))

    names = [n.name for n in nodes.values() if n.name]
    if len(names) != len(set(names)):
        raise MalformedSpec("topology.nodes: duplicate node names")
    n_nocc = sum(1 for n in nodes.values() if n.kind is NodeKind.NOCC)
    if n_nocc != 1:
        raise MalformedSpec(f"topology.nodes: expected exactly one NOCC, found {n_nocc}")

    links: dict[LinkId, Link] = {}
    adjacency: dict[NodeId, list[tuple[NodeId, LinkId]]] = {nid: [] for nid in nodes}
    for i, raw in enumerate(spec.get("links") or []):
        where = f"topology.links[{i}]"
        try:
            link_id, a, b = raw["id"], raw["a"], raw["b"]
            kind = _parse_kind(LinkKind, raw["kind"], where)
        except (KeyError, TypeError):
            raise MalformedSpec(f"{where}: needs 'id', 'kind', 'a' and 'b'") from None
        if link_id in links:
            raise MalformedSpec(f"{where}: duplicate link id {link_id}")
        for end in (a, b):
            if end not in nodes:
                raise MalformedSpec(f"{where}: dangling endpoint {end}")
        if a == b:
            raise MalformedSpec(f"{where}: self-loop on node {a}")
        link = Link(
            id=link_id,
            kind=kind,
            endpoints=(a, b),
            latency=float(raw.get("latency", 0.0)),
            eavesdroppable=bool(raw.get("eavesdroppable", kind is not LinkKind.ISL)),
            uplink_block_prob=float(raw.get("uplink_block_prob", 0.0)),
            downlink_block_prob=float(raw.get("downlink_block_prob", 0.0)),
        )
        links[link_id] = link
        adjacency[a].append((b, link_id))
        adjacency[b].append((a, link_id))

    frozen_adj = {nid: tuple(sorted(nbrs)) for nid, nbrs in adjacency.items()}
    return Topology(nodes, links, frozen_adj, n_bits)


def find_path(topo: Topology, src: NodeId, dst: NodeId) -> list[NodeId]:
    """Shortest hop-count path; ties go to the lexicographically smallest id sequence."""
    topo.node(src)
    topo.node(dst)
    # BFS from dst gives hop distances; walking greedily from src through the
    # smallest neighbour one step closer yields the lexicographic minimum.
    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        u = queue.popleft()
        for v, _ in topo.adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    if src not in dist:
        raise NoPath(f"no path from {src} to {dst}")
    path = [src]
    while path[-1] != dst:
        here = path[-1]
        path.append(min(v for v, _ in topo.adjacency[here] if dist.get(v) == dist[here] - 1))
    return path


def keys_shared(a: Node, b: Node) -> Iterable[str]:
    return sorted(a.keyring & b.keyring)
