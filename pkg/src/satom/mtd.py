"""Spatio-temporal moving target defense on the routing field.

Every onboard router holds an interpretation table mapping an incoming
routing value to ``(next hop, outgoing value)``. Tables are versioned by
epoch: a dynamic update installs a complete new table under a fresh epoch
while the previous epochs stay active, so frames still carrying old values
keep flowing until the old epoch is deactivated.

Pure state operations (:func:`route_frame`, :func:`apply_update`,
:func:`deactivate_epoch`) live at module level. :class:`MtdController`
plans mappings and updates, and :class:`MtdNetwork` runs them on top of an
:class:`~satom.engine.Engine`.
"""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

from .core import (
    Frame,
    FrameMeta,
    NodeId,
    Plaintext,
    Topology,
    find_path,
    make_frame,
    symbolic_decrypt,
    symbolic_encrypt,
)
from .engine import Blocked, Engine, Event, RngStream
from .errors import (
    AuthFailure,
    CoexistenceViolation,
    MalformedSpec,
    NoKey,
    StaleEpoch,
    UnknownEpoch,
    ValueSpaceExhausted,
)

# next_hop value meaning "this router is the flow's destination"
LOCAL = None

UNKNOWN_FIELD = "UnknownField"


@dataclass(frozen=True)
class InterpretationEntry:
    incoming: int
    next_hop: NodeId | None
    outgoing: int | None
    epoch: int
    active: bool = True


@dataclass(frozen=True)
class Forward:
    next_hop: NodeId
    frame: Frame


@dataclass(frozen=True)
class LocalDeliver:
    frame: Frame


@dataclass(frozen=True)
class Drop:
    reason: str
    frame: Frame


Decision = Forward | LocalDeliver | Drop


@dataclass(frozen=True)
class Timeout:
    duration: float


@dataclass(frozen=True)
class ExplicitCommand:
    pass


DeactivationPolicy = Timeout | ExplicitCommand


@dataclass(frozen=True)
class MtdUpdate:
    update_id: int
    target_router: NodeId
    new_entries: tuple[InterpretationEntry, ...]
    policy: DeactivationPolicy = ExplicitCommand()

    def __post_init__(self):
        values = [e.incoming for e in self.new_entries]
        if len(values) != len(set(values)):
            raise MalformedSpec(f"update {self.update_id}: duplicate incoming values")
        if len({e.epoch for e in self.new_entries}) > 1:
            raise MalformedSpec(f"update {self.update_id}: entries span several epochs")

    @property
    def epoch(self) -> int:
        return self.new_entries[0].epoch if self.new_entries else -1


@dataclass
class RouterMtdState:
    router: NodeId
    entries: list[InterpretationEntry] = field(default_factory=list)
    pending_deactivations: list[tuple[int, float]] = field(default_factory=list)
    accepted_epochs: list[int] = field(default_factory=list)
    lookups: int = 0
    rewrites: int = 0
    _table: dict[int, InterpretationEntry] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.rebuild()

    def rebuild(self) -> None:
        # one dict lookup per frame; the newest active epoch wins a shared value
        table: dict[int, InterpretationEntry] = {}
        for e in self.entries:
            if e.active:
                cur = table.get(e.incoming)
                if cur is None or e.epoch > cur.epoch:
                    table[e.incoming] = e
        self._table = table

    @property
    def current_epoch(self) -> int:
        return self.accepted_epochs[-1] if self.accepted_epochs else -1

    def active_entries(self) -> list[InterpretationEntry]:
        return [e for e in self.entries if e.active]

    def active_incoming(self) -> set[int]:
        return set(self._table)

    def active_values(self) -> set[int]:
        vals = set()
        for e in self.entries:
            if e.active:
                vals.add(e.incoming)
                if e.outgoing is not None:
                    vals.add(e.outgoing)
        return vals

    def active_epochs(self) -> list[int]:
        return sorted({e.epoch for e in self.entries if e.active})


def route_frame(state: RouterMtdState, frame: Frame) -> Decision:
    """Look up the routing field and rewrite it; content is never touched."""
    state.lookups += 1
    entry = state._table.get(frame.routing)
    if entry is None:
        return Drop(UNKNOWN_FIELD, frame)
    if entry.next_hop is LOCAL:
        return LocalDeliver(frame)
    state.rewrites += 1
    return Forward(entry.next_hop, frame.with_routing(entry.outgoing))


def apply_update(state: RouterMtdState, update: MtdUpdate, now: float) -> RouterMtdState:
    if update.target_router != state.router:
        raise MalformedSpec(f"update {update.update_id} targets {update.target_router}, not {state.router}")
    if update.epoch <= state.current_epoch:
        raise StaleEpoch(f"router {state.router}: epoch {update.epoch} <= current {state.current_epoch}")
    for new in update.new_entries:
        old = state._table.get(new.incoming)
        if old is not None and old.next_hop != new.next_hop:
            raise CoexistenceViolation(
                f"router {state.router}: value {new.incoming:#x} maps to {old.next_hop} "
                f"in epoch {old.epoch} but {new.next_hop} in epoch {new.epoch}")
    superseded = state.active_epochs()
    state.entries.extend(update.new_entries)
    state.accepted_epochs.append(update.epoch)
    if isinstance(update.policy, Timeout):
        already = {ep for ep, _ in state.pending_deactivations}
        for ep in superseded:
            if ep not in already:
                state.pending_deactivations.append((ep, now + update.policy.duration))
    state.rebuild()
    return state


def deactivate_epoch(state: RouterMtdState, epoch: int, now: float) -> RouterMtdState:
    if epoch not in state.accepted_epochs:
        raise UnknownEpoch(f"router {state.router} never held epoch {epoch}")
    # deactivation is final, so the entries are dropped rather than kept flagged
    state.entries = [e for e in state.entries if e.epoch != epoch]
    state.pending_deactivations = [(ep, t) for ep, t in state.pending_deactivations if ep != epoch]
    state.rebuild()
    return state


# ---------------------------------------------------------------------------
# Controller


@dataclass
class FlowRoute:
    """A flow's route split into the MTD-managed router segment.

    ``values[j]`` is the routing value arriving at ``routers[j]``; when the
    flow leaves the constellation through ``egress`` the last router's
    outgoing value is ``values[len(routers)]``.
    """

    flow_id: str
    path: list[NodeId]
    routers: list[NodeId]
    ingress: NodeId | None
    egress: NodeId | None
    values: list[int]

    @property
    def source(self) -> NodeId:
        return self.path[0]

    @property
    def destination(self) -> NodeId:
        return self.path[-1]

    def selectable_hops(self) -> list[int]:
        start = 0 if self.ingress is not None else 1
        return list(range(start, len(self.values)))

    def entry_for(self, j: int) -> tuple[int, NodeId | None, int | None]:
        incoming = self.values[j]
        if j + 1 < len(self.routers):
            return incoming, self.routers[j + 1], self.values[j + 1]
        if self.egress is not None:
            return incoming, self.egress, self.values[j + 1]
        return incoming, LOCAL, None


def split_route(topo: Topology, flow_id: str, path: list[NodeId]) -> FlowRoute:
    sat = [topo.node(n).kind.is_satellite for n in path]
    idx = [i for i, s in enumerate(sat) if s]
    if not idx:
        raise MalformedSpec(f"flow {flow_id}: path crosses no satellite router")
    first, last = idx[0], idx[-1]
    if idx != list(range(first, last + 1)):
        raise MalformedSpec(f"flow {flow_id}: satellite segment of the path is not contiguous")
    routers = path[first:last + 1]
    ingress = path[first - 1] if first > 0 else None
    egress = path[last + 1] if last + 1 < len(path) else None
    n_values = len(routers) + (1 if egress is not None else 0)
    return FlowRoute(flow_id, list(path), routers, ingress, egress, [0] * n_values)


class MtdController:
    """Ground-side planner: owns the current mapping of every flow.

    ``epoch_values`` tracks, per router, the values used by every epoch the
    router may still have active; fresh values avoid all of them. With
    ``no_reuse`` a value is never handed out twice at the same router.
    """

    def __init__(self, topo: Topology, policy: DeactivationPolicy = ExplicitCommand(),
                 selection: Callable[[FlowRoute], Iterable[int]] | None = None, no_reuse: bool = False):
        self.topo = topo
        self.n_bits = topo.n_bits
        self.policy = policy
        self.selection = selection or (lambda route: route.selectable_hops())
        self.next_epoch = 1
        self.flows: dict[str, FlowRoute] = {}
        self.tables: dict[NodeId, dict[int, tuple[NodeId | None, int | None]]] = {}
        self.epoch_values: dict[NodeId, dict[int, set[int]]] = {}
        self.router_epochs: dict[NodeId, list[int]] = {}
        self.log: list[MtdUpdate] = []
        self.no_reuse = no_reuse
        self.ever_used: dict[NodeId, set[int]] = {}
        self._ids = itertools.count(1)

    # -- flows --------------------------------------------------------------

    def add_flow(self, flow_id: str, src: NodeId, dst: NodeId, values: list[int] | None = None,
                 rng: RngStream | None = None, identity: bool = False) -> FlowRoute:
        """Register a flow and assign its initial (epoch 0) values.

        ``values`` pins every hop value; ``identity`` keeps a single value
        end to end (MTD off); otherwise values are drawn fresh per hop.
        """
        if flow_id in self.flows:
            raise MalformedSpec(f"duplicate flow id {flow_id!r}")
        route = split_route(self.topo, flow_id, find_path(self.topo, src, dst))
        if values is not None:
            if len(values) != len(route.values):
                raise MalformedSpec(f"flow {flow_id}: expected {len(route.values)} hop values, got {len(values)}")
            chosen = list(values)
        elif identity:
            v = self._fresh(self._hop_neighbours(route, range(len(route.values))), rng, {})
            chosen = [v] * len(route.values)
        else:
            chosen = []
            taken: dict[NodeId, set[int]] = {}
            for h in range(len(route.values)):
                neighbours = self._hop_neighbours(route, [h])
                chosen.append(self._fresh(neighbours, rng, taken))
                for r in neighbours:
                    taken.setdefault(r, set()).add(chosen[-1])
        for v in chosen:
            if not 0 <= v < (1 << self.n_bits):
                raise MalformedSpec(f"flow {flow_id}: value {v:#x} does not fit in {self.n_bits} bits")
        route.values = chosen
        for j, r in enumerate(route.routers):
            table = self.tables.setdefault(r, {})
            incoming, nxt, out = route.entry_for(j)
            if incoming in table:
                raise MalformedSpec(f"flow {flow_id}: value {incoming:#x} already used at router {r}")
            table[incoming] = (nxt, out)
            vals = self.epoch_values.setdefault(r, {}).setdefault(0, set())
            vals.add(incoming)
            if out is not None:
                vals.add(out)
            self.ever_used.setdefault(r, set()).update(vals)
            self.router_epochs.setdefault(r, [0])
        self.flows[flow_id] = route
        return route

    def initial_states(self) -> dict[NodeId, RouterMtdState]:
        states = {}
        for r, table in self.tables.items():
            entries = [InterpretationEntry(v, nxt, out, 0) for v, (nxt, out) in sorted(table.items())]
            states[r] = RouterMtdState(r, entries, accepted_epochs=[0])
        return states

    def flow_for_path(self, path: list[NodeId]) -> FlowRoute:
        for route in self.flows.values():
            if route.path == list(path) or route.routers == list(path):
                return route
        raise MalformedSpec(f"no flow registered on path {path}")

    # -- value allocation -----------------------------------------------------

    def live_values(self, router: NodeId) -> set[int]:
        out: set[int] = set()
        for vals in self.epoch_values.get(router, {}).values():
            out |= vals
        return out

    def _hop_neighbours(self, route: FlowRoute, hops: Iterable[int]) -> set[NodeId]:
        routers = set()
        for h in hops:
            if h >= 1:
                routers.add(route.routers[h - 1])
            if h < len(route.routers):
                routers.add(route.routers[h])
        return routers

    def _fresh(self, routers: set[NodeId], rng: RngStream | None, taken: dict[NodeId, set[int]]) -> int:
        used: set[int] = set()
        for r in routers:
            used |= self.live_values(r)
            used |= taken.get(r, set())
            if self.no_reuse:
                used |= self.ever_used.get(r, set())
        space = 1 << self.n_bits
        if len(used) >= space:
            raise ValueSpaceExhausted(f"no free {self.n_bits}-bit value at routers {sorted(routers)}")
        if rng is None:
            return min(v for v in range(space) if v not in used)
        if space <= 1 << 16:
            free = [v for v in range(space) if v not in used]
            return free[rng.integers(len(free))]
        while True:
            v = rng.integers(space)
            if v not in used:
                return v

    # -- updates --------------------------------------------------------------

    def generate_update(self, flow: str | list[NodeId], rng: RngStream | None = None,
                        hops: Iterable[int] | None = None,
                        forced: Mapping[int, int] | None = None) -> list[MtdUpdate]:
        """Re-draw the values on the selected hops of a flow.

        Returns one update per affected router, ordered along the path, each
        carrying that router's complete table under a fresh epoch. Next hops
        never change, only values. ``forced`` pins chosen hop values.
        """
        route = self.flows[flow] if isinstance(flow, str) else self.flow_for_path(flow)
        forced = dict(forced or {})
        hop_list = sorted(set(hops if hops is not None else self.selection(route)) | set(forced))
        for h in hop_list:
            if h not in route.selectable_hops():
                raise MalformedSpec(f"flow {route.flow_id}: hop {h} is not selectable")
        if not hop_list:
            raise MalformedSpec(f"flow {route.flow_id}: no hop selected for update")

        taken: dict[NodeId, set[int]] = {}
        affected: set[NodeId] = set()
        for h in hop_list:
            neighbours = self._hop_neighbours(route, [h])
            if h in forced:
                value = forced[h]
                clash = any(value in self.live_values(r) | taken.get(r, set()) for r in neighbours)
                if clash or not 0 <= value < (1 << self.n_bits):
                    raise ValueSpaceExhausted(f"forced value {value:#x} is not free on hop {h}")
            else:
                value = self._fresh(neighbours, rng, taken)
            old = route.values[h]
            if h < len(route.routers):
                r = route.routers[h]
                table = self.tables[r]
                table[value] = table.pop(old)
            if h >= 1:
                up = route.routers[h - 1]
                table = self.tables[up]
                inc = route.values[h - 1]
                table[inc] = (table[inc][0], value)
            route.values[h] = value
            for r in neighbours:
                taken.setdefault(r, set()).add(value)
            affected |= neighbours

        epoch = self.next_epoch
        self.next_epoch += 1
        updates = []
        for r in route.routers:
            if r not in affected:
                continue
            entries = tuple(InterpretationEntry(v, nxt, out, epoch)
                            for v, (nxt, out) in sorted(self.tables[r].items()))
            vals = {e.incoming for e in entries} | {e.outgoing for e in entries if e.outgoing is not None}
            self.epoch_values[r][epoch] = vals
            self.ever_used.setdefault(r, set()).update(vals)
            self.router_epochs[r].append(epoch)
            upd = MtdUpdate(next(self._ids), r, entries, self.policy)
            updates.append(upd)
            self.log.append(upd)
        return updates

    def retire(self, router: NodeId, before_epoch: int) -> None:
        """Forget values of epochs older than ``before_epoch`` (they are deactivated)."""
        per_epoch = self.epoch_values.get(router, {})
        for ep in [ep for ep in per_epoch if ep < before_epoch]:
            del per_epoch[ep]


# ---------------------------------------------------------------------------
# Runtime


@dataclass(frozen=True)
class RouterEvent:
    time: float
    router: str
    action: str
    incoming: int | None = None
    outgoing: int | None = None
    next_hop: str = ""
    epoch: int | None = None
    flow: str = ""


@dataclass
class _Round:
    flow_id: str
    epoch: int
    updates: list[MtdUpdate]
    delays: dict[NodeId, float]
    ingress_value: int | None
    acked: set[NodeId] = field(default_factory=set)
    deact_acked: set[NodeId] = field(default_factory=set)
    next_index: int = 0
    ingress_switched: bool = False


class MtdNetwork:
    """Runs data frames and MTD dissemination rounds through an engine.

    Rounds are processed one at a time. Within a round the updates go out
    downstream-first: a router's update is sent only after every router
    further along the path has acknowledged, so no router ever emits a value
    its successor has not learned. Lost updates are retransmitted after
    ``ack_timeout``. Under ``ExplicitCommand`` the superseded epochs are
    deactivated by command once every router has acknowledged and the
    ``drain_delay`` has passed; under ``Timeout`` each router drops them on
    its own timer.
    """

    def __init__(self, topo: Topology, engine: Engine, controller: MtdController, *,
                 ack_timeout: float | None = None, drain_delay: float | None = None,
                 downstream_first: bool = True, max_retries: int | None = None):
        self.topo = topo
        self.engine = engine
        self.ctrl = controller
        self.nocc = topo.nocc.id
        self.states = controller.initial_states()
        self.emission = {fid: route.values[0] for fid, route in controller.flows.items()}
        self.downstream_first = downstream_first
        self.max_retries = max_retries
        max_lat = max((sum(l.latency for l in topo.path_links(r.path)) for r in controller.flows.values()),
                      default=0.0)
        self.drain_delay = 10 * max_lat if drain_delay is None else drain_delay
        self._ack_timeout = ack_timeout
        self.events: list[RouterEvent] = []
        self.outcomes: dict[tuple[str, int], str] = {}
        self.update_sends = 0
        self.completed_rounds: list[int] = []
        self._rounds: deque[_Round] = deque()
        self._current: _Round | None = None
        self._retry: dict[tuple[str, NodeId, int], int] = {}
        self._attempts: dict[tuple[str, NodeId, int], int] = {}
        self._seq = itertools.count()

    def label(self, node: NodeId | None) -> str:
        return "local" if node is None else self.topo.node(node).label

    def _log(self, action, router, **kw):
        self.events.append(RouterEvent(self.engine.now, self.label(router), action, **kw))

    # -- data plane ------------------------------------------------------------

    def inject(self, flow_id: str, at: float, payload=None) -> tuple[str, int]:
        """Emit one data frame of ``flow_id`` at time ``at`` from the ingress side."""
        key = (flow_id, next(self._seq))
        route = self.ctrl.flows[flow_id]

        def emit(ev: Event):
            dst = self.topo.node(route.destination)
            key_id = min(dst.keyring) if dst.keyring else f"e2e-{flow_id}"
            frame = make_frame(self.emission[flow_id], symbolic_encrypt(key_id, payload or flow_id),
                               self.topo.n_bits, FrameMeta(flow_id, self.engine.now, key[1]))
            self.outcomes[key] = "in-flight"
            if route.ingress is None:
                self._arrive(route.routers[0], frame, key)
            else:
                self._send(route.ingress, route.routers[0], frame, key)

        self.engine.schedule(at, "inject", target=self.label(route.source), action=emit,
                             detail=f"{flow_id}#{key[1]}")
        return key

    def inject_raw(self, router: NodeId, value: int, at: float, key: tuple[str, int] | None = None):
        """Deliver an arbitrary routing value straight to a router (e.g. a stale frame)."""
        key = key or ("raw", next(self._seq))

        def emit(ev):
            frame = make_frame(value, Plaintext(None), self.topo.n_bits, FrameMeta(key[0], self.engine.now, key[1]))
            self.outcomes[key] = "in-flight"
            self._arrive(router, frame, key)

        self.engine.schedule(at, "inject-raw", target=self.label(router), action=emit)
        return key

    def _send(self, src: NodeId, dst: NodeId, frame: Frame, key):
        link = self.topo.link_between(src, dst)
        sent = self.engine.transmit(link, src, frame, kind="data",
                                    on_deliver=lambda ev: self._arrive(dst, ev.payload, key))
        if isinstance(sent, Blocked):
            self.outcomes[key] = "blocked"

    def _arrive(self, node: NodeId, frame: Frame, key):
        state = self.states.get(node)
        if state is None:
            self._deliver(node, frame, key, None)
            return
        decision = route_frame(state, frame)
        entry = state._table.get(frame.routing)
        if isinstance(decision, Forward):
            self._log("rewrite", node, incoming=frame.routing, outgoing=decision.frame.routing,
                      next_hop=self.label(decision.next_hop), epoch=entry.epoch, flow=key[0])
            self._send(node, decision.next_hop, decision.frame, key)
        elif isinstance(decision, LocalDeliver):
            self._deliver(node, frame, key, entry.epoch)
        else:
            self.outcomes[key] = "dropped"
            self._log("drop", node, incoming=frame.routing, flow=key[0])

    def _deliver(self, node: NodeId, frame: Frame, key, epoch: int | None):
        # the end host authenticates the content (hosts without keys cannot);
        # forged frames stop here
        host = self.topo.node(node)
        if host.keyring:
            try:
                symbolic_decrypt(host, frame.content)
            except (AuthFailure, NoKey):
                self.outcomes[key] = "rejected"
                self._log("auth-reject", node, incoming=frame.routing, epoch=epoch, flow=key[0])
                return
        self.outcomes[key] = "delivered"
        self._log("deliver", node, incoming=frame.routing, epoch=epoch, flow=key[0])

    # -- control plane ---------------------------------------------------------

    def ack_timeout(self, router: NodeId) -> float:
        if self._ack_timeout is not None:
            return self._ack_timeout
        one_way = sum(l.latency for l in self.topo.path_links(find_path(self.topo, self.nocc, router)))
        return max(3 * one_way, 1e-3)

    def schedule_update(self, flow_id: str, at: float, rng: RngStream | None = None,
                        hops: Iterable[int] | None = None, forced: Mapping[int, int] | None = None,
                        delays: Mapping[NodeId, float] | None = None) -> None:
        """Plan a dynamic update of ``flow_id`` at time ``at``; rounds queue up."""

        def start(ev):
            updates = self.ctrl.generate_update(flow_id, rng, hops=hops, forced=forced)
            route = self.ctrl.flows[flow_id]
            ingress_value = route.values[0] if route.values[0] != self.emission[flow_id] else None
            if self.downstream_first:
                updates = sorted(updates, key=lambda u: -route.routers.index(u.target_router))
            epoch = updates[0].epoch if updates else self.ctrl.next_epoch - 1
            rnd = _Round(flow_id, epoch, updates, dict(delays or {}), ingress_value)
            self._rounds.append(rnd)
            if self._current is None:
                self._next_round()

        self.engine.schedule(at, "mtd-plan", target=self.label(self.nocc), action=start,
                             detail=flow_id)

    def _next_round(self):
        self._current = self._rounds.popleft() if self._rounds else None
        rnd = self._current
        if rnd is None:
            return
        if not rnd.updates:
            self._finish_updates(rnd)
        elif self.downstream_first:
            self._send_next(rnd)
        else:
            for upd in rnd.updates:
                self.disseminate_update(upd, delay=rnd.delays.get(upd.target_router, 0.0))

    def _send_next(self, rnd: _Round):
        upd = rnd.updates[rnd.next_index]
        self.disseminate_update(upd, delay=rnd.delays.get(upd.target_router, 0.0))

    def disseminate_update(self, update: MtdUpdate, delay: float = 0.0) -> None:
        """Send ``update`` encrypted from the NOCC, retrying until acknowledged."""
        self._send_control("update", update.target_router, update, delay)

    def _send_control(self, what: str, router: NodeId, body, delay: float = 0.0):
        rkey = (what, router, getattr(body, "update_id", None) or body[0])
        kind = "mtd-update" if what == "update" else "mtd-deactivate"

        def attempt(ev=None):
            n = self._attempts.get(rkey, 0)
            if self.max_retries is not None and n > self.max_retries:
                return
            self._attempts[rkey] = n + 1
            if what == "update":
                self.update_sends += 1
            key_id = self._shared_key(router)
            frame = make_frame(0, symbolic_encrypt(key_id, (what, body)), self.topo.n_bits)
            path = find_path(self.topo, self.nocc, router)
            self.engine.relay(self.topo, path, frame, kind, self._on_control,
                              detail=f"{what}->{self.label(router)}")
            self._retry[rkey] = self.engine.after(self.ack_timeout(router), "mtd-retry",
                                                  target=self.label(self.nocc), action=attempt)

        if delay > 0:
            self.engine.after(delay, "mtd-send", target=self.label(self.nocc), action=attempt)
        else:
            attempt()

    def _shared_key(self, router: NodeId) -> str:
        shared = sorted(self.topo.node(self.nocc).keyring & self.topo.node(router).keyring)
        if not shared:
            raise MalformedSpec(f"NOCC shares no key with router {self.label(router)}")
        return shared[0]

    def _on_control(self, ev: Event):
        frame: Frame = ev.payload
        router = ev.target
        what, body = symbolic_decrypt(self.topo.node(router), frame.content)
        state = self.states[router]
        if what == "update":
            try:
                apply_update(state, body, self.engine.now)
                self._log("apply", router, epoch=body.epoch)
                for ep, deadline in state.pending_deactivations:
                    self.engine.schedule(deadline, "mtd-timeout", target=self.label(router),
                                         action=lambda e, ep=ep, d=deadline: self._timeout(router, ep, d))
            except StaleEpoch:
                pass  # already applied or superseded: acknowledge again
            ack = ("update-ack", body.update_id)
        else:
            epochs = body[1]
            for ep in epochs:
                if any(e.epoch == ep and e.active for e in state.entries):
                    deactivate_epoch(state, ep, self.engine.now)
                    self._log("deactivate", router, epoch=ep)
            ack = ("deactivate-ack", body[0])
        reply = make_frame(0, symbolic_encrypt(self._shared_key(router), ack), self.topo.n_bits)
        path = find_path(self.topo, router, self.nocc)
        self.engine.relay(self.topo, path, reply, "mtd-ack",
                          lambda e, r=router, a=ack: self._on_ack(r, a))

    def _timeout(self, router: NodeId, epoch: int, deadline: float):
        state = self.states[router]
        if (epoch, deadline) in state.pending_deactivations:
            deactivate_epoch(state, epoch, self.engine.now)
            self._log("deactivate", router, epoch=epoch)

    def _on_ack(self, router: NodeId, ack):
        what, ident = ack
        rkey = ("update" if what == "update-ack" else "deactivate", router, ident)
        ticket = self._retry.pop(rkey, None)
        if ticket is None:
            return  # duplicate ack
        self.engine.cancel(ticket)
        rnd = self._current
        if rnd is None:
            return
        if what == "update-ack":
            if not any(u.update_id == ident for u in rnd.updates):
                return
            rnd.acked.add(router)
            route = self.ctrl.flows[rnd.flow_id]
            if rnd.ingress_value is not None and router == route.routers[0] and not self.downstream_first:
                self._switch_ingress(rnd)
            if len(rnd.acked) == len(rnd.updates):
                self._finish_updates(rnd)
            elif self.downstream_first:
                rnd.next_index += 1
                self._send_next(rnd)
        else:
            if ident != rnd.epoch:
                return
            rnd.deact_acked.add(router)
            if len(rnd.deact_acked) == len(rnd.updates):
                self._complete(rnd)

    def _switch_ingress(self, rnd: _Round):
        if rnd.ingress_value is not None and not rnd.ingress_switched:
            self.emission[rnd.flow_id] = rnd.ingress_value
            rnd.ingress_switched = True
            route = self.ctrl.flows[rnd.flow_id]
            self._log("ingress-switch", route.ingress, outgoing=rnd.ingress_value, flow=rnd.flow_id)

    def _finish_updates(self, rnd: _Round):
        self._switch_ingress(rnd)
        if isinstance(self.ctrl.policy, Timeout):
            self.engine.after(self.ctrl.policy.duration, "mtd-round-end", target=self.label(self.nocc),
                              action=lambda ev: self._complete(rnd))
            return
        if not rnd.updates:
            self._complete(rnd)
            return

        def command(ev):
            for upd in rnd.updates:
                state_epochs = [ep for ep in self.ctrl.router_epochs[upd.target_router] if ep < rnd.epoch]
                self._send_control("deactivate", upd.target_router, (rnd.epoch, tuple(state_epochs)))

        self.engine.after(self.drain_delay, "mtd-drain", target=self.label(self.nocc), action=command)

    def _complete(self, rnd: _Round):
        for upd in rnd.updates:
            self.ctrl.retire(upd.target_router, rnd.epoch)
        self.completed_rounds.append(rnd.epoch)
        self._next_round()
