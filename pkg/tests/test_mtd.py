import pytest

from conftest import chain_spec
from satom.adversary import Eavesdropper
from satom.core import FrameMeta, Plaintext, build_topology, make_frame
from satom.engine import Engine, KindBlocking, RngStream
from satom.errors import (
    CoexistenceViolation,
    MalformedSpec,
    StaleEpoch,
    UnknownEpoch,
    ValueSpaceExhausted,
)
from satom.mtd import (
    UNKNOWN_FIELD,
    Drop,
    Forward,
    InterpretationEntry,
    LocalDeliver,
    MtdController,
    MtdNetwork,
    MtdUpdate,
    RouterMtdState,
    Timeout,
    apply_update,
    deactivate_epoch,
    route_frame,
)

A, B, C = 2, 3, 4


def _frame(v):
    return make_frame(v, Plaintext(None), 8)


@pytest.fixture
def example1(example1_topo):
    ctrl = MtdController(example1_topo)
    ctrl.add_flow("f1", 0, C, values=[0x01, 0x03, 0x05])
    return ctrl


def test_initial_tables_route_example1(example1):
    states = example1.initial_states()
    d = route_frame(states[A], _frame(0x01))
    assert isinstance(d, Forward) and d.next_hop == B and d.frame.routing == 0x03
    d = route_frame(states[B], d.frame)
    assert isinstance(d, Forward) and d.next_hop == C and d.frame.routing == 0x05
    assert isinstance(route_frame(states[C], d.frame), LocalDeliver)
    d = route_frame(states[B], _frame(0x01))
    assert isinstance(d, Drop) and d.reason == UNKNOWN_FIELD


def test_rewrite_keeps_content(example1):
    states = example1.initial_states()
    f = make_frame(0x01, Plaintext("secret"), 8, FrameMeta("f1"))
    assert route_frame(states[A], f).frame.content == f.content


def test_example1_update_tables(example1):
    states = example1.initial_states()
    updates = example1.generate_update("f1", hops=[1], forced={1: 0x02})
    by_router = {u.target_router: u for u in updates}
    assert set(by_router) == {A, B}
    assert [(e.incoming, e.next_hop, e.outgoing) for e in by_router[A].new_entries] == [(0x01, B, 0x02)]
    assert [(e.incoming, e.next_hop, e.outgoing) for e in by_router[B].new_entries] == [(0x02, C, 0x05)]
    assert all(e.epoch == 1 for u in updates for e in u.new_entries)

    for u in updates:
        apply_update(states[u.target_router], u, 1.0)
    # both epochs coexist at B until the old one is deactivated
    assert route_frame(states[B], _frame(0x03)).frame.routing == 0x05
    assert route_frame(states[B], _frame(0x02)).frame.routing == 0x05
    assert route_frame(states[A], _frame(0x01)).frame.routing == 0x02
    deactivate_epoch(states[B], 0, 2.0)
    assert isinstance(route_frame(states[B], _frame(0x03)), Drop)
    assert isinstance(route_frame(states[B], _frame(0x02)), Forward)


def test_forced_value_in_use_rejected(example1):
    with pytest.raises(ValueSpaceExhausted):
        example1.generate_update("f1", hops=[1], forced={1: 0x05})


def test_unselectable_hop_rejected(example1):
    with pytest.raises(MalformedSpec):
        example1.generate_update("f1", hops=[7])


def test_value_space_exhausted():
    topo = build_topology(chain_spec(2, n_bits=1))
    ctrl = MtdController(topo)
    ctrl.add_flow("f", 0, 3, rng=RngStream(0))
    with pytest.raises(ValueSpaceExhausted):
        ctrl.generate_update("f", RngStream(1), hops=[1])


def test_random_updates_never_collide():
    topo = build_topology(chain_spec(4))
    ctrl = MtdController(topo)
    rng = RngStream(11)
    for k in range(3):
        ctrl.add_flow(f"f{k}", 0, 2 + k + 1, rng=rng)
    states = ctrl.initial_states()
    flows = sorted(ctrl.flows)
    for i in range(10_000):
        fid = flows[i % 3]
        for u in ctrl.generate_update(fid, rng):
            state = states[u.target_router]
            before = state.current_epoch
            apply_update(state, u, float(i))  # raises CoexistenceViolation on a clash
            deactivate_epoch(state, before, float(i))
            ctrl.retire(u.target_router, u.epoch)
        for r, state in states.items():
            incoming = [e.incoming for e in state.active_entries()]
            assert len(incoming) == len(set(incoming))


def test_stale_and_unknown_epochs(example1):
    states = example1.initial_states()
    u1 = {u.target_router: u for u in example1.generate_update("f1", hops=[1], forced={1: 0x02})}
    apply_update(states[A], u1[A], 1.0)
    with pytest.raises(StaleEpoch):
        apply_update(states[A], u1[A], 1.1)
    with pytest.raises(UnknownEpoch):
        deactivate_epoch(states[A], 9, 1.0)
    with pytest.raises(MalformedSpec):
        apply_update(states[B], u1[A], 1.0)


def test_coexistence_violation():
    state = RouterMtdState(A, [InterpretationEntry(1, B, 3, 0)], accepted_epochs=[0])
    bad = MtdUpdate(1, A, (InterpretationEntry(1, C, 3, 1),))
    with pytest.raises(CoexistenceViolation):
        apply_update(state, bad, 0.0)


def test_duplicate_incoming_in_update():
    with pytest.raises(MalformedSpec):
        MtdUpdate(1, A, (InterpretationEntry(1, B, 3, 1), InterpretationEntry(1, B, 4, 1)))


def test_timeout_deadline(example1):
    example1.policy = Timeout(5.0)
    u = {x.target_router: x for x in example1.generate_update("f1", hops=[1], forced={1: 0x02})}
    states = example1.initial_states()
    apply_update(states[B], u[B], 2.0)
    assert states[B].pending_deactivations == [(0, 7.0)]
    assert states[B].active_epochs() == [0, 1]


def test_epochs_monotone_per_router(example1):
    states = example1.initial_states()
    rng = RngStream(4)
    for _ in range(20):
        for u in example1.generate_update("f1", rng):
            apply_update(states[u.target_router], u, 0.0)
    for s in states.values():
        assert s.accepted_epochs == sorted(s.accepted_epochs)


def _network(topo, blocking=None, policy=None, seed=0):
    ctrl = MtdController(topo)
    if policy is not None:
        ctrl.policy = policy
    ctrl.add_flow("f1", 0, 4, values=[0x01, 0x03, 0x05])
    engine = Engine(seed, blocking=blocking)
    return engine, ctrl, MtdNetwork(topo, engine, ctrl)


def test_network_delivers_and_counts_lookups(example1_topo):
    engine, ctrl, net = _network(example1_topo)
    keys = [net.inject("f1", 0.1 * i) for i in range(10)]
    engine.run_until(5)
    assert all(net.outcomes[k] == "delivered" for k in keys)
    assert net.states[A].lookups == 10 and net.states[B].lookups == 10


def test_explicit_deactivation_after_drain(example1_topo):
    engine, ctrl, net = _network(example1_topo)
    net.schedule_update("f1", 1.0, hops=[1], forced={1: 0x02})
    engine.run_until(10)
    assert net.completed_rounds == [1]
    deacts = [e for e in net.events if e.action == "deactivate"]
    applies = [e for e in net.events if e.action == "apply"]
    assert len(deacts) == 2 and min(d.time for d in deacts) >= max(a.time for a in applies) + net.drain_delay
    assert net.states[B].active_incoming() == {0x02}


def test_lost_updates_do_not_lose_frames(example1_topo):
    # every update to A is lost: A keeps routing with epoch 0
    class Drop2A:
        def __call__(self, link, src, message, kind, now, rng):
            return kind == "mtd-update" and message.content.payload[1].target_router == A

    engine, ctrl, net = _network(example1_topo, blocking=Drop2A())
    net.schedule_update("f1", 1.0, hops=[1], forced={1: 0x02})
    keys = [net.inject("f1", 0.5 * i) for i in range(12)]
    engine.run_until(8)
    assert all(net.outcomes[k] == "delivered" for k in keys)
    assert net.states[A].current_epoch == 0 and net.states[B].current_epoch == 1
    assert net.completed_rounds == []


def test_timeout_policy_lossless_without_losses(example1_topo):
    engine, ctrl, net = _network(example1_topo, policy=Timeout(0.5))
    net.schedule_update("f1", 1.0, hops=[0, 1])
    keys = [net.inject("f1", 0.05 * i) for i in range(80)]
    engine.run_until(10)
    assert all(net.outcomes[k] == "delivered" for k in keys)
    assert net.completed_rounds == [1]
    assert {e.router for e in net.events if e.action == "deactivate"} == {"A", "B"}


def test_updates_retransmitted_under_loss(example1_topo):
    engine, ctrl, net = _network(example1_topo, blocking=KindBlocking({"mtd-update": 0.5}), seed=3)
    for t in (1.0, 2.0, 3.0):
        net.schedule_update("f1", t)
    keys = [net.inject("f1", 0.1 * i) for i in range(60)]
    engine.run_until(60)
    assert net.completed_rounds == [1, 2, 3]
    assert net.update_sends > len(ctrl.log)
    assert all(net.outcomes[k] == "delivered" for k in keys)


def test_raw_stale_frame_dropped(example1_topo):
    engine, ctrl, net = _network(example1_topo)
    net.schedule_update("f1", 1.0, hops=[1], forced={1: 0x02})
    key = net.inject_raw(B, 0x03, 5.0)
    engine.run_until(6)
    assert net.outcomes[key] == "dropped"


def test_eavesdropper_sees_only_routing_and_ciphertext(example1_topo):
    engine, ctrl, net = _network(example1_topo)
    tap = Eavesdropper([1, 2, 3]).attach(engine)
    net.schedule_update("f1", 1.0)
    for i in range(5):
        net.inject("f1", 0.5 * i)
    engine.run_until(10)
    obs = tap.knowledge.observations
    assert obs and all(o.link == 1 for o in obs)  # ISLs are not eavesdroppable
    assert all(o.content_opaque for o in obs)
    assert not any(hasattr(o, "payload") for o in obs)
