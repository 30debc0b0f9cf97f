import pytest

from satom.core import Link, LinkKind
from satom.engine import (
    Blocked,
    Engine,
    IndependentBlocking,
    KindBlocking,
    RngStream,
    format_float,
    run_trials,
    trace_to_csv,
)
from satom.errors import PastTime


def _link(up=0.0, down=0.0, latency=0.5):
    return Link(7, LinkKind.FEEDER, (0, 1), latency, True, up, down)


def test_events_fire_in_time_order():
    engine = Engine()
    fired = []
    for t in (3.0, 1.0, 2.0):
        engine.schedule(t, "tick", action=lambda ev: fired.append(ev.fire_time))
    engine.run()
    assert fired == [1.0, 2.0, 3.0]
    assert engine.now == 3.0


def test_equal_times_keep_insertion_order_and_late_priority():
    engine = Engine()
    fired = []
    engine.schedule(1.0, "late", action=lambda ev: fired.append("late"), priority=1)
    for name in "abc":
        engine.schedule(1.0, name, action=lambda ev: fired.append(ev.kind))
    engine.run()
    assert fired == ["a", "b", "c", "late"]


def test_cancel_and_pending():
    engine = Engine()
    t = engine.schedule(1.0, "x")
    assert engine.pending(t)
    assert engine.cancel(t)
    assert not engine.cancel(t)
    assert engine.run() == []


def test_past_time_rejected():
    engine = Engine()
    engine.run_until(5.0)
    with pytest.raises(PastTime):
        engine.schedule(4.0, "x")
    with pytest.raises(PastTime):
        engine.run_until(1.0)


def test_empty_run_is_noop():
    engine = Engine()
    assert engine.run() == []
    assert engine.run_until(10.0) == [] and engine.now == 10.0


def test_events_scheduled_during_run_are_processed():
    engine = Engine()
    seen = []
    engine.schedule(1.0, "a", action=lambda ev: engine.after(0.5, "b", action=lambda e: seen.append(e.fire_time)))
    engine.run_until(2.0)
    assert seen == [1.5]


def test_transmit_extremes():
    engine = Engine()
    out = engine.transmit(_link(), 0, "m")
    assert not isinstance(out, Blocked)
    engine.run()
    assert engine.now == 0.5
    engine = Engine(blocking=IndependentBlocking())
    assert isinstance(engine.transmit(_link(up=1.0), 0, "m"), Blocked)
    assert not isinstance(engine.transmit(_link(up=1.0), 1, "m"), Blocked)


def test_transmit_blocking_rate():
    engine = Engine(42)
    link = _link(up=0.3)
    n = 100_000
    delivered = sum(not isinstance(engine.transmit(link, 0, i), Blocked) for i in range(n))
    assert abs(delivered / n - 0.7) < 0.01
    assert engine.blocked == n - delivered


def test_kind_blocking_overrides():
    policy = KindBlocking({"update": 1.0})
    engine = Engine(blocking=policy)
    assert isinstance(engine.transmit(_link(), 0, "m", kind="update"), Blocked)
    assert not isinstance(engine.transmit(_link(), 0, "m", kind="data"), Blocked)


def test_taps_see_blocked_attempts():
    engine = Engine()
    seen = []
    engine.taps.append(lambda link, src, msg, now: seen.append(msg))
    engine.transmit(_link(up=1.0), 0, "lost")
    assert seen == ["lost"]


def test_rng_streams():
    a, b = RngStream(5, (1, 2)), RngStream(5, (1, 2))
    assert [a.random() for _ in range(5)] == [b.random() for _ in range(5)]
    assert RngStream(5, 1).random() != RngStream(5, 2).random()
    assert RngStream(5, 1).random() != RngStream(6, 1).random()
    assert RngStream(5, 1).child(3).index == (1, 3)


def test_same_seed_same_trace():
    def run(seed):
        engine = Engine(seed)
        for i in range(50):
            engine.transmit(_link(up=0.5, latency=0.1 * (i % 3)), 0, i, detail=str(i))
        engine.run()
        return trace_to_csv(engine.trace)

    assert run(3) == run(3)
    assert run(3) != run(4)
    assert run(3).startswith("time,target,kind,detail\n")


def test_format_float():
    assert format_float(0.1 + 0.2) == "0.3"
    assert format_float(3) == "3"
    assert format_float(4.0) == "4"


def test_fire_times_are_quantised():
    engine = Engine()
    order = []
    engine.schedule(10.6, "expiry", action=lambda ev: order.append("expiry"), priority=1)
    engine.schedule(10.0 + 0.3 + 0.3, "arrival", action=lambda ev: order.append("arrival"))
    engine.run()
    assert order == ["arrival", "expiry"]


def _trial(i):
    return RngStream(9, i).random()


def test_run_trials_independent_of_workers():
    assert run_trials(_trial, 40, workers=1) == run_trials(_trial, 40, workers=2)
