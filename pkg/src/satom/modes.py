"""Ciphered/safe mode management with an M-delayed fallback.

A plaintext delayed-fallback command opens a window of length ``M``; the
satellite reports it on telemetry and switches to safe mode when the window
expires, unless an authenticated cancellation from the NOCC arrives first.
The NOCC cancels any reported fallback it never issued.

``M = 0`` degenerates to the classic backdoor command, and an onboard
fallback generated whenever command traffic falls silent with ``M`` equal
to the timer degenerates to the TC-timer failsafe; :class:`BackdoorSatellite`
and :class:`TcTimerSatellite` model those two baselines directly.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Callable

from scipy.stats import binomtest

from .core import Link, LinkKind, Node, NodeKind, SymbolicCiphertext, symbolic_decrypt, symbolic_encrypt
from .engine import LATE, Blocked, Engine, Event, RngStream, run_trials
from .errors import (
    AuthFailure,
    NeverRecovered,
    NoKey,
    NoOpenWindow,
    StaleFreshness,
    WindowAlreadyOpen,
)

SAT_KEY = "k-sat"
TIME_EPS = 1e-9


class Mode(enum.Enum):
    CIPHERED_NORMAL = "CipheredNormal"
    CIPHERED_ABNORMAL = "CipheredAbnormal"
    SAFE = "Safe"

    @property
    def ciphered(self) -> bool:
        return self is not Mode.SAFE


@dataclass(frozen=True)
class FallbackCommand:
    """Plaintext delayed-fallback telecommand; only its freshness is checked."""

    command_id: str
    freshness: int


@dataclass(frozen=True)
class StatusReport:
    command_id: str
    opened_at: float
    mode: Mode


@dataclass(frozen=True)
class Cancellation:
    command_id: str


@dataclass(frozen=True)
class FallbackWindow:
    opened_at: float
    deadline: float
    source_command_id: str


@dataclass
class ModeState:
    M: float
    mode: Mode = Mode.CIPHERED_NORMAL
    window: FallbackWindow | None = None
    last_accepted_freshness: int = -1

    def __post_init__(self):
        if self.M < 0:
            raise ValueError(f"M must be >= 0, got {self.M}")


def check_freshness(state: ModeState, freshness: int) -> None:
    if freshness <= state.last_accepted_freshness:
        raise StaleFreshness(f"sequence {freshness} <= last accepted {state.last_accepted_freshness}")


def on_delayed_fallback(state: ModeState, cmd: FallbackCommand, now: float) -> StatusReport:
    """Open the fallback window and return the status report to downlink."""
    if not state.mode.ciphered:
        raise WindowAlreadyOpen("satellite already in safe mode")
    check_freshness(state, cmd.freshness)
    if state.window is not None:
        raise WindowAlreadyOpen(f"window for {state.window.source_command_id} still open")
    state.last_accepted_freshness = cmd.freshness
    state.window = FallbackWindow(now, now + state.M, cmd.command_id)
    return StatusReport(cmd.command_id, now, state.mode)


def on_cancellation(state: ModeState, node: Node, content: SymbolicCiphertext, now: float) -> bool:
    """Close the open window if the authenticated cancellation references it."""
    if state.mode is Mode.CIPHERED_ABNORMAL:
        raise AuthFailure("cipher functions failed; cancellation cannot be opened")
    try:
        cmd = symbolic_decrypt(node, content)
    except NoKey as exc:
        raise AuthFailure(str(exc)) from exc
    if state.window is None:
        raise NoOpenWindow(f"no open window at t={now}")
    if cmd.command_id != state.window.source_command_id:
        return False
    state.window = None
    return True


def on_window_expiry(state: ModeState, now: float) -> FallbackWindow:
    window = state.window
    if window is None:
        raise NoOpenWindow(f"no open window at t={now}")
    state.mode = Mode.SAFE
    state.window = None
    return window


def on_plaintext_command(state: ModeState, freshness: int) -> None:
    """Safe-mode command intake: accept only commands newer than the last one."""
    check_freshness(state, freshness)
    state.last_accepted_freshness = freshness


def on_cipher_failure(state: ModeState) -> None:
    if state.mode is Mode.CIPHERED_NORMAL:
        state.mode = Mode.CIPHERED_ABNORMAL


# ---------------------------------------------------------------------------
# Engine-level agents


@dataclass
class NoccDetectorState:
    issued: set[str] = field(default_factory=set)
    retry_period: float | None = None
    K: int | None = None
    missing: int = 0
    flagged: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class FallbackScenario:
    """Two-node NOCC <-> satellite setup for fallback experiments (seconds)."""

    M: float = 20.0
    K: int | None = 3
    command_period: float = 10.0
    retry_period: float | None = None
    uplink_latency: float = 0.3
    downlink_latency: float = 0.3
    uplink_block_prob: float = 0.0
    downlink_block_prob: float = 0.0
    processing_delay: float = 0.0
    horizon: float = 200.0
    failure_time: float | None = None

    @property
    def rtt(self) -> float:
        return self.downlink_latency + self.processing_delay + self.uplink_latency

    def link(self) -> Link:
        return Link(0, LinkKind.TTC, (0, 1), 0.0, True, self.uplink_block_prob, self.downlink_block_prob)

    def cancellation_attempts(self) -> int:
        """How many cancellation attempts can land inside the window."""
        if self.M + TIME_EPS < self.rtt:
            return 0
        if self.retry_period is None:
            return 1
        return math.floor((self.M - self.rtt) / self.retry_period + TIME_EPS) + 1


@dataclass(frozen=True)
class SmdCampaign:
    """Forged delayed-fallback injections: ``count`` commands every ``period``."""

    first_at: float = 10.0
    period: float = 100.0
    count: int = 1
    forged_id: str = "forged"
    freshness_start: int = 1_000_000


class _Radio:
    """Per-direction latency and blocking around a single TT&C link."""

    def __init__(self, engine: Engine, scenario: FallbackScenario):
        self.engine = engine
        self.link = scenario.link()
        self.latency = {0: scenario.uplink_latency, 1: scenario.downlink_latency}

    def send(self, src: int, message, kind: str, on_deliver, rng: RngStream | None = None):
        self.engine.transmissions += 1
        if self.engine.blocking(self.link, src, message, kind, self.engine.now, rng or self.engine.rng):
            self.engine.blocked += 1
            return Blocked(self.link.id, kind, self.engine.now)
        return self.engine.schedule(self.engine.now + self.latency[src], kind,
                                    target="SAT" if src == 0 else "NOCC", payload=message,
                                    action=on_deliver, detail=_describe(message))


def _describe(message) -> str:
    if isinstance(message, FallbackCommand):
        return f"fallback:{message.command_id}"
    if isinstance(message, StatusReport):
        return f"report:{message.command_id}"
    if isinstance(message, SymbolicCiphertext):
        inner = message.payload
        if isinstance(inner, Cancellation):
            return f"cancel:{inner.command_id}"
        return f"cmd:{inner}"
    return str(message)


class SatelliteAgent:
    """Onboard mode controller driven by engine events."""

    def __init__(self, engine: Engine, radio: _Radio, M: float,
                 rng_for: Callable[[str], RngStream | None] | None = None,
                 auto_fallback_on_silence: bool = False):
        self.engine = engine
        self.radio = radio
        self.state = ModeState(M)
        self.node = Node(1, NodeKind.TARGET_SATELLITE, frozenset({SAT_KEY}), "SAT")
        self.rng_for = rng_for or (lambda cid: None)
        self.auto = auto_fallback_on_silence
        self.nocc: NoccAgent | None = None
        self.log: list[tuple[float, str]] = []
        self.expired_windows: list[FallbackWindow] = []
        self._expiry: int | None = None
        self._auto_seq = 0

    def _mark(self, what: str):
        self.log.append((self.engine.now, what))

    def transitions(self) -> list[tuple[float, str]]:
        return [(t, w) for t, w in self.log if w.startswith("mode:")]

    def _open(self, cmd: FallbackCommand) -> StatusReport:
        report = on_delayed_fallback(self.state, cmd, self.engine.now)
        self._mark(f"window-open:{cmd.command_id}")
        self._expiry = self.engine.schedule(self.state.window.deadline, "window-expiry", target="SAT",
                                            action=self._expire, priority=LATE,
                                            detail=cmd.command_id)
        return report

    def receive_fallback(self, ev: Event):
        cmd: FallbackCommand = ev.payload
        try:
            report = self._open(cmd)
        except StaleFreshness:
            self._mark(f"reject-stale:{cmd.command_id}")
            return
        except WindowAlreadyOpen:
            if self.state.window is None:
                report = StatusReport(cmd.command_id, self.engine.now, self.state.mode)
            else:
                w = self.state.window
                report = StatusReport(w.source_command_id, w.opened_at, self.state.mode)
            self._mark(f"ignore-duplicate:{cmd.command_id}")
        self.radio.send(1, report, "telemetry", self._to_nocc(NoccAgent.receive_report),
                        rng=self.rng_for(cmd.command_id))

    def receive_cancellation(self, ev: Event):
        try:
            closed = on_cancellation(self.state, self.node, ev.payload, self.engine.now)
        except (AuthFailure, NoOpenWindow):
            self._mark("cancel-ignored")
            return
        if closed:
            self.engine.cancel(self._expiry)
            self._expiry = None
            self._mark(f"window-cancelled:{ev.payload.payload.command_id}")

    def receive_command(self, ev: Event):
        """Periodic encrypted telecommand; acknowledged only if it can be opened."""
        if self.state.mode is not Mode.CIPHERED_NORMAL:
            return
        symbolic_decrypt(self.node, ev.payload)
        self.radio.send(1, ("ack", ev.payload.payload), "telemetry", self._to_nocc(NoccAgent.receive_ack))
        if self.auto:
            self._restart_auto_window()

    def _restart_auto_window(self):
        # onboard-generated fallback: any valid command cancels it and a new
        # one opens as silence starts again
        if self.state.window is not None:
            self.engine.cancel(self._expiry)
            self.state.window = None
        self._auto_seq += 1
        self._open(FallbackCommand(f"auto-{self._auto_seq}", self.state.last_accepted_freshness + 1))

    def start_auto(self):
        if self.auto:
            self._restart_auto_window()

    def fail_cipher(self, ev: Event | None = None):
        on_cipher_failure(self.state)
        self._mark("cipher-failure")
        self._mark(f"mode:{self.state.mode.value}")

    def _expire(self, ev: Event):
        window = on_window_expiry(self.state, self.engine.now)
        self.expired_windows.append(window)
        self._mark(f"mode:{Mode.SAFE.value}")

    def _to_nocc(self, method):
        return lambda ev: method(self.nocc, ev) if self.nocc is not None else None


class NoccAgent:
    """Ground side: periodic commands, abnormality detection and SMD cancellation."""

    def __init__(self, engine: Engine, radio: _Radio, scenario: FallbackScenario,
                 satellite: SatelliteAgent, rng_for: Callable[[str], RngStream | None] | None = None):
        self.engine = engine
        self.radio = radio
        self.sc = scenario
        self.sat = satellite
        satellite.nocc = self
        self.det = NoccDetectorState(retry_period=scenario.retry_period, K=scenario.K)
        self.rng_for = rng_for or (lambda cid: None)
        self.log: list[tuple[float, str]] = []
        self.cancellations_sent = 0
        self._cmd_seq = 0
        self._acked: set[int] = set()
        self._freshness = 0
        self._pending_fallback: str | None = None
        self._reported: set[str] = set()
        self.detected_at: float | None = None

    def _mark(self, what: str):
        self.log.append((self.engine.now, what))

    # periodic encrypted commands + K-consecutive-missing-ack detector
    def start_commands(self, at: float = 0.0):
        self.engine.schedule(at, "nocc-command", target="NOCC", action=self._command_tick)

    def _command_tick(self, ev: Event):
        if self._cmd_seq > 0:
            if (self._cmd_seq - 1) in self._acked:
                self.det.missing = 0
            else:
                self.det.missing += 1
            if self.det.K is not None and self.det.missing >= self.det.K:
                self.detected_at = self.engine.now
                self._mark("abnormal-detected")
                self.issue_fallback()
                return
        seq = self._cmd_seq
        self._cmd_seq += 1
        self.radio.send(0, symbolic_encrypt(SAT_KEY, seq), "telecommand", self.sat.receive_command)
        self.engine.after(self.sc.command_period, "nocc-command", target="NOCC", action=self._command_tick)

    def receive_ack(self, ev: Event):
        _, seq = ev.payload
        self._acked.add(seq)

    def issue_fallback(self, ev: Event | None = None):
        """Send a genuine delayed fallback, re-issuing until the satellite reports it."""
        if self._pending_fallback is not None and self._pending_fallback in self._reported:
            return
        self._freshness += 1
        cid = f"genuine-{self._freshness}"
        self.det.issued.add(cid)
        self._pending_fallback = cid
        self._mark(f"fallback-issued:{cid}")
        self.radio.send(0, FallbackCommand(cid, self._freshness), "telecommand", self.sat.receive_fallback,
                        rng=self.rng_for(cid))
        self.engine.after(self.sc.command_period, "nocc-fallback-retry", target="NOCC",
                          action=self._retry_fallback)

    def _retry_fallback(self, ev: Event):
        if not (self._reported & self.det.issued):
            self.issue_fallback()

    def receive_report(self, ev: Event):
        report: StatusReport = ev.payload
        self._reported.add(report.command_id)
        if report.command_id in self.det.issued or report.command_id.startswith("auto-"):
            return
        if report.command_id in self.det.flagged:
            return
        self.det.flagged.append(report.command_id)
        self._mark(f"smd-flagged:{report.command_id}")
        deadline = report.opened_at + self.sc.M
        rng = self.rng_for(report.command_id)

        def attempt(ev=None):
            if self.engine.now + self.sc.uplink_latency > deadline + TIME_EPS:
                return
            self.cancellations_sent += 1
            self.radio.send(0, symbolic_encrypt(SAT_KEY, Cancellation(report.command_id)), "cancellation",
                            self.sat.receive_cancellation, rng=rng)
            if self.det.retry_period is not None:
                self.engine.after(self.det.retry_period, "nocc-cancel-retry", target="NOCC", action=attempt)

        if self.sc.processing_delay > 0:
            self.engine.after(self.sc.processing_delay, "nocc-cancel", target="NOCC", action=attempt)
        else:
            attempt()


# ---------------------------------------------------------------------------
# Conventional baselines for equivalence checks


class BackdoorSatellite:
    """Plaintext backdoor: any fresh fallback command switches to safe mode at once."""

    def __init__(self, engine: Engine):
        self.engine = engine
        self.mode = Mode.CIPHERED_NORMAL
        self.last_freshness = -1
        self.log: list[tuple[float, str]] = []

    def receive_fallback(self, ev: Event):
        cmd = ev.payload
        if self.mode is Mode.SAFE or cmd.freshness <= self.last_freshness:
            return
        self.last_freshness = cmd.freshness
        self.mode = Mode.SAFE
        self.log.append((self.engine.now, f"mode:{Mode.SAFE.value}"))

    def fail_cipher(self, ev=None):
        self.mode = Mode.CIPHERED_ABNORMAL
        self.log.append((self.engine.now, "cipher-failure"))
        self.log.append((self.engine.now, f"mode:{self.mode.value}"))

    def transitions(self):
        return [(t, w) for t, w in self.log if w.startswith("mode:")]


class TcTimerSatellite:
    """Failsafe timeout: safe mode after ``window`` seconds without a valid command."""

    def __init__(self, engine: Engine, window: float):
        self.engine = engine
        self.window = window
        self.mode = Mode.CIPHERED_NORMAL
        self.node = Node(1, NodeKind.TARGET_SATELLITE, frozenset({SAT_KEY}), "SAT")
        self.log: list[tuple[float, str]] = []
        self._timer: int | None = None

    def start(self):
        self._arm()

    def _arm(self):
        if self._timer is not None:
            self.engine.cancel(self._timer)
        self._timer = self.engine.after(self.window, "tc-timer", target="SAT", action=self._expire,
                                        priority=LATE)

    def receive_command(self, ev: Event):
        if self.mode is not Mode.CIPHERED_NORMAL:
            return
        symbolic_decrypt(self.node, ev.payload)
        self._arm()

    def fail_cipher(self, ev=None):
        self.mode = Mode.CIPHERED_ABNORMAL
        self.log.append((self.engine.now, "cipher-failure"))
        self.log.append((self.engine.now, f"mode:{self.mode.value}"))

    def _expire(self, ev):
        self.mode = Mode.SAFE
        self.log.append((self.engine.now, f"mode:{Mode.SAFE.value}"))

    def transitions(self):
        return [(t, w) for t, w in self.log if w.startswith("mode:")]


# ---------------------------------------------------------------------------
# Metrics


def measure_timeliness(log: list[tuple[float, str]]) -> float:
    """Time from the cipher failure to the first safe-mode transition."""
    t_fail = next((t for t, w in log if w == "cipher-failure"), None)
    if t_fail is None:
        raise NeverRecovered("trace has no cipher-failure event")
    t_safe = next((t for t, w in log if w == f"mode:{Mode.SAFE.value}" and t >= t_fail), None)
    if t_safe is None:
        raise NeverRecovered(f"no safe-mode transition after failure at t={t_fail}")
    return t_safe - t_fail


@dataclass
class FallbackRun:
    engine: Engine
    satellite: SatelliteAgent
    nocc: NoccAgent

    @property
    def forged_success(self) -> bool:
        return any(not w.source_command_id.startswith(("genuine-", "auto-"))
                   for w in self.satellite.expired_windows)


def run_fallback(scenario: FallbackScenario, campaign: SmdCampaign | None = None,
                 master_seed: int = 0, stream: int | tuple[int, ...] = 0,
                 commands: bool | None = None) -> FallbackRun:
    """Simulate one trial: optional cipher failure, NOCC detection and SMD injections.

    Messages about injected command ``i`` draw their blocking outcomes from
    a dedicated substream, which couples trials across parameter sweeps.
    """
    engine = Engine(master_seed, stream)
    radio = _Radio(engine, scenario)
    streams: dict[str, RngStream] = {}
    prefix = campaign.forged_id if campaign else None

    def rng_for(cid: str) -> RngStream | None:
        if prefix is None or not cid.startswith(prefix + "-"):
            return None
        if cid not in streams:
            streams[cid] = engine.rng.child(1 + int(cid.rsplit("-", 1)[1]))
        return streams[cid]

    sat = SatelliteAgent(engine, radio, scenario.M, rng_for)
    nocc = NoccAgent(engine, radio, scenario, sat, rng_for)
    run_commands = scenario.failure_time is not None if commands is None else commands
    if run_commands:
        nocc.start_commands(0.0)
    if scenario.failure_time is not None:
        engine.schedule(scenario.failure_time, "cipher-failure", target="SAT", action=sat.fail_cipher)
    if campaign is not None:
        for i in range(campaign.count):
            t = campaign.first_at + i * campaign.period
            if t > scenario.horizon:
                break
            cmd = FallbackCommand(f"{campaign.forged_id}-{i}", campaign.freshness_start + i)
            # the attacker transmits from its own terminal: injection time is arrival time
            engine.schedule(t, "forged-fallback", target="SAT", payload=cmd, action=sat.receive_fallback,
                            detail=cmd.command_id)
    engine.run_until(scenario.horizon)
    return FallbackRun(engine, sat, nocc)


def timeliness(scenario: FallbackScenario, master_seed: int = 0) -> float:
    if scenario.failure_time is None:
        raise ValueError("timeliness needs a failure_time")
    run = run_fallback(scenario, master_seed=master_seed)
    return measure_timeliness(run.satellite.log)


@dataclass(frozen=True)
class ProportionEstimate:
    value: float
    ci_low: float
    ci_high: float
    trials: int
    successes: int


def wilson(successes: int, trials: int) -> ProportionEstimate:
    ci = binomtest(successes, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return ProportionEstimate(successes / trials, float(ci.low), float(ci.high), trials, successes)


class _ExploitTrial:
    def __init__(self, scenario, campaign, master_seed):
        self.scenario, self.campaign, self.master_seed = scenario, campaign, master_seed

    def __call__(self, i: int) -> bool:
        return run_fallback(self.scenario, self.campaign, self.master_seed, i, commands=False).forged_success


def estimate_exploitability(scenario: FallbackScenario, campaign: SmdCampaign, trials: int,
                            master_seed: int, workers: int = 1) -> ProportionEstimate:
    """Fraction of campaigns that push a healthy satellite into safe mode (Wilson 95% CI)."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if scenario.failure_time is not None:
        scenario = replace(scenario, failure_time=None)
    hits = run_trials(_ExploitTrial(scenario, campaign, master_seed), trials, workers)
    return wilson(sum(hits), trials)
