"""Attack models and their success metrics.

* TPT: link routing-field observations across links to recover a flow's path.
* TA: learn routing value -> flow label from a training window, then classify.
* DoS: inject frames over the whole routing value space at an access router.
* SMD: inject forged delayed-fallback commands and try to force safe mode.

Attackers only ever see what crosses an eavesdroppable link in the clear:
the link, the time and the routing value. Content payloads are not recorded.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import Frame, Link, LinkId, NodeId, SymbolicCiphertext, Topology, make_frame, FrameMeta
from .engine import Engine, RngStream
from .errors import InsufficientSamples, NoObservations
from .modes import FallbackScenario, SmdCampaign, run_fallback
from .mtd import MtdNetwork

__all__ = [
    "AttackOutcome",
    "AttackerKnowledge",
    "DosStrategy",
    "Eavesdropper",
    "Observation",
    "SmdCampaign",
    "TaResult",
    "TptResult",
    "dos_enumerate",
    "smd_campaign",
    "ta_classify",
    "tpt_reconstruct",
]


@dataclass(frozen=True)
class Observation:
    link: LinkId
    time: float
    routing_value: int
    content_opaque: bool


@dataclass
class AttackerKnowledge:
    observations: list[Observation] = field(default_factory=list)
    known_formats: dict[str, object] = field(default_factory=dict)
    candidate_paths: list[list[NodeId]] = field(default_factory=list)

    def values_seen(self, links: Iterable[LinkId] | None = None) -> set[int]:
        wanted = None if links is None else set(links)
        return {o.routing_value for o in self.observations if wanted is None or o.link in wanted}


@dataclass(frozen=True)
class AttackOutcome:
    kind: str
    success: float
    counters: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.success <= 1.0:
            raise ValueError(f"success rate {self.success} outside [0, 1]")


class Eavesdropper:
    """Engine tap that records frames crossing the placed, eavesdroppable links.

    ``truth`` holds the flow label of each recorded frame. It is harness-side
    ground truth for scoring and for labelled TA training, never an input to
    path inference.
    """

    def __init__(self, links: Iterable[LinkId]):
        self.links = set(links)
        self.knowledge = AttackerKnowledge()
        self.truth: list[str | None] = []

    def __call__(self, link: Link, src: NodeId, message, now: float) -> None:
        if link.id not in self.links or not link.eavesdroppable or not isinstance(message, Frame):
            return
        self.knowledge.observations.append(
            Observation(link.id, now, message.routing, isinstance(message.content, SymbolicCiphertext)))
        self.truth.append(message.meta.flow_id)

    def attach(self, engine: Engine) -> Eavesdropper:
        engine.taps.append(self)
        return self


# ---------------------------------------------------------------------------
# TPT


@dataclass(frozen=True)
class TptResult:
    path: list[NodeId]
    scores: tuple[int, ...]
    ambiguous: bool
    correct: bool | None = None


def tpt_reconstruct(knowledge: AttackerKnowledge, candidate_paths: Sequence[Sequence[NodeId]],
                    topo: Topology, rng: RngStream, anchor: Observation | None = None,
                    true_path: Sequence[NodeId] | None = None, slack: float = 0.0) -> TptResult:
    """Pick the candidate path that best explains the observations.

    Starting from ``anchor`` (default: the earliest observation), another
    observation is linked to the same flow iff it carries the same routing
    value and was seen on a link of the candidate exactly when the link
    latencies say the frame would cross it (within ``slack``). The candidate
    with most linked observations wins; ties are resolved by a uniform guess.
    """
    obs = knowledge.observations
    if not obs:
        raise NoObservations("observation log is empty")
    if not candidate_paths:
        raise ValueError("no candidate paths")
    anchor = anchor or min(obs, key=lambda o: (o.time, o.link))
    scores = []
    for path in candidate_paths:
        links = topo.path_links(list(path))
        offsets, acc = {}, 0.0
        for link in links:
            offsets.setdefault(link.id, acc)
            acc += link.latency
        if anchor.link not in offsets:
            scores.append(-1)
            continue
        base = anchor.time - offsets[anchor.link]
        score = 0
        for o in obs:
            if o is anchor or o.link not in offsets or offsets[o.link] <= offsets[anchor.link]:
                continue
            if o.routing_value == anchor.routing_value and abs(o.time - (base + offsets[o.link])) <= slack + 1e-9:
                score += 1
        scores.append(score)
    best = max(scores)
    tied = [i for i, s in enumerate(scores) if s == best]
    pick = tied[rng.integers(len(tied))] if len(tied) > 1 else tied[0]
    chosen = list(candidate_paths[pick])
    correct = None if true_path is None else chosen == list(true_path)
    return TptResult(chosen, tuple(scores), len(tied) > 1, correct)


# ---------------------------------------------------------------------------
# TA


@dataclass(frozen=True)
class TaResult:
    accuracy: float
    n_train: int
    n_test: int
    n_labels: int


def ta_classify(observations: Sequence[Observation], labels: Sequence[str], split_time: float,
                end_time: float | None = None) -> TaResult:
    """Frequency-table traffic analysis.

    Observations before ``split_time`` train a table routing value -> label
    counts; later ones are classified by the most frequent label. Unknown
    values and ties are scored at their expected accuracy under a uniform
    guess, so the result is deterministic.
    """
    if len(observations) != len(labels):
        raise ValueError("observations and labels differ in length")
    table: dict[int, Counter] = defaultdict(Counter)
    test = []
    for o, lab in zip(observations, labels):
        if o.time < split_time:
            table[o.routing_value][lab] += 1
        elif end_time is None or o.time < end_time:
            test.append((o, lab))
    n_train = sum(sum(c.values()) for c in table.values())
    if n_train == 0 or not test:
        raise InsufficientSamples(f"{n_train} training and {len(test)} test observations")
    label_set = set()
    for c in table.values():
        label_set |= set(c)
    credit = 0.0
    for o, lab in test:
        counts = table.get(o.routing_value)
        if not counts:
            credit += 1.0 / len(label_set) if lab in label_set else 0.0
            continue
        top = max(counts.values())
        tied = [k for k, v in counts.items() if v == top]
        if lab in tied:
            credit += 1.0 / len(tied)
    return TaResult(credit / len(test), n_train, len(test), len(label_set))


# ---------------------------------------------------------------------------
# DoS


class DosStrategy(enum.Enum):
    EXHAUSTIVE_SWEEP = "ExhaustiveSweep"
    TA_INFORMED = "TAInformed"


def dos_enumerate(net: MtdNetwork, attacker_link: LinkId, strategy: DosStrategy = DosStrategy.EXHAUSTIVE_SWEEP,
                  knowledge: AttackerKnowledge | None = None, at: float | None = None,
                  spacing: float = 0.0) -> AttackOutcome:
    """Inject one forged frame per chosen value over ``attacker_link`` and run the engine.

    Frames carry valid PHY fields and an unauthenticated ciphertext. The
    outcome records the fraction forwarded by the access router and every
    processing step they cause further downstream (parse, lookup,
    authentication check).
    """
    topo, engine = net.topo, net.engine
    link = topo.links[attacker_link]
    a, b = link.endpoints
    router = a if a in net.states else b
    if router not in net.states:
        raise ValueError(f"link {attacker_link} does not reach an onboard router")
    attacker = link.other(router)
    if strategy is DosStrategy.EXHAUSTIVE_SWEEP:
        values = list(range(1 << topo.n_bits))
    else:
        if knowledge is None:
            raise ValueError("TAInformed strategy needs attacker knowledge")
        values = sorted(knowledge.values_seen())
    start = engine.now if at is None else at
    tag = f"dos@{start}"
    for i, v in enumerate(values):
        key = (tag, i)

        def fire(ev, v=v, key=key):
            frame = make_frame(v, SymbolicCiphertext("attacker", b"\x00" * 8, False), topo.n_bits,
                               FrameMeta(tag, engine.now, key[1]))
            net.outcomes[key] = "in-flight"
            net._send(attacker, router, frame, key)

        engine.schedule(start + i * spacing, "dos-inject", target=_label(topo, attacker), action=fire)

    first_event = len(net.events)
    settle = start + len(values) * spacing + sum(l.latency for l in topo.links.values()) + 1.0
    engine.run_until(settle)

    router_label = _label(topo, router)
    onboard = {_label(topo, r) for r in net.states}
    accepted_values, parse, lookups, auth = [], 0, 0, 0
    for ev in net.events[first_event:]:
        if ev.flow != tag:
            continue
        if ev.router == router_label:
            if ev.action != "drop":
                accepted_values.append(ev.incoming)
            if ev.action in ("deliver", "auth-reject"):
                auth += 1
            continue
        parse += 1
        if ev.router in onboard:
            lookups += 1
        if ev.action in ("deliver", "auth-reject"):
            auth += 1
    accepted = len(accepted_values)
    return AttackOutcome(
        "DoS",
        accepted / len(values) if values else 0.0,
        {
            "frames_injected": len(values),
            "frames_accepted": accepted,
            "downstream_parse": parse,
            "downstream_lookup": lookups,
            "auth_checks": auth,
            "downstream_events": parse + lookups + auth,
            "accepted_values": tuple(sorted(accepted_values)),
        },
    )


def _label(topo: Topology, node: NodeId) -> str:
    return topo.node(node).label


# ---------------------------------------------------------------------------
# SMD


def smd_campaign(scenario: FallbackScenario, campaign: SmdCampaign, master_seed: int = 0,
                 stream: int = 0) -> AttackOutcome:
    """One SMD campaign against a healthy satellite."""
    run = run_fallback(scenario, campaign, master_seed, stream, commands=False)
    accepted = sum(1 for _, w in run.satellite.log if w.startswith(f"window-open:{campaign.forged_id}"))
    return AttackOutcome(
        "SMD",
        1.0 if run.forged_success else 0.0,
        {
            "frames_injected": sum(1 for _, w in run.satellite.log
                                   if w.startswith(("window-open", "ignore", "reject"))),
            "frames_accepted": accepted,
            "cancellations": len(run.nocc.det.flagged),
            "cancellation_messages": run.nocc.cancellations_sent,
            "windows_cancelled": sum(1 for _, w in run.satellite.log if w.startswith("window-cancelled")),
        },
    )
