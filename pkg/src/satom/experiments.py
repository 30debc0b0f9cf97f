"""Experiment pipelines behind the CLI subcommands.

Each pipeline takes a resolved :class:`ScenarioConfig` and returns an
:class:`ExperimentResult`: named CSV tables, metric records and a short
summary. :func:`write_outputs` renders them with the resolved scenario
embedded as ``#`` comment lines, so each file records its own provenance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np
from scipy.stats import chisquare

from . import __version__
from .adversary import DosStrategy, Eavesdropper, ta_classify, tpt_reconstruct, dos_enumerate
from .config import ScenarioConfig, get_key, resolve_key
from .engine import Engine, RngStream, format_float
from .errors import NeverRecovered, ValidationError
from .modes import estimate_exploitability, timeliness, wilson
from .mtd import ExplicitCommand, MtdController, MtdNetwork, Timeout
from .reliability import (
    Scheme,
    SchemeSpec,
    coupled_failure_times,
    empirical_survival,
    improvement_curves,
    mttf_quadrature,
    reliability_pooled,
    reliability_typical,
)

SUBCOMMANDS = ("reliability", "mttf", "mtd-trace", "dos-sim", "tpt-sim", "ta-sim", "fallback")


@dataclass(frozen=True)
class MetricsRecord:
    experiment: str
    params: tuple[tuple[str, Any], ...]
    metric: str
    value: float
    ci_low: float | None = None
    ci_high: float | None = None
    trials: int | None = None


@dataclass
class Table:
    header: list[str]
    rows: list[list[Any]] = field(default_factory=list)


@dataclass
class ExperimentResult:
    experiment: str
    config: ScenarioConfig
    tables: dict[str, Table] = field(default_factory=dict)
    metrics: list[MetricsRecord] = field(default_factory=list)
    summary: list[str] = field(default_factory=list)
    sweep: str | None = None


# ---------------------------------------------------------------------------
# helpers


def _cell(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else format_float(x)
    return str(x)


def _hex(v: int | None, n_bits: int) -> str:
    if v is None:
        return ""
    return f"0x{v:0{max(2, math.ceil(n_bits / 4))}x}"


def _value(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


def render_csv(table: Table, config: ScenarioConfig, experiment: str, sweep: str | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# satom {__version__} experiment={experiment}\n")
    buf.write(f"# scenario={config.dumps()}\n")
    if sweep:
        buf.write(f"# sweep={sweep}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.header)
    for row in table.rows:
        writer.writerow([_cell(c) for c in row])
    return buf.getvalue()


def metrics_table(records: list[MetricsRecord]) -> Table:
    t = Table(["experiment", "params", "metric", "value", "ci_low", "ci_high", "trials"])
    for r in records:
        params = ";".join(f"{k}={_cell(v)}" for k, v in r.params)
        t.rows.append([r.experiment, params, r.metric, r.value, r.ci_low, r.ci_high, r.trials])
    return t


def write_outputs(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    tables = dict(result.tables)
    tables["metrics"] = metrics_table(result.metrics)
    for name, table in tables.items():
        path = out / f"{name}.csv"
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(render_csv(table, result.config, result.experiment, result.sweep))
        written.append(path)
    path = out / "summary.txt"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(result.summary) + "\n")
    written.append(path)
    return written


# ---------------------------------------------------------------------------
# reliability


def run_reliability(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    res = ExperimentResult("reliability", cfg)
    r = cfg["reliability"]
    N1, N2, w = r["N1"], r["N2"], cfg.weibull()
    t = np.round(np.arange(0.0, r["t_max"] + r["t_step"] / 2, r["t_step"]), 12)
    typ = np.atleast_1d(reliability_typical(t, N1, N2, w))
    pool = np.atleast_1d(reliability_pooled(t, N1, N2, w))
    absolute, relative = improvement_curves(t, N1, N2, w)
    trials = cfg.trials
    fail = coupled_failure_times(N1, N2, w, trials, cfg.master_seed)
    mc_t = empirical_survival(fail[Scheme.TYPICAL], t)
    mc_p = empirical_survival(fail[Scheme.POOLED], t)
    table = Table(["t", "R_typical", "R_pooled", "abs", "rel",
                   "R_typical_mc", "R_typical_ci_low", "R_typical_ci_high",
                   "R_pooled_mc", "R_pooled_ci_low", "R_pooled_ci_high", "abs_mc"])
    for i, ti in enumerate(t):
        table.rows.append([ti, typ[i], pool[i], absolute[i], relative[i],
                           mc_t.R[i], mc_t.ci_low[i], mc_t.ci_high[i],
                           mc_p.R[i], mc_p.ci_low[i], mc_p.ci_high[i], mc_p.R[i] - mc_t.R[i]])
    res.tables["reliability"] = table

    # peak of the absolute gain on a fine grid
    fine = np.linspace(0.0, r["t_max"], int(round(r["t_max"] * 1000)) + 1)
    fine_abs, _ = improvement_curves(fine, N1, N2, w)
    k = int(np.argmax(fine_abs))
    t_peak = float(fine[k])
    mc_at_peak = (empirical_survival(fail[Scheme.POOLED], [t_peak]).R[0]
                  - empirical_survival(fail[Scheme.TYPICAL], [t_peak]).R[0])
    rel_end = float(relative[-1])
    res.metrics += [
        MetricsRecord("reliability", params, "peak_abs_t", t_peak),
        MetricsRecord("reliability", params, "peak_abs", float(fine_abs[k])),
        MetricsRecord("reliability", params, "peak_abs_mc", float(mc_at_peak), trials=trials),
        MetricsRecord("reliability", params, "rel_at_t_max", rel_end),
    ]
    res.summary += [
        f"N1={N1} N2={N2} beta={w.beta} eta={w.eta}",
        f"absolute improvement peaks at t={t_peak:.3f} with {fine_abs[k]:.4f} "
        f"(Monte Carlo {mc_at_peak:.4f}, {trials} trials)",
        f"relative improvement at t={r['t_max']}: {100 * rel_end:.1f}%",
    ]
    return res


def run_mttf(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    res = ExperimentResult("mttf", cfg)
    r = cfg["reliability"]
    w = cfg.weibull()
    trials = cfg.trials
    table = Table(["N1", "N2", "scheme", "mttf", "method", "mttf_mc", "mc_ci_low", "mc_ci_high", "trials"])
    stream = 0
    for N1 in range(r["N1_range"][0], r["N1_range"][1] + 1):
        for N2 in range(r["N2_range"][0], r["N2_range"][1] + 1):
            fail = coupled_failure_times(N1, N2, w, trials, cfg.master_seed, stream)
            stream += 1
            for scheme in Scheme:
                exact = mttf_quadrature(SchemeSpec(scheme, N1, N2), w).mttf
                f = fail[scheme]
                mean = float(f.mean())
                half = 1.96 * float(f.std(ddof=1)) / math.sqrt(trials) if trials > 1 else math.nan
                table.rows.append([N1, N2, scheme.value, exact, "ClosedForm", mean, mean - half, mean + half,
                                   trials])
                if (N1, N2) == (r["N1"], r["N2"]):
                    res.metrics.append(MetricsRecord("mttf", params + (("scheme", scheme.value),), "mttf", exact))
                    res.metrics.append(MetricsRecord("mttf", params + (("scheme", scheme.value),), "mttf_mc",
                                                     mean, mean - half, mean + half, trials))
                    res.summary.append(f"MTTF {scheme.value} N1={N1} N2={N2}: {exact:.4f} "
                                       f"(Monte Carlo {mean:.4f} [{mean - half:.4f}, {mean + half:.4f}])")
    res.tables["mttf"] = table
    return res


# ---------------------------------------------------------------------------
# MTD world


@dataclass
class MtdWorld:
    engine: Engine
    controller: MtdController
    network: MtdNetwork


def build_mtd_world(cfg: ScenarioConfig, value_rng: RngStream | None = None, identity: bool | None = None,
                    engine: Engine | None = None) -> MtdWorld:
    """Topology, controller with the configured flows, and a network on ``engine``."""
    topo = cfg.topology
    m = cfg["mtd"]
    engine = engine or Engine(cfg.master_seed)
    ctrl = MtdController(topo, no_reuse=m["no_reuse"])
    for flow in cfg["flows"]:
        values = [_value(v) for v in flow["values"]] if flow.get("values") is not None else None
        ident = flow.get("identity", False) if identity is None else identity
        ctrl.add_flow(flow["id"], cfg.node_id(flow["src"], "flows.src"), cfg.node_id(flow["dst"], "flows.dst"),
                      values=None if identity is not None else values, rng=value_rng, identity=ident)
    net = MtdNetwork(topo, engine, ctrl, ack_timeout=m["ack_timeout"], drain_delay=m["drain_delay"])
    if m["policy"] == "Timeout":
        ctrl.policy = Timeout(net.drain_delay if m["timeout"] is None else m["timeout"])
    else:
        ctrl.policy = ExplicitCommand()
    return MtdWorld(engine, ctrl, net)


def _schedule_update(cfg: ScenarioConfig, net: MtdNetwork, upd: dict, at: float, rng: RngStream | None):
    forced = {int(h): _value(v) for h, v in (upd.get("forced") or {}).items()}
    delays = {cfg.node_id(k, "mtd.updates.delays"): float(v) for k, v in (upd.get("delays") or {}).items()}
    net.schedule_update(upd["flow"], at, rng=rng, hops=upd.get("hops"), forced=forced or None,
                        delays=delays or None)


def _schedule_traffic(cfg: ScenarioConfig, net: MtdNetwork, horizon: float) -> None:
    m = cfg["mtd"]
    for inj in m["injections"]:
        net.inject(inj["flow"], inj["at"])
    if m["frame_period"]:
        for t in np.arange(m["frame_period"], horizon, m["frame_period"]):
            for flow in cfg["flows"]:
                net.inject(flow["id"], float(t))


def run_mtd_trace(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    res = ExperimentResult("mtd-trace", cfg)
    horizon = cfg["engine"]["horizon"]
    world = build_mtd_world(cfg, RngStream(cfg.master_seed, 1))
    net, m = world.network, cfg["mtd"]
    update_rng = RngStream(cfg.master_seed, 2)
    _schedule_traffic(cfg, net, horizon)
    for upd in m["updates"]:
        _schedule_update(cfg, net, upd, upd["at"], update_rng)
    if m["update_period"]:
        for t in np.arange(m["update_period"], horizon, m["update_period"]):
            for flow in cfg["flows"]:
                _schedule_update(cfg, net, {"flow": flow["id"]}, float(t), update_rng)
    for raw in m["raw_frames"]:
        net.inject_raw(cfg.node_id(raw["router"], "mtd.raw_frames.router"), _value(raw["value"]), raw["at"])
    world.engine.run_until(horizon)

    n = cfg.topology.n_bits
    table = Table(["time", "router", "action", "incoming", "outgoing", "next_hop", "epoch", "flow"])
    for ev in net.events:
        table.rows.append([ev.time, ev.router, ev.action, _hex(ev.incoming, n), _hex(ev.outgoing, n),
                           ev.next_hop, ev.epoch, ev.flow])
    res.tables["trace"] = table
    outcomes = list(net.outcomes.values())
    counts = {k: outcomes.count(k) for k in ("delivered", "dropped", "blocked", "rejected", "in-flight")}
    for k, v in counts.items():
        res.metrics.append(MetricsRecord("mtd-trace", params, f"frames_{k}", v))
    res.metrics.append(MetricsRecord("mtd-trace", params, "update_sends", net.update_sends))
    res.metrics.append(MetricsRecord("mtd-trace", params, "completed_rounds", len(net.completed_rounds)))
    lookups = sum(s.lookups for s in net.states.values())
    res.metrics.append(MetricsRecord("mtd-trace", params, "table_lookups", lookups))
    res.summary.append(f"{len(table.rows)} router events; frames: "
                       + ", ".join(f"{k}={v}" for k, v in counts.items()))
    res.summary.append(f"{len(net.completed_rounds)} update rounds completed, {net.update_sends} update sends")
    return res


# ---------------------------------------------------------------------------
# adversary experiments


def _access_router(cfg: ScenarioConfig, net: MtdNetwork, link_id: int) -> int:
    a, b = cfg.topology.links[link_id].endpoints
    return a if a in net.states else b


def run_dos_sim(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    """Exhaustive and TA-informed enumeration before and after the configured updates."""
    res = ExperimentResult("dos-sim", cfg)
    adv, m = cfg["adversary"], cfg["mtd"]
    if adv["attacker_link"] is None:
        raise ValidationError("adversary.attacker_link", "required by dos-sim")
    world = build_mtd_world(cfg, RngStream(cfg.master_seed, 1))
    net, engine = world.network, world.engine
    n = cfg.topology.n_bits
    space = 1 << n
    router = _access_router(cfg, net, adv["attacker_link"])
    tap = Eavesdropper(adv["eavesdrop_links"]).attach(engine)
    for inj in m["injections"]:
        net.inject(inj["flow"], inj["at"])
    engine.run_until(max([inj["at"] for inj in m["injections"]], default=0.0) + 1.0)

    table = Table(["phase", "strategy", "injected", "accepted", "acceptance", "expected_acceptance",
                   "stale_accepted", "downstream_parse", "downstream_lookup", "auth_checks", "accepted_values"])

    def sweep(phase: str, strategy: DosStrategy, knowledge=None, stale: frozenset = frozenset()):
        active = net.states[router].active_incoming()
        out = dos_enumerate(net, adv["attacker_link"], strategy, knowledge)
        c = out.counters
        accepted = set(c["accepted_values"])
        expected = len(active) / space if strategy is DosStrategy.EXHAUSTIVE_SWEEP else None
        table.rows.append([phase, strategy.value, c["frames_injected"], c["frames_accepted"], out.success,
                           expected, len(accepted & stale), c["downstream_parse"], c["downstream_lookup"],
                           c["auth_checks"], " ".join(_hex(v, n) for v in sorted(accepted))])
        res.metrics.append(MetricsRecord("dos-sim", params + (("phase", phase), ("strategy", strategy.value)),
                                         "acceptance", out.success, trials=c["frames_injected"]))
        return accepted

    before = frozenset(net.states[router].active_incoming())
    sweep("initial", DosStrategy.EXHAUSTIVE_SWEEP)
    knowledge = tap.knowledge
    engine.taps.remove(tap)
    rng = RngStream(cfg.master_seed, 2)
    for upd in m["updates"]:
        _schedule_update(cfg, net, upd, engine.now + upd.get("at", 0.0), rng)
    engine.run_until(engine.now + cfg["engine"]["horizon"])
    after = frozenset(net.states[router].active_incoming())
    stale = before - after
    sweep("post-update", DosStrategy.EXHAUSTIVE_SWEEP, stale=stale)
    sweep("post-update", DosStrategy.TA_INFORMED, knowledge, stale=stale)
    res.tables["dos"] = table
    res.summary.append(f"access router {cfg.topology.node(router).label}: {len(before)} active values before, "
                       f"{len(after)} after; {len(stale)} stale")
    for row in table.rows:
        res.summary.append(f"{row[0]:>11} {row[1]:<15} accepted {row[3]}/{row[2]} (stale accepted {row[6]})")
    return res


def _tpt_paths(cfg: ScenarioConfig, ctrl: MtdController) -> list[list[int]]:
    flows = cfg["adversary"]["candidate_flows"] or [f["id"] for f in cfg["flows"]]
    return [list(ctrl.flows[f].path) for f in flows]


def tpt_trial(cfg: ScenarioConfig, i: int, identity: bool) -> bool:
    """One TPT trial: fresh mappings, one frame per flow, trace the first feeder frame."""
    adv = cfg["adversary"]
    world = build_mtd_world(cfg, RngStream(cfg.master_seed, (3, i)), identity=identity)
    tap = Eavesdropper(adv["eavesdrop_links"]).attach(world.engine)
    injections = cfg["mtd"]["injections"] or [{"flow": f["id"], "at": 0.0} for f in cfg["flows"]]
    for inj in injections:
        world.network.inject(inj["flow"], inj["at"])
    world.engine.run_until(cfg["engine"]["horizon"])
    obs = tap.knowledge.observations
    first_link = adv["eavesdrop_links"][0]
    idx = min((k for k, o in enumerate(obs) if o.link == first_link), key=lambda k: obs[k].time)
    true_path = world.controller.flows[tap.truth[idx]].path
    result = tpt_reconstruct(tap.knowledge, _tpt_paths(cfg, world.controller), cfg.topology,
                             RngStream(cfg.master_seed, (4, i)), anchor=obs[idx], true_path=true_path)
    return bool(result.correct)


def run_tpt_sim(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    res = ExperimentResult("tpt-sim", cfg)
    trials = cfg.trials
    table = Table(["mapping", "trials", "correct", "correctness", "ci_low", "ci_high", "chance", "chi2_p"])
    n_paths = len(cfg["adversary"]["candidate_flows"] or cfg["flows"])
    for label, identity in (("identity", True), ("per-hop", False)):
        correct = sum(tpt_trial(cfg, i, identity) for i in range(trials))
        est = wilson(correct, trials)
        expected = [trials / n_paths, trials - trials / n_paths]
        p = float(chisquare([correct, trials - correct], expected).pvalue) if n_paths > 1 else math.nan
        table.rows.append([label, trials, correct, est.value, est.ci_low, est.ci_high, 1 / n_paths, p])
        res.metrics.append(MetricsRecord("tpt-sim", params + (("mapping", label),), "correctness", est.value,
                                         est.ci_low, est.ci_high, trials))
        res.summary.append(f"{label:>8}: correctness {est.value:.4f} [{est.ci_low:.4f}, {est.ci_high:.4f}], "
                           f"chi-square p vs uniform guess {p:.3g}")
    res.tables["tpt"] = table
    return res


def ta_trial(cfg: ScenarioConfig, i: int) -> float:
    """One TA trial with updates every ``p`` seconds at a uniformly random phase.

    The last update before the train/test split is placed at split - u*p
    (u uniform, shared across sweep points). Both the training exposure of
    the value in force at the split and the time it survives into the test
    window then grow with p, so sweeps are coupled pathwise.
    """
    adv, m = cfg["adversary"], cfg["mtd"]
    horizon = cfg["engine"]["horizon"]
    split = adv["train_until"] if adv["train_until"] is not None else horizon / 2
    world = build_mtd_world(cfg, RngStream(cfg.master_seed, (5, i)))
    net = world.network
    tap = Eavesdropper(adv["eavesdrop_links"]).attach(world.engine)
    _schedule_traffic(cfg, net, horizon)
    period = m["update_period"]
    if period:
        u = RngStream(cfg.master_seed, (6, i)).random()
        first = (split - u * period) % period
        rng = RngStream(cfg.master_seed, (7, i))
        for t in np.arange(first if first > 0 else period, horizon, period):
            for flow in cfg["flows"]:
                _schedule_update(cfg, net, {"flow": flow["id"]}, float(t), rng)
    world.engine.run_until(horizon)
    # MTD control frames cross the feeder too; score only the labelled data flows
    flows = set(world.controller.flows)
    pairs = [(o, lab) for o, lab in zip(tap.knowledge.observations, tap.truth) if lab in flows]
    return ta_classify([o for o, _ in pairs], [lab for _, lab in pairs], split).accuracy


def run_ta_sim(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    res = ExperimentResult("ta-sim", cfg)
    trials = cfg.trials
    acc = np.array([ta_trial(cfg, i) for i in range(trials)])
    mean = float(acc.mean())
    half = 1.96 * float(acc.std(ddof=1)) / math.sqrt(trials) if trials > 1 else 0.0
    period = cfg["mtd"]["update_period"]
    table = Table(["update_period", "trials", "accuracy", "ci_low", "ci_high", "chance"])
    table.rows.append([period, trials, mean, mean - half, mean + half, 1 / len(cfg["flows"])])
    res.tables["ta"] = table
    res.metrics.append(MetricsRecord("ta-sim", params, "accuracy", mean, mean - half, mean + half, trials))
    res.summary.append(f"update period {period}: TA accuracy {mean:.4f} over {trials} trials "
                       f"(chance {1 / len(cfg['flows']):.3f})")
    return res


# ---------------------------------------------------------------------------
# fallback


def run_fallback(cfg: ScenarioConfig, params: tuple = ()) -> ExperimentResult:
    res = ExperimentResult("fallback", cfg)
    f = cfg["fallback"]
    sc = cfg.fallback_scenario()
    try:
        # blocking models the SMD attacker's jamming; recovery is timed without it
        tl = timeliness(cfg.fallback_scenario(uplink_block_prob=0.0, downlink_block_prob=0.0), cfg.master_seed)
    except NeverRecovered:
        tl = math.nan
    expected_tl = math.nan
    if f["failure_time"] is not None and f["K"] is not None:
        # detection fires at the K-th periodic send after the failure
        first_miss = math.floor(f["failure_time"] / f["command_period"]) * f["command_period"]
        detect = first_miss + f["K"] * f["command_period"]
        expected_tl = detect - f["failure_time"] + f["uplink_latency"] + f["M"]
    est = estimate_exploitability(sc, cfg.smd_campaign(), cfg.trials, cfg.master_seed,
                                  workers=cfg["engine"]["workers"])
    table = Table(["M", "timeliness_unblocked", "timeliness_expected", "exploitability", "ci_low", "ci_high", "trials",
                   "rtt", "cancellation_attempts"])
    table.rows.append([f["M"], tl, expected_tl, est.value, est.ci_low, est.ci_high, est.trials, sc.rtt,
                       sc.cancellation_attempts()])
    res.tables["fallback"] = table
    res.metrics.append(MetricsRecord("fallback", params, "timeliness", tl))
    res.metrics.append(MetricsRecord("fallback", params, "exploitability", est.value, est.ci_low, est.ci_high,
                                     est.trials))
    res.summary.append(f"M={f['M']}: timeliness {tl:.4g} (expected {expected_tl:.4g}), exploitability "
                       f"{est.value:.4f} [{est.ci_low:.4f}, {est.ci_high:.4f}] over {est.trials} campaigns")
    return res


PIPELINES: dict[str, Callable[[ScenarioConfig, tuple], ExperimentResult]] = {
    "reliability": run_reliability,
    "mttf": run_mttf,
    "mtd-trace": run_mtd_trace,
    "dos-sim": run_dos_sim,
    "tpt-sim": run_tpt_sim,
    "ta-sim": run_ta_sim,
    "fallback": run_fallback,
}


# ---------------------------------------------------------------------------
# sweeps and dispatch


def parse_sweep(spec: str) -> tuple[str, list[float | int]]:
    """``key=start:stop:step`` with an inclusive stop."""
    try:
        key, grid = spec.split("=", 1)
        start, stop, step = (float(x) for x in grid.split(":"))
    except ValueError:
        raise ValidationError("--sweep", f"expected key=start:stop:step, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise ValidationError("--sweep", f"empty grid in {spec!r}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    values = [float(format_float(start + i * step)) for i in range(count)]
    if all(float(x).is_integer() for x in grid.split(":")):
        values = [int(v) for v in values]
    return key.strip(), values


def run_experiment(config: ScenarioConfig, subcommand: str, sweep: str | None = None,
                   trials: int | None = None, seed: int | None = None) -> ExperimentResult:
    if subcommand not in PIPELINES:
        raise ValidationError("subcommand", f"unknown experiment {subcommand!r}")
    overrides = {}
    if trials is not None:
        overrides["engine.trials"] = trials
    if seed is not None:
        overrides["engine.master_seed"] = seed
    cfg = config.with_overrides(overrides) if overrides else config
    pipeline = PIPELINES[subcommand]
    if sweep is None:
        return pipeline(cfg, ())
    key, values = parse_sweep(sweep)
    key = resolve_key(cfg.data, key)
    if not isinstance(get_key(cfg.data, key), (int, float, type(None))):
        raise ValidationError(key, "sweeps need a numeric key")
    merged = ExperimentResult(subcommand, cfg, sweep=f"{key}={sweep.split('=', 1)[1]}")
    merged.summary.append(f"sweep over {key}: {', '.join(_cell(v) for v in values)}")
    short = key.rsplit(".", 1)[-1]
    for v in values:
        point = pipeline(cfg.with_overrides({key: v}), ((short, v),))
        for name, table in point.tables.items():
            target = merged.tables.setdefault(name, Table([short] + table.header
                                                          if short not in table.header else table.header))
            for row in table.rows:
                target.rows.append(row if short in table.header else [v] + row)
        merged.metrics += point.metrics
        merged.summary += point.summary
    return merged
