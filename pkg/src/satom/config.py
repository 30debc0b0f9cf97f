"""Scenario files: JSON in, validated and default-resolved config out.

A scenario has up to seven sections: ``topology``, ``flows``, ``mtd``,
``adversary``, ``fallback``, ``reliability`` and ``engine``. Only
``engine.master_seed`` is mandatory; everything else falls back to the
defaults below, and the resolved document is what experiments echo into
their output headers.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .core import Topology, build_topology
from .errors import MalformedSpec, ParseError, ValidationError
from .modes import FallbackScenario, SmdCampaign
from .reliability import Scheme, SchemeSpec, WeibullParams

SECTIONS = ("topology", "flows", "mtd", "adversary", "fallback", "reliability", "engine")

DEFAULTS: dict[str, Any] = {
    "name": "",
    "topology": None,
    "flows": [],
    "mtd": {
        "policy": "ExplicitCommand",
        "timeout": None,
        "drain_delay": None,
        "ack_timeout": None,
        "update_period": None,
        "no_reuse": False,
        "updates": [],
        "injections": [],
        "raw_frames": [],
        "frame_period": None,
    },
    "adversary": {
        "eavesdrop_links": [],
        "attacker_link": None,
        "strategy": "ExhaustiveSweep",
        "target_flow": None,
        "candidate_flows": [],
        "train_until": None,
        "smd": {"first_at": 10.0, "period": 100.0, "count": 1},
    },
    "fallback": {
        "M": 20.0,
        "K": 3,
        "command_period": 10.0,
        "retry_period": None,
        "uplink_latency": 0.3,
        "downlink_latency": 0.3,
        "uplink_block_prob": 0.0,
        "downlink_block_prob": 0.0,
        "processing_delay": 0.0,
        "failure_time": 20.0,
    },
    "reliability": {
        "N1": 3,
        "N2": 2,
        "beta": 0.6,
        "eta": 10.0,
        "t_max": 50.0,
        "t_step": 0.5,
        "N1_range": [1, 10],
        "N2_range": [1, 4],
    },
    "engine": {
        "horizon": 200.0,
        "master_seed": None,
        "trials": 1000,
        "workers": 1,
    },
}

PROBABILITY_KEYS = {"uplink_block_prob", "downlink_block_prob", "update_loss"}


@dataclass
class ScenarioConfig:
    """Resolved scenario. ``data`` is the full document after defaults."""

    data: dict[str, Any]
    source: str = ""
    _topology: Topology | None = field(default=None, repr=False, compare=False)

    def __getitem__(self, section: str) -> Any:
        return self.data[section]

    @property
    def master_seed(self) -> int:
        return self.data["engine"]["master_seed"]

    @property
    def trials(self) -> int:
        return self.data["engine"]["trials"]

    @property
    def topology(self) -> Topology:
        if self._topology is None:
            if self.data["topology"] is None:
                raise ValidationError("topology", "section required by this experiment")
            self._topology = build_topology(self.data["topology"])
        return self._topology

    def node_id(self, ref, path: str) -> int:
        """Resolve a node given by id or by name."""
        topo = self.topology
        if isinstance(ref, str):
            try:
                return topo.by_name(ref).id
            except MalformedSpec:
                raise ValidationError(path, f"unknown node {ref!r}") from None
        if ref not in topo.nodes:
            raise ValidationError(path, f"unknown node {ref!r}")
        return ref

    def weibull(self) -> WeibullParams:
        r = self.data["reliability"]
        return WeibullParams(r["beta"], r["eta"])

    def scheme(self, scheme: Scheme, N1: int | None = None, N2: int | None = None) -> SchemeSpec:
        r = self.data["reliability"]
        return SchemeSpec(scheme, N1 or r["N1"], N2 or r["N2"])

    def fallback_scenario(self, **overrides) -> FallbackScenario:
        f = dict(self.data["fallback"])
        f.update(overrides)
        return FallbackScenario(
            M=f["M"], K=f["K"], command_period=f["command_period"], retry_period=f["retry_period"],
            uplink_latency=f["uplink_latency"], downlink_latency=f["downlink_latency"],
            uplink_block_prob=f["uplink_block_prob"], downlink_block_prob=f["downlink_block_prob"],
            processing_delay=f["processing_delay"], horizon=self.data["engine"]["horizon"],
            failure_time=f["failure_time"])

    def smd_campaign(self) -> SmdCampaign:
        s = self.data["adversary"]["smd"]
        return SmdCampaign(s.get("first_at", 10.0), s.get("period", 100.0), s.get("count", 1))

    def dumps(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def with_overrides(self, overrides: dict[str, Any]) -> ScenarioConfig:
        data = copy.deepcopy(self.data)
        for key, value in overrides.items():
            set_key(data, key, value)
        return validate(data, self.source)


def _merge(defaults: Any, given: Any) -> Any:
    if isinstance(defaults, dict) and isinstance(given, dict):
        out = copy.deepcopy(defaults)
        for k, v in given.items():
            out[k] = _merge(defaults.get(k), v) if k in defaults else copy.deepcopy(v)
        return out
    return copy.deepcopy(defaults if given is None else given)


def _check_probabilities(node: Any, path: str) -> None:
    if isinstance(node, dict):
        for k, v in node.items():
            sub = f"{path}.{k}" if path else k
            if k in PROBABILITY_KEYS and v is not None:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not 0.0 <= v <= 1.0:
                    raise ValidationError(sub, f"probability must lie in [0, 1], got {v!r}")
            _check_probabilities(v, sub)
    elif isinstance(node, list):
        for i, v in enumerate(node):
            _check_probabilities(v, f"{path}[{i}]")


def _require_number(value, path: str, minimum: float | None = None, integer: bool = False,
                    allow_none: bool = False) -> None:
    if value is None and allow_none:
        return
    kinds = (int,) if integer else (int, float)
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise ValidationError(path, f"expected {'an integer' if integer else 'a number'}, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(path, f"must be >= {minimum}, got {value!r}")


def validate(raw: dict[str, Any], source: str = "") -> ScenarioConfig:
    if not isinstance(raw, dict):
        raise ValidationError("$", "scenario must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ValidationError(sorted(unknown)[0], "unknown section")
    engine = raw.get("engine") or {}
    if engine.get("master_seed") is None:
        raise ValidationError("engine.master_seed", "required")
    data = _merge(DEFAULTS, raw)
    _check_probabilities(data, "")

    e = data["engine"]
    _require_number(e["master_seed"], "engine.master_seed", 0, integer=True)
    _require_number(e["horizon"], "engine.horizon", 0)
    _require_number(e["trials"], "engine.trials", 1, integer=True)
    _require_number(e["workers"], "engine.workers", 1, integer=True)

    r = data["reliability"]
    for key in ("N1", "N2"):
        _require_number(r[key], f"reliability.{key}", 1, integer=True)
    for key in ("beta", "eta", "t_step"):
        _require_number(r[key], f"reliability.{key}", 0)
        if r[key] <= 0:
            raise ValidationError(f"reliability.{key}", "must be positive")
    _require_number(r["t_max"], "reliability.t_max", 0)
    for key in ("N1_range", "N2_range"):
        lo_hi = r[key]
        if not (isinstance(lo_hi, list) and len(lo_hi) == 2 and all(isinstance(x, int) for x in lo_hi)
                and 1 <= lo_hi[0] <= lo_hi[1]):
            raise ValidationError(f"reliability.{key}", f"expected [low, high] with 1 <= low <= high, got {lo_hi!r}")

    f = data["fallback"]
    for key in ("M", "command_period", "uplink_latency", "downlink_latency", "processing_delay"):
        _require_number(f[key], f"fallback.{key}", 0)
    _require_number(f["K"], "fallback.K", 1, integer=True, allow_none=True)
    _require_number(f["retry_period"], "fallback.retry_period", 0, allow_none=True)
    _require_number(f["failure_time"], "fallback.failure_time", 0, allow_none=True)
    if f["retry_period"] is not None and f["retry_period"] <= 0:
        raise ValidationError("fallback.retry_period", "must be positive")

    m = data["mtd"]
    if m["policy"] not in ("ExplicitCommand", "Timeout"):
        raise ValidationError("mtd.policy", f"expected ExplicitCommand or Timeout, got {m['policy']!r}")
    for key in ("timeout", "drain_delay", "ack_timeout", "update_period", "frame_period"):
        _require_number(m[key], f"mtd.{key}", 0, allow_none=True)

    if data["adversary"]["strategy"] not in ("ExhaustiveSweep", "TAInformed"):
        raise ValidationError("adversary.strategy", f"unknown strategy {data['adversary']['strategy']!r}")

    cfg = ScenarioConfig(data, source)
    if data["topology"] is not None:
        try:
            topo = cfg.topology
        except MalformedSpec as exc:
            raise ValidationError("topology", str(exc)) from exc
        except ValueError as exc:
            raise ValidationError("topology.links", str(exc)) from exc
        _check_references(cfg, topo)
    elif data["flows"]:
        raise ValidationError("flows", "flows need a topology section")
    return cfg


def _check_references(cfg: ScenarioConfig, topo: Topology) -> None:
    data = cfg.data
    flow_ids = set()
    for i, flow in enumerate(data["flows"]):
        path = f"flows[{i}]"
        if not isinstance(flow, dict) or "id" not in flow:
            raise ValidationError(path, "flow needs an 'id'")
        if flow["id"] in flow_ids:
            raise ValidationError(f"{path}.id", f"duplicate flow id {flow['id']!r}")
        flow_ids.add(flow["id"])
        for end in ("src", "dst"):
            if end not in flow:
                raise ValidationError(f"{path}.{end}", "required")
            cfg.node_id(flow[end], f"{path}.{end}")
    m = data["mtd"]
    for key in ("updates", "injections"):
        for i, item in enumerate(m[key]):
            if item.get("flow") not in flow_ids:
                raise ValidationError(f"mtd.{key}[{i}].flow", f"unknown flow {item.get('flow')!r}")
            _require_number(item.get("at"), f"mtd.{key}[{i}].at", 0)
    for i, item in enumerate(m["raw_frames"]):
        cfg.node_id(item.get("router"), f"mtd.raw_frames[{i}].router")
        _require_number(item.get("at"), f"mtd.raw_frames[{i}].at", 0)
    adv = data["adversary"]
    for i, link in enumerate(adv["eavesdrop_links"]):
        if link not in topo.links:
            raise ValidationError(f"adversary.eavesdrop_links[{i}]", f"unknown link {link!r}")
    if adv["attacker_link"] is not None and adv["attacker_link"] not in topo.links:
        raise ValidationError("adversary.attacker_link", f"unknown link {adv['attacker_link']!r}")
    for key in ("target_flow",):
        if adv[key] is not None and adv[key] not in flow_ids:
            raise ValidationError(f"adversary.{key}", f"unknown flow {adv[key]!r}")
    for i, fid in enumerate(adv["candidate_flows"]):
        if fid not in flow_ids:
            raise ValidationError(f"adversary.candidate_flows[{i}]", f"unknown flow {fid!r}")


def loads(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return validate(raw, source)


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Load a scenario file; bare names fall back to the bundled scenarios."""
    p = Path(path)
    if not p.exists():
        bundled = resources.files("satom") / "scenarios" / p.name
        if not bundled.is_file():
            raise FileNotFoundError(f"scenario {str(path)!r} not found")
        return loads(bundled.read_text(encoding="utf-8"), p.name)
    return loads(p.read_text(encoding="utf-8"), str(p))


# ---------------------------------------------------------------------------
# dotted keys, used by --sweep


def leaf_keys(data: Any, prefix: str = "") -> list[str]:
    out = []
    if isinstance(data, dict):
        for k, v in data.items():
            out += leaf_keys(v, f"{prefix}.{k}" if prefix else k)
    elif prefix:
        out.append(prefix)
    return out


def resolve_key(data: dict[str, Any], key: str) -> str:
    """Expand a bare key like ``M`` to its unique dotted path ``fallback.M``."""
    keys = leaf_keys(data)
    if key in keys:
        return key
    matches = [k for k in keys if k.endswith("." + key)]
    if len(matches) == 1:
        return matches[0]
    if not matches:
        raise ValidationError(key, "no such scenario key")
    raise ValidationError(key, f"ambiguous key, candidates: {', '.join(sorted(matches))}")


def get_key(data: dict[str, Any], key: str) -> Any:
    node = data
    for part in key.split("."):
        node = node[part]
    return node


def set_key(data: dict[str, Any], key: str, value: Any) -> None:
    parts = resolve_key(data, key).split(".")
    node = data
    for part in parts[:-1]:
        node = node[part]
    node[parts[-1]] = value
