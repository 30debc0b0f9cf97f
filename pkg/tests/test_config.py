import copy
import json

import pytest

from conftest import EXAMPLE1
from satom.config import get_key, load_scenario, loads, resolve_key, validate
from satom.errors import ParseError, ValidationError
from satom.experiments import parse_sweep


def _base(**sections):
    doc = {"engine": {"master_seed": 1}}
    doc.update(sections)
    return doc


def _path_of(doc):
    with pytest.raises(ValidationError) as info:
        validate(doc)
    return info.value.path


def test_bundled_fig6():
    cfg = load_scenario("fig6.scenario")
    r = cfg["reliability"]
    assert (r["N1"], r["N2"], r["beta"], r["eta"]) == (3, 2, 0.6, 10.0)
    assert cfg.master_seed == 1


def test_defaults_resolved():
    cfg = validate(_base())
    assert cfg["fallback"]["K"] == 3 and cfg["mtd"]["policy"] == "ExplicitCommand"
    assert json.loads(cfg.dumps())["engine"]["trials"] == 1000


def test_master_seed_required():
    assert _path_of({"engine": {}}) == "engine.master_seed"
    assert _path_of({}) == "engine.master_seed"


def test_probability_out_of_range():
    assert _path_of(_base(fallback={"uplink_block_prob": 1.3})) == "fallback.uplink_block_prob"
    topo = copy.deepcopy(EXAMPLE1)
    topo["links"][1]["downlink_block_prob"] = -0.1
    assert _path_of(_base(topology=topo)) == "topology.links[1].downlink_block_prob"


@pytest.mark.parametrize("doc, path", [
    (_base(bogus={}), "bogus"),
    (_base(engine={"master_seed": 1, "trials": 0}), "engine.trials"),
    (_base(reliability={"N1": 0}), "reliability.N1"),
    (_base(reliability={"eta": -2.0}), "reliability.eta"),
    (_base(reliability={"N2_range": [3, 1]}), "reliability.N2_range"),
    (_base(mtd={"policy": "Never"}), "mtd.policy"),
    (_base(fallback={"K": 1.5}), "fallback.K"),
    (_base(adversary={"strategy": "Guess"}), "adversary.strategy"),
    (_base(flows=[{"id": "f", "src": 0, "dst": 4}]), "flows"),
])
def test_invalid_values(doc, path):
    assert _path_of(doc) == path


def test_reference_checks():
    good = _base(topology=EXAMPLE1, flows=[{"id": "f1", "src": "NOCC", "dst": "C"}])
    validate(good)
    bad = copy.deepcopy(good)
    bad["flows"][0]["dst"] = "Z"
    assert _path_of(bad) == "flows[0].dst"
    bad = copy.deepcopy(good)
    bad["mtd"] = {"updates": [{"flow": "nope", "at": 1.0}]}
    assert _path_of(bad) == "mtd.updates[0].flow"
    bad = copy.deepcopy(good)
    bad["adversary"] = {"eavesdrop_links": [1, 17]}
    assert _path_of(bad) == "adversary.eavesdrop_links[1]"
    bad = copy.deepcopy(good)
    bad["flows"].append({"id": "f1", "src": 0, "dst": 3})
    assert _path_of(bad) == "flows[1].id"


def test_bad_topology_reported_under_topology():
    topo = copy.deepcopy(EXAMPLE1)
    topo["links"].append({"id": 8, "kind": "ISL", "a": 4, "b": 99})
    assert _path_of(_base(topology=topo)) == "topology"


def test_parse_error_has_position():
    with pytest.raises(ParseError, match=r"<string>:2:"):
        loads('{"engine":\n  {"master_seed": 1,,}}')


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_scenario("no-such.scenario")


def test_overrides_and_keys():
    cfg = load_scenario("fallback.scenario")
    assert resolve_key(cfg.data, "M") == "fallback.M"
    assert resolve_key(cfg.data, "engine.trials") == "engine.trials"
    with pytest.raises(ValidationError, match="ambiguous"):
        resolve_key({"a": {"x": 1}, "b": {"x": 2}}, "x")
    with pytest.raises(ValidationError, match="no such"):
        resolve_key(cfg.data, "warp_factor")
    moved = cfg.with_overrides({"M": 45.0})
    assert get_key(moved.data, "fallback.M") == 45.0 and get_key(cfg.data, "fallback.M") != 45.0
    with pytest.raises(ValidationError):
        cfg.with_overrides({"fallback.uplink_block_prob": 2.0})


def test_parse_sweep():
    assert parse_sweep("M=0:60:5") == ("M", list(range(0, 61, 5)))
    key, values = parse_sweep("fallback.uplink_block_prob=0:0.5:0.25")
    assert key == "fallback.uplink_block_prob" and values == pytest.approx([0.0, 0.25, 0.5])
    for bad in ("M", "M=1:2", "M=0:10:0", "M=a:b:c", "M=10:0:1"):
        with pytest.raises(ValidationError):
            parse_sweep(bad)
