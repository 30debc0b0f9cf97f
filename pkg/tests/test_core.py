import copy

import pytest
from hypothesis import given, strategies as st

from conftest import EXAMPLE1
from satom.core import (
    LinkKind,
    Node,
    NodeKind,
    Plaintext,
    build_topology,
    find_path,
    make_frame,
    symbolic_decrypt,
    symbolic_encrypt,
    tamper,
)
from satom.errors import AuthFailure, MalformedSpec, NoKey, NoPath


def test_build_example1(example1_topo):
    topo = example1_topo
    assert topo.nocc.id == 0
    assert topo.by_name("B").kind is NodeKind.RELAY_SATELLITE
    assert topo.link_between(2, 3).kind is LinkKind.ISL
    assert topo.link_between(3, 2).id == 2
    assert [l.id for l in topo.path_links([0, 1, 2, 3, 4])] == [0, 1, 2, 3]


def test_eavesdroppable_defaults(example1_topo):
    links = example1_topo.links
    assert not links[2].eavesdroppable and not links[3].eavesdroppable
    assert links[1].eavesdroppable
    spec = copy.deepcopy(EXAMPLE1)
    spec["links"][2]["eavesdroppable"] = True
    assert build_topology(spec).links[2].eavesdroppable


@pytest.mark.parametrize("mutate, fragment", [
    (lambda s: s["nodes"].append({"id": 2, "kind": "RelaySatellite"}), "duplicate node id"),
    (lambda s: s["links"].append({"id": 9, "kind": "ISL", "a": 4, "b": 42}), "dangling"),
    (lambda s: s["links"].append({"id": 9, "kind": "ISL", "a": 4, "b": 4}), "self-loop"),
    (lambda s: s["links"].append({"id": 1, "kind": "ISL", "a": 2, "b": 4}), "duplicate link id"),
    (lambda s: s["nodes"][1].update(kind="NOCC"), "exactly one NOCC"),
    (lambda s: s["nodes"][1].update(kind="Blimp"), "unknown kind"),
    (lambda s: s["links"][0].update(latency=-1.0), "negative latency"),
    (lambda s: s["links"][0].update(uplink_block_prob=1.5), "outside [0, 1]"),
    (lambda s: s.update(n_bits=0), "n_bits"),
    (lambda s: s.update(nodes=[]), "empty"),
])
def test_malformed_topologies(mutate, fragment):
    spec = copy.deepcopy(EXAMPLE1)
    mutate(spec)
    with pytest.raises(MalformedSpec, match=fragment.replace("[", r"\[").replace("]", r"\]")):
        build_topology(spec)


def test_find_path_examples(example1_topo):
    assert find_path(example1_topo, 0, 4) == [0, 1, 2, 3, 4]
    assert find_path(example1_topo, 4, 1) == [4, 3, 2, 1]
    assert find_path(example1_topo, 3, 3) == [3]


def test_find_path_tie_break():
    spec = {"nodes": [{"id": i, "kind": "NOCC" if i == 0 else "RelaySatellite"} for i in range(5)],
            "links": [{"id": 0, "kind": "ISL", "a": 0, "b": 3}, {"id": 1, "kind": "ISL", "a": 0, "b": 1},
                      {"id": 2, "kind": "ISL", "a": 3, "b": 4}, {"id": 3, "kind": "ISL", "a": 1, "b": 4}]}
    assert find_path(build_topology(spec), 0, 4) == [0, 1, 4]


def test_find_path_disconnected():
    spec = copy.deepcopy(EXAMPLE1)
    spec["nodes"].append({"id": 9, "kind": "UserTerminal"})
    with pytest.raises(NoPath):
        find_path(build_topology(spec), 0, 9)
    with pytest.raises(MalformedSpec):
        find_path(build_topology(spec), 0, 77)


def test_symbolic_crypto(example1_topo):
    a, b = example1_topo.node(2), example1_topo.node(3)
    ct = symbolic_encrypt("kA", {"cmd": 1})
    assert symbolic_decrypt(a, ct) == {"cmd": 1}
    with pytest.raises(NoKey):
        symbolic_decrypt(b, ct)
    with pytest.raises(AuthFailure):
        symbolic_decrypt(a, tamper(ct))
    assert symbolic_decrypt(b, Plaintext("hello")) == "hello"


@given(key=st.text(min_size=1, max_size=8), payload=st.one_of(st.integers(), st.text(), st.binary()))
def test_encrypt_decrypt_round_trip(key, payload):
    node = Node(1, NodeKind.TARGET_SATELLITE, frozenset({key}), "S")
    assert symbolic_decrypt(node, symbolic_encrypt(key, payload)) == payload


@given(n_bits=st.integers(1, 16), value=st.integers(-5, 70_000))
def test_routing_value_fits(n_bits, value):
    if 0 <= value < 2 ** n_bits:
        assert make_frame(value, Plaintext(None), n_bits).routing == value
    else:
        with pytest.raises(ValueError):
            make_frame(value, Plaintext(None), n_bits)


def test_frame_rewrite_keeps_content():
    f = make_frame(1, symbolic_encrypt("k", "x"), 8)
    g = f.with_routing(7)
    assert g.routing == 7 and g.content == f.content and f.routing == 1
