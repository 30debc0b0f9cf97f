import re

import pytest

from satom.core import build_topology

_criteria: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[n] = (report.outcome, report.nodeid.split("::")[-1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcome, name = _criteria[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  ({name})")


def chain_spec(n_sats: int, latencies=None, egress: bool = False, n_bits: int = 8) -> dict:
    """NOCC - GW - S1 - ... - Sn [- U], every satellite sharing a key with the NOCC."""
    lat = list(latencies or [0.01] * (n_sats + 1 + egress))
    nodes = [
        {"id": 0, "kind": "NOCC", "name": "NOCC", "keys": [f"k{i}" for i in range(1, n_sats + 1)]},
        {"id": 1, "kind": "Gateway", "name": "GW"},
    ]
    for i in range(1, n_sats + 1):
        kind = "AccessSatellite" if i == 1 else ("TargetSatellite" if i == n_sats else "RelaySatellite")
        nodes.append({"id": i + 1, "kind": kind, "name": f"S{i}", "keys": [f"k{i}"]})
    links = [{"id": 0, "kind": "TerrestrialWired", "a": 0, "b": 1, "latency": 0.01},
             {"id": 1, "kind": "Feeder", "a": 1, "b": 2, "latency": lat[0]}]
    for i in range(1, n_sats):
        links.append({"id": i + 1, "kind": "ISL", "a": i + 1, "b": i + 2, "latency": lat[i]})
    if egress:
        nodes.append({"id": n_sats + 2, "kind": "UserTerminal", "name": "U", "keys": ["ku"]})
        links.append({"id": n_sats + 1, "kind": "UserLink", "a": n_sats + 1, "b": n_sats + 2,
                      "latency": lat[n_sats]})
    return {"n_bits": n_bits, "nodes": nodes, "links": links}


EXAMPLE1 = {
    "n_bits": 8,
    "nodes": [
        {"id": 0, "kind": "NOCC", "name": "NOCC", "keys": ["kA", "kB", "kC"]},
        {"id": 1, "kind": "Gateway", "name": "GW"},
        {"id": 2, "kind": "AccessSatellite", "name": "A", "keys": ["kA"]},
        {"id": 3, "kind": "RelaySatellite", "name": "B", "keys": ["kB"]},
        {"id": 4, "kind": "TargetSatellite", "name": "C", "keys": ["kC"]},
    ],
    "links": [
        {"id": 0, "kind": "TerrestrialWired", "a": 0, "b": 1, "latency": 0.01},
        {"id": 1, "kind": "Feeder", "a": 1, "b": 2, "latency": 0.02},
        {"id": 2, "kind": "ISL", "a": 2, "b": 3, "latency": 0.01},
        {"id": 3, "kind": "ISL", "a": 3, "b": 4, "latency": 0.01},
    ],
}


@pytest.fixture
def example1_topo():
    return build_topology(EXAMPLE1)
