"""Discrete-event simulator for satellite-constellation O&M security.

Routing-field moving target defense, an M-delayed ciphered/safe-mode
fallback, pooled cipher-module reliability, and the attacks used to
measure them.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Frame,
    Link,
    LinkKind,
    Node,
    NodeKind,
    Topology,
    build_topology,
    find_path,
    symbolic_decrypt,
    symbolic_encrypt,
)
from .engine import Engine, RngStream  # noqa: E402
from .errors import SatomError  # noqa: E402

__all__ = [
    "Engine",
    "Frame",
    "Link",
    "LinkKind",
    "Node",
    "NodeKind",
    "RngStream",
    "SatomError",
    "Topology",
    "build_topology",
    "find_path",
    "symbolic_decrypt",
    "symbolic_encrypt",
]
