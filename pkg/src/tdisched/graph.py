"""Multi-dimensional resource time-expanded graph.

Every physical node gets one copy per slot. Computing is modelled by a single
global virtual compute node reachable from every LEO copy, plus a virtual
absorption node that swallows the volume lost to compression.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .topology import SlotTopology, node_role

UNBOUNDED = math.inf
MBIT = 1_000_000

OBS, LEO, GND, COM, ABS = "obs", "leo", "gnd", "com", "abs"
REAL_KINDS = (OBS, LEO, GND)

# arc kinds
OS, SS, SG, STORE, SC, CS, CA = "Os", "Ss", "Sg", "Store", "Sc", "Cs", "Ca"
TRANSMISSION = (OS, SS, SG)


class GraphError(ValueError):
    pass


class CapacityViolation(GraphError):
    pass


class Node(NamedTuple):
    kind: str
    pid: str
    slot: int

    def __str__(self):
        if self.kind in (COM, ABS):
            return self.kind
        return f"{self.kind}:{self.pid}@{self.slot}"

    @property
    def is_virtual(self) -> bool:
        return self.kind in (COM, ABS)

    @classmethod
    def parse(cls, text: str) -> "Node":
        if text in (COM, ABS):
            return cls(text, "", 0)
        try:
            kind, rest = text.split(":", 1)
            pid, slot = rest.rsplit("@", 1)
            return cls(kind, pid, int(slot))
        except ValueError:
            raise GraphError(f"bad node reference {text!r}") from None


VCOM = Node(COM, "", 0)
VABS = Node(ABS, "", 0)


@dataclass(eq=False)
class Arc:
    tail: Node
    head: Node
    kind: str
    capacity: float
    residual: float
    index: int = -1

    @property
    def key(self) -> tuple[Node, Node]:
        return (self.tail, self.head)

    @property
    def slot(self) -> int:
        """Slot the arc belongs to (tail slot; compute-side arcs use the LEO copy)."""
        if self.kind == CS:
            return self.head.slot
        return self.tail.slot

    @property
    def bounded(self) -> bool:
        return self.capacity != UNBOUNDED


def weight(arc: Arc) -> float:
    """Link weight 1/residual; free arcs weigh 0, exhausted ones +inf."""
    if arc.residual < 0:
        raise GraphError("negative residual")
    if arc.residual == UNBOUNDED:
        return 0.0
    if arc.residual == 0:
        return math.inf
    return 1.0 / arc.residual


class MdrTeg:
    """Arc store with lookup by (tail, head) and by (kind, slot)."""

    def __init__(self, K: int, tau: float, s_max: int, compute_cap: int):
        self.K = K
        self.tau = tau
        self.s_max = s_max
        self.compute_cap = compute_cap
        self.nodes: list[Node] = []
        self._node_set: set[Node] = set()
        self.arcs: list[Arc] = []
        self._by_key: dict[tuple[Node, Node], Arc] = {}
        self._by_kind_slot: dict[tuple[str, int], list[Arc]] = {}
        self._by_kind: dict[str, list[Arc]] = {}
        self.out_arcs: dict[Node, list[Arc]] = {}
        self.route_out: dict[Node, list[Arc]] = {}  # transmission and storage arcs only
        self.in_arcs: dict[Node, list[Arc]] = {}
        self.physical: dict[str, str] = {}

    # construction helpers
    def add_node(self, node: Node):
        if node not in self._node_set:
            self._node_set.add(node)
            self.nodes.append(node)
            self.out_arcs[node] = []
            self.route_out[node] = []
            self.in_arcs[node] = []

    def add_arc(self, tail: Node, head: Node, kind: str, capacity) -> Arc:
        if (tail, head) in self._by_key:
            raise GraphError(f"duplicate arc {tail} -> {head}")
        arc = Arc(tail, head, kind, capacity, capacity, len(self.arcs))
        self.arcs.append(arc)
        self._by_key[(tail, head)] = arc
        self._by_kind_slot.setdefault((kind, arc.slot), []).append(arc)
        self._by_kind.setdefault(kind, []).append(arc)
        self.out_arcs[tail].append(arc)
        if kind in (OS, SS, SG, STORE):
            self.route_out[tail].append(arc)
        self.in_arcs[head].append(arc)
        return arc

    # queries
    def arc(self, tail: Node, head: Node) -> Arc:
        try:
            return self._by_key[(tail, head)]
        except KeyError:
            raise GraphError(f"no arc {tail} -> {head}") from None

    def get(self, key) -> Arc | None:
        return self._by_key.get(key)

    def __contains__(self, key) -> bool:
        return key in self._by_key

    def arcs_of(self, kind: str, slot: int | None = None) -> list[Arc]:
        if slot is not None:
            return list(self._by_kind_slot.get((kind, slot), ()))
        return list(self._by_kind.get(kind, ()))

    def has_node(self, node: Node) -> bool:
        return node in self._node_set

    def ids(self, kind: str) -> list[str]:
        return sorted(p for p, k in self.physical.items() if k == kind)

    @property
    def n_real(self) -> int:
        return len(self.physical)

    def sc_arc(self, leo: Node) -> Arc | None:
        return self._by_key.get((leo, VCOM))

    # residual bookkeeping
    def consume(self, arc: Arc, amount) -> float:
        if amount < 0:
            raise CapacityViolation("negative consumption")
        if amount > arc.residual:
            raise CapacityViolation(f"consume {amount} > residual {arc.residual} on {arc.tail}->{arc.head}")
        arc.residual -= amount
        return arc.residual

    def release(self, arc: Arc, amount) -> float:
        if amount < 0:
            raise CapacityViolation("negative release")
        if arc.residual + amount > arc.capacity:
            raise CapacityViolation(f"release overflows capacity on {arc.tail}->{arc.head}")
        arc.residual += amount
        return arc.residual

    def reset(self):
        for a in self.arcs:
            a.residual = a.capacity

    def residuals(self) -> list:
        return [a.residual for a in self.arcs]

    def restore(self, residuals: Sequence):
        for a, r in zip(self.arcs, residuals):
            a.residual = r

    def is_pristine(self) -> bool:
        return all(a.residual == a.capacity for a in self.arcs)

    def check_structure(self) -> list[str]:
        """Full scan of arc endpoint rules; returns a list of problems."""
        problems = []
        for a in self.arcs:
            t, h = a.tail, a.head
            ok = {
                OS: t.kind == OBS and h.kind == LEO and t.slot == h.slot,
                SS: t.kind == LEO and h.kind == LEO and t.slot == h.slot,
                SG: t.kind == LEO and h.kind == GND and t.slot == h.slot,
                STORE: t.kind == h.kind and t.kind in (OBS, LEO) and t.pid == h.pid and h.slot == t.slot + 1,
                SC: t.kind == LEO and h == VCOM,
                CS: t == VCOM and h.kind == LEO,
                CA: t == VCOM and h == VABS,
            }[a.kind]
            if not ok:
                problems.append(f"{a.kind} arc {t} -> {h}")
            if not 0 <= a.residual <= a.capacity:
                problems.append(f"residual out of range on {t} -> {h}")
        return problems

    def to_json(self) -> str:
        def cap(v):
            return None if v == UNBOUNDED else v
        doc = {
            "K": self.K, "tau": self.tau, "s_max": self.s_max, "compute_cap": self.compute_cap,
            "nodes": [str(n) for n in self.nodes],
            "arcs": [{"tail": str(a.tail), "head": str(a.head), "kind": a.kind,
                      "capacity": cap(a.capacity), "residual": cap(a.residual)} for a in self.arcs],
        }
        return json.dumps(doc, indent=1)


def build(slots: Sequence[SlotTopology], s_max: int, rho: float, zeta_max: float, *,
          tau: float = 300.0, rho_unit: int = MBIT, with_compute: bool = True,
          isl_cap: int | None = None, sg_cap: int | None = None,
          roles: dict[str, str] | None = None,
          extra_nodes: Iterable[str] = ()) -> MdrTeg:
    """Build the MDR-TEG from slot snapshots.

    Transmission capacity is rate * tau bits unless ``isl_cap``/``sg_cap``
    override it (fixed per-slot capacities, as in preset parameter sets).
    Compute capacity per LEO per slot is ``rho * zeta_max`` with rho given in
    ``rho_unit`` bits per unit. ``with_compute=False`` yields a plain TEG.
    """
    if not slots:
        raise GraphError("at least one slot is required")
    for k, st in enumerate(slots, start=1):
        if st.slot != k:
            raise GraphError(f"slot indices must be contiguous from 1; got {st.slot} at position {k}")
    K = len(slots)
    compute_cap = int(round(rho * zeta_max * rho_unit))
    g = MdrTeg(K, tau, int(s_max), compute_cap)

    ids: set[str] = set(extra_nodes)
    for st in slots:
        ids |= set(st.nodes)
        for i, j in st.rate:
            ids.update((i, j))
    roles = dict(roles or {})
    for pid in sorted(ids):
        g.physical[pid] = roles.get(pid, node_role(pid))

    for t in range(1, K + 1):
        for pid in sorted(ids):
            g.add_node(Node(g.physical[pid], pid, t))
    if with_compute:
        g.add_node(VCOM)
        g.add_node(VABS)

    for st in slots:
        t = st.slot
        for (i, j) in sorted(st.rate):
            ki, kj = g.physical[i], g.physical[j]
            if ki == OBS and kj == LEO:
                kind, over = OS, isl_cap
            elif ki == LEO and kj == LEO:
                kind, over = SS, isl_cap
            elif ki == LEO and kj == GND:
                kind, over = SG, sg_cap
            else:
                continue  # links with no role in the model (e.g. ground uplinks)
            cap = over if over is not None else int(st.rate[(i, j)] * tau)
            g.add_arc(Node(ki, i, t), Node(kj, j, t), kind, int(cap))

    for pid in sorted(ids):
        kind = g.physical[pid]
        if kind in (OBS, LEO):
            for t in range(1, K):
                g.add_arc(Node(kind, pid, t), Node(kind, pid, t + 1), STORE, int(s_max))

    if with_compute:
        for t in range(1, K + 1):
            for pid in sorted(ids):
                if g.physical[pid] == LEO:
                    leo = Node(LEO, pid, t)
                    g.add_arc(leo, VCOM, SC, compute_cap)
                    g.add_arc(VCOM, leo, CS, UNBOUNDED)
        g.add_arc(VCOM, VABS, CA, UNBOUNDED)
    return g
