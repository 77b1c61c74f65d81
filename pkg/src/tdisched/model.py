"""Flows, assignments and the semantic constraint checker."""
from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from .graph import (CA, CS, GND, LEO, MBIT, OBS, OS, SC, SG, SS, STORE, VABS, VCOM,
                    MdrTeg, Node)

ANY_GROUND = "*"
FLOW_HEADER = ["id", "src", "dst", "volume_mbits", "t_start", "t_end", "theta"]

_CAPACITY_TAG = {OS: "eq5", SS: "eq5", SG: "eq5", STORE: "eq6", SC: "eq7"}


class StructuralError(ValueError):
    """The assignment references arcs or flows that do not exist."""


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


@dataclass(frozen=True)
class Flow:
    id: str
    source: str
    dest: str
    volume: int
    t_start: int
    t_end: int
    theta: Fraction = Fraction(1, 2)

    def __post_init__(self):
        object.__setattr__(self, "theta", as_fraction(self.theta))
        if not 1 <= self.t_start <= self.t_end:
            raise ValueError(f"flow {self.id}: need 1 <= t_start <= t_end")
        if self.volume <= 0:
            raise ValueError(f"flow {self.id}: volume must be positive")
        if not 0 < self.theta < 1:
            raise ValueError(f"flow {self.id}: theta must lie in (0, 1)")
        if (self.volume * self.theta).denominator != 1:
            raise ValueError(f"flow {self.id}: compressed volume is not a whole number of bits")

    @property
    def compressed(self) -> int:
        return int(self.volume * self.theta)

    def accepts(self, node: Node) -> bool:
        return node.kind == GND and (self.dest == ANY_GROUND or node.pid == self.dest)

    def on_time(self, slot: int) -> bool:
        return self.t_start <= slot <= self.t_end


def check_flows(graph: MdrTeg, flows: Sequence[Flow]):
    seen = set()
    for f in flows:
        if f.id in seen:
            raise ValueError(f"duplicate flow id {f.id}")
        seen.add(f.id)
        if graph.physical.get(f.source) != OBS:
            raise ValueError(f"flow {f.id}: source {f.source} is not an observation node")
        if f.dest != ANY_GROUND and graph.physical.get(f.dest) != GND:
            raise ValueError(f"flow {f.id}: destination {f.dest} is not a ground station")
        if f.t_end > graph.K:
            raise ValueError(f"flow {f.id}: deadline {f.t_end} beyond horizon {graph.K}")


def timeliness_index(graph: MdrTeg, flow: Flow):
    """Sg arcs that can carry the flow to an acceptable ground station, all slots."""
    return [a for a in graph.arcs_of(SG) if flow.accepts(a.head)]


@dataclass
class Assignment:
    x: dict = field(default_factory=dict)        # flow id -> {arc key: bits}
    lam: dict = field(default_factory=dict)      # flow id -> {arc key: 0/1}
    lam_sg: dict = field(default_factory=dict)   # flow id -> {sg arc key: 0/1}
    arrival: dict = field(default_factory=dict)  # flow id -> slot or -1

    def add(self, fid: str, key, amount: int):
        xs = self.x.setdefault(fid, {})
        xs[key] = xs.get(key, 0) + amount
        self.lam.setdefault(fid, {})[key] = 1 if xs[key] > 0 else 0

    def drop(self, fid: str):
        for d in (self.x, self.lam, self.lam_sg):
            d.pop(fid, None)
        self.arrival[fid] = -1

    def usage(self, fid: str) -> dict:
        return self.x.get(fid, {})

    def copy(self) -> "Assignment":
        return Assignment({k: dict(v) for k, v in self.x.items()},
                          {k: dict(v) for k, v in self.lam.items()},
                          {k: dict(v) for k, v in self.lam_sg.items()},
                          dict(self.arrival))

    def delivered(self) -> list[str]:
        return sorted(f for f, v in self.lam_sg.items() if any(v.values()))

    def to_json(self) -> str:
        def rows(d):
            return [{"flow": f, "tail": str(k[0]), "head": str(k[1]), "value": v}
                    for f in sorted(d) for k, v in sorted(d[f].items(), key=lambda kv: (str(kv[0][0]), str(kv[0][1])))]
        return json.dumps({"x": rows(self.x), "lambda": rows(self.lam), "lambda_sg": rows(self.lam_sg),
                           "arrival": {f: self.arrival[f] for f in sorted(self.arrival)}}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Assignment":
        doc = json.loads(text)

        def unrows(rows):
            out: dict = {}
            for r in rows:
                out.setdefault(str(r["flow"]), {})[(Node.parse(r["tail"]), Node.parse(r["head"]))] = int(r["value"])
            return out
        return cls(unrows(doc.get("x", [])), unrows(doc.get("lambda", [])),
                   unrows(doc.get("lambda_sg", [])),
                   {str(k): int(v) for k, v in doc.get("arrival", {}).items()})


def arrival_slot(a: Assignment, fid: str) -> int:
    """Arrival slot: the slot of the single used Sg arc, else -1."""
    used = [k for k, v in a.x.get(fid, {}).items() if v > 0 and k[1].kind == GND]
    return used[0][1].slot if len(used) == 1 else -1


def semantic_lam_sg(flow: Flow, a: Assignment) -> dict:
    t = arrival_slot(a, flow.id)
    if t == -1 or not flow.on_time(t):
        return {}
    key = next(k for k, v in a.x[flow.id].items() if v > 0 and k[1].kind == GND)
    return {key: 1}


def finalize(a: Assignment, flows: Iterable[Flow]) -> Assignment:
    """Fill arrival slots and timeliness indicators from the arc usage."""
    for f in flows:
        a.arrival[f.id] = arrival_slot(a, f.id)
        a.lam_sg[f.id] = semantic_lam_sg(f, a)
    return a


def objective(flows: Iterable[Flow], a: Assignment) -> int:
    """Number of images delivered inside their window."""
    ids = {f.id for f in flows}
    return sum(v for fid, d in a.lam_sg.items() if fid in ids for v in d.values())


def success_ratio(flows: Sequence[Flow], a: Assignment) -> float:
    return objective(flows, a) / len(flows) if flows else 0.0


@dataclass(frozen=True)
class Violation:
    eq: str
    flow: str | None
    where: str
    slot: int | None
    lhs: object
    rhs: object

    def as_dict(self):
        return {"eq": self.eq, "flow": self.flow, "where": self.where, "slot": self.slot,
                "lhs": _jsonable(self.lhs), "rhs": _jsonable(self.rhs)}


def _jsonable(v):
    if isinstance(v, Fraction):
        return int(v) if v.denominator == 1 else float(v)
    return v


@dataclass
class ConstraintReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations

    def add(self, *args):
        self.violations.append(Violation(*args))

    def tags(self) -> set[str]:
        return {v.eq for v in self.violations}

    def to_json(self) -> str:
        return json.dumps({"feasible": self.feasible,
                           "violations": [v.as_dict() for v in self.violations]}, indent=1)


def validate(graph: MdrTeg, flows: Sequence[Flow], a: Assignment) -> ConstraintReport:
    """Check every capacity, conservation, compression and timeliness rule.

    Conservation is conditional: a node copy the flow never touches is fine.
    Arithmetic is exact; no tolerance is applied.
    """
    by_id = {f.id: f for f in flows}
    for d in (a.x, a.lam, a.lam_sg):
        for fid, arcs in d.items():
            if fid not in by_id:
                raise StructuralError(f"unknown flow {fid}")
            for key in arcs:
                if key not in graph:
                    raise StructuralError(f"flow {fid}: no arc {key[0]} -> {key[1]}")
    for fid in a.lam_sg:
        for key in a.lam_sg[fid]:
            if graph.get(key).kind != SG:
                raise StructuralError(f"flow {fid}: timeliness indicator on non-Sg arc")

    rep = ConstraintReport()
    load: dict = defaultdict(int)
    for fid, arcs in a.x.items():
        for key, v in arcs.items():
            if v < 0:
                rep.add("eq19", fid, f"{key[0]}->{key[1]}", graph.get(key).slot, v, 0)
            load[key] += v
    for key, total in load.items():
        arc = graph.get(key)
        if arc.bounded and total > arc.capacity:
            rep.add(_CAPACITY_TAG[arc.kind], None, f"{key[0]}->{key[1]}", arc.slot, total, arc.capacity)

    for f in flows:
        _validate_flow(graph, f, a, rep)
    return rep


def _validate_flow(graph: MdrTeg, f: Flow, a: Assignment, rep: ConstraintReport):
    fid = f.id
    xs = a.x.get(fid, {})
    lams = a.lam.get(fid, {})

    for key in set(xs) | set(lams):
        want = 1 if xs.get(key, 0) > 0 else 0
        if lams.get(key, 0) != want:
            rep.add("eq8", fid, f"{key[0]}->{key[1]}", graph.get(key).slot, lams.get(key, 0), want)

    used = {k: v for k, v in xs.items() if v > 0}
    lam_in: dict = defaultdict(int)
    lam_out: dict = defaultdict(int)
    x_in: dict = defaultdict(int)
    x_out: dict = defaultdict(int)
    kinds: dict = {}
    for key, v in used.items():
        arc = graph.get(key)
        kinds[key] = arc.kind
        t, h = key
        if arc.kind in (OS, SS, SG, STORE):
            lam_out[t] += 1
            lam_in[h] += 1
        x_out[t] += v
        x_in[h] += v

    # source side
    os_keys = [k for k in used if kinds[k] == OS]
    sent = len(os_keys)
    for k in used:
        for n in k:
            if n.kind == OBS and (n.pid != f.source or n.slot < f.t_start):
                rep.add("eq9", fid, str(n), n.slot, 1, 0)
    if sent > 1:
        rep.add("eq9", fid, f.source, None, sent, 1)
    os_volume = sum(used[k] for k in os_keys)
    if os_volume != f.volume * min(sent, 1) and sent <= 1:
        rep.add("eq10", fid, f.source, None, os_volume, f.volume * min(sent, 1))
    for t in range(f.t_start, graph.K + 1):
        o = Node(OBS, f.source, t)
        inject = 1 if (t == f.t_start and sent) else 0
        if lam_in[o] + inject != lam_out[o]:
            rep.add("eq9", fid, str(o), t, lam_out[o], lam_in[o] + inject)
        inject_x = f.volume if (t == f.t_start and sent) else 0
        if x_in[o] + inject_x != x_out[o]:
            rep.add("eq10", fid, str(o), t, x_out[o], x_in[o] + inject_x)

    # destination side
    sg_keys = [k for k in used if kinds[k] == SG]
    for k in sg_keys:
        if not f.accepts(k[1]):
            rep.add("eq11", fid, str(k[1]), k[1].slot, 1, 0)
    if len(sg_keys) != min(sent, 1) or len(sg_keys) > 1:
        rep.add("eq11", fid, "ground", None, len(sg_keys), min(sent, 1))

    # LEO copies and compression
    leos = {n for k in used for n in k if n.kind == LEO}
    sc_total = 0
    n_sc = 0
    for n in sorted(leos):
        if lam_in[n] != lam_out[n] or lam_in[n] > 1:
            rep.add("eq12", fid, str(n), n.slot, lam_in[n], lam_out[n])
        if x_in[n] != x_out[n]:
            rep.add("eq13", fid, str(n), n.slot, x_in[n], x_out[n])
        sc = used.get((n, VCOM), 0)
        cs = used.get((VCOM, n), 0)
        if sc:
            n_sc += 1
            sc_total += sc
            z = x_in[n] - cs
            if sc != z:
                rep.add("eq14", fid, str(n), n.slot, sc, z)
            if cs != sc * f.theta:
                rep.add("eq15", fid, str(n), n.slot, cs, sc * f.theta)
        elif cs:
            rep.add("eq15", fid, str(n), n.slot, cs, 0)
    ca = used.get((VCOM, VABS), 0)
    if ca != sc_total * (1 - f.theta):
        rep.add("eq15", fid, "abs", None, ca, sc_total * (1 - f.theta))
    if n_sc > 1:
        rep.add("eq16", fid, "com", None, n_sc, 1)

    # timeliness
    t_arr = len(sg_keys) == 1 and sg_keys[0][1].slot or -1
    if a.arrival.get(fid, -1) != t_arr:
        rep.add("eq17", fid, "arrival", None, a.arrival.get(fid, -1), t_arr)
    want = {}
    if t_arr != -1 and f.on_time(t_arr):
        want = {sg_keys[0]: 1}
    have = {k: v for k, v in a.lam_sg.get(fid, {}).items() if v}
    if have != want:
        rep.add("eq18", fid, "timeliness", t_arr if t_arr != -1 else None, sum(have.values()), sum(want.values()))


# --- flow CSV ----------------------------------------------------------------

def write_flows(flows: Iterable[Flow], path: Path | str | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FLOW_HEADER)
    for f in flows:
        mb = Fraction(f.volume, MBIT)
        w.writerow([f.id, f.source, f.dest, int(mb) if mb.denominator == 1 else float(mb),
                    f.t_start, f.t_end, f"{f.theta.numerator}/{f.theta.denominator}"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def parse_flows(text: str) -> list[Flow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != FLOW_HEADER:
        raise ValueError(f"line 1: expected header {','.join(FLOW_HEADER)}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(FLOW_HEADER):
            raise ValueError(f"line {lineno}: expected {len(FLOW_HEADER)} fields")
        try:
            vol = Fraction(row[3]) * MBIT
            if vol.denominator != 1:
                raise ValueError("volume")
            out.append(Flow(row[0].strip(), row[1].strip(), row[2].strip(), int(vol),
                            int(row[4]), int(row[5]), Fraction(row[6].strip())))
        except ValueError as e:
            raise ValueError(f"line {lineno}: {e}") from None
    return out


def load_flows(path: Path | str) -> list[Flow]:
    return parse_flows(Path(path).read_text())
