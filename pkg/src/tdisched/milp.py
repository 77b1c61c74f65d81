"""Linearised MILP of the delivery problem and LP-file round trip.

All coefficients are integers: the timeliness couplings are stored multiplied
by the time big-M, and the compression split by the denominator of theta.
"""
from __future__ import annotations

import re
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .graph import CA, CS, LEO, OBS, OS, SC, SG, SS, STORE, VABS, VCOM, Arc, MdrTeg, Node
from .model import Flow, check_flows, timeliness_index

SENSES = ("<=", ">=", "=")


@dataclass
class Var:
    name: str
    vtype: str  # 'C', 'B' or 'I'
    lb: int = 0
    ub: float | int | None = None  # None = +inf


@dataclass
class Constraint:
    name: str
    coeffs: dict  # var index -> coefficient
    sense: str
    rhs: object
    tag: str


@dataclass
class MilpModel:
    graph: MdrTeg
    flows: list
    m_flow: int
    m_time: int
    timeliness: bool = True
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    constant: object = 0
    x_var: dict = field(default_factory=dict)
    lam_var: dict = field(default_factory=dict)
    sg_var: dict = field(default_factory=dict)
    arr_var: dict = field(default_factory=dict)
    _names: set = field(default_factory=set, repr=False)

    def add_var(self, name: str, vtype: str, lb=0, ub=None) -> int:
        base, k = name, 1
        while name in self._names:
            name = f"{base}.{k}"
            k += 1
        self._names.add(name)
        self.variables.append(Var(name, vtype, lb, ub))
        return len(self.variables) - 1

    def add(self, name: str, terms, sense: str, rhs, tag: str):
        coeffs: dict = defaultdict(int)
        for idx, c in terms:
            coeffs[idx] += c
        coeffs = {i: c for i, c in coeffs.items() if c != 0}
        self.constraints.append(Constraint(name, coeffs, sense, rhs, tag))

    def counts_by_tag(self) -> dict:
        out: dict = defaultdict(int)
        for c in self.constraints:
            out[c.tag] += 1
        return dict(out)

    def check(self, values: Sequence) -> list[Constraint]:
        """Constraints violated by a full variable vector (exact arithmetic)."""
        bad = []
        for c in self.constraints:
            lhs = sum(coef * values[i] for i, coef in c.coeffs.items())
            if (c.sense == "<=" and lhs > c.rhs) or (c.sense == ">=" and lhs < c.rhs) or \
                    (c.sense == "=" and lhs != c.rhs):
                bad.append(c)
        for i, v in enumerate(self.variables):
            if values[i] < v.lb or (v.ub is not None and values[i] > v.ub):
                bad.append(Constraint(f"bound:{v.name}", {i: 1}, "in", (v.lb, v.ub), "bound"))
        return bad

    def value(self, values: Sequence):
        return self.constant + sum(c * values[i] for i, c in self.objective.items())


_SAFE = re.compile(r"[^A-Za-z0-9_]")


def _tok(node: Node) -> str:
    if node.is_virtual:
        return node.kind
    return f"{node.kind}_{_SAFE.sub('_', node.pid)}_{node.slot}"


def default_big_m(graph: MdrTeg, flows: Sequence[Flow]) -> tuple[int, int]:
    m_flow = 2 * max((f.volume for f in flows), default=1)
    m_time = 2 * graph.K + 1
    return m_flow, m_time


def usable(flow: Flow, arc: Arc) -> bool:
    """Arcs a flow may ever touch: own source from its release slot on, acceptable sinks."""
    if arc.tail.kind == OBS:
        return arc.tail.pid == flow.source and arc.tail.slot >= flow.t_start
    if arc.kind == SG:
        return flow.accepts(arc.head)
    return True


def build_milp(graph: MdrTeg, flows: Sequence[Flow], *, m_flow: int | None = None,
               m_time: int | None = None, lam_costs: Mapping | None = None) -> MilpModel:
    """Assemble the MILP.

    With ``lam_costs`` (a map ``(flow id, Sg arc key) -> coefficient``) the
    model is the routing subproblem: timeliness couplings and indicators are
    left out and the objective prices Sg-arc usage. Otherwise the objective is
    minus the number of timely deliveries.
    """
    flows = list(flows)
    check_flows(graph, flows)
    dm_flow, dm_time = default_big_m(graph, flows)
    m_flow = dm_flow if m_flow is None else m_flow
    m_time = dm_time if m_time is None else m_time
    if flows and m_flow <= max(f.volume for f in flows):
        raise ValueError("m_flow must exceed the largest flow volume")
    if m_time <= max([graph.K] + [f.t_end for f in flows]):
        raise ValueError("m_time must exceed the horizon and every deadline")
    model = MilpModel(graph, flows, m_flow, m_time, timeliness=lam_costs is None)

    for f in flows:
        fu = _SAFE.sub("_", f.id)
        for arc in graph.arcs:
            ub = None if usable(f, arc) else 0
            tail, head = _tok(arc.tail), _tok(arc.head)
            model.x_var[(f.id, arc.key)] = model.add_var(f"x.{fu}.{tail}.{head}", "C", 0, ub)
            model.lam_var[(f.id, arc.key)] = model.add_var(f"l.{fu}.{tail}.{head}", "B", 0, 1 if ub is None else 0)
        if model.timeliness:
            for arc in timeliness_index(graph, f):
                model.sg_var[(f.id, arc.key)] = model.add_var(
                    f"s.{fu}.{_tok(arc.tail)}.{_tok(arc.head)}", "B", 0, 1)
        model.arr_var[f.id] = model.add_var(f"T.{fu}", "I", -1, graph.K)

    # shared capacities
    if flows:
        tag_of = {OS: "eq5", SS: "eq5", SG: "eq5", STORE: "eq6", SC: "eq7"}
        for arc in graph.arcs:
            if arc.bounded:
                model.add(f"cap.{_tok(arc.tail)}.{_tok(arc.head)}",
                          [(model.x_var[(f.id, arc.key)], 1) for f in flows], "<=", int(arc.capacity),
                          tag_of[arc.kind])

    for f in flows:
        _flow_constraints(model, f)

    if model.timeliness:
        for (fid, key), idx in model.sg_var.items():
            model.objective[idx] = -1
    else:
        for (fid, key), c in lam_costs.items():
            if c:
                model.objective[model.lam_var[(fid, key)]] = c
    return model


def _flow_constraints(model: MilpModel, f: Flow):
    g = model.graph
    X = lambda key: model.x_var[(f.id, key)]  # noqa: E731
    L = lambda key: model.lam_var[(f.id, key)]  # noqa: E731
    fu = _SAFE.sub("_", f.id)
    M = model.m_flow

    for arc in g.arcs:
        n = f"{fu}.{_tok(arc.tail)}.{_tok(arc.head)}"
        model.add(f"link_lo.{n}", [(L(arc.key), 1), (X(arc.key), -1)], "<=", 0, "eq19")
        model.add(f"link_hi.{n}", [(X(arc.key), 1), (L(arc.key), -M)], "<=", 0, "eq19")

    src_os = [a for a in g.arcs_of(OS) if a.tail.pid == f.source]
    model.add(f"src_once.{fu}", [(L(a.key), 1) for a in src_os], "<=", 1, "eq9")
    model.add(f"src_vol.{fu}", [(X(a.key), 1) for a in src_os] + [(L(a.key), -f.volume) for a in src_os],
              "=", 0, "eq10")
    for t in range(f.t_start, g.K + 1):
        o = Node(OBS, f.source, t)
        if not g.has_node(o):
            continue
        outs = g.out_arcs[o]
        ins = g.in_arcs[o]
        lam_terms = [(L(a.key), 1) for a in outs] + [(L(a.key), -1) for a in ins]
        x_terms = [(X(a.key), 1) for a in outs] + [(X(a.key), -1) for a in ins]
        if t == f.t_start:
            lam_terms += [(L(a.key), -1) for a in src_os]
            x_terms += [(L(a.key), -f.volume) for a in src_os]
        model.add(f"src_lam.{fu}.{t}", lam_terms, "=", 0, "eq9")
        model.add(f"src_x.{fu}.{t}", x_terms, "=", 0, "eq10")

    sg = [a for a in g.arcs_of(SG) if f.accepts(a.head)]
    model.add(f"sink.{fu}", [(L(a.key), 1) for a in sg] + [(L(a.key), -1) for a in src_os], "=", 0, "eq11")

    p, q = f.theta.numerator, f.theta.denominator
    sc_arcs = []
    for node in g.nodes:
        if node.kind != LEO:
            continue
        nn = f"{fu}.{_tok(node)}"
        ins = [a for a in g.in_arcs[node] if a.kind in (OS, SS, STORE)]
        outs = [a for a in g.out_arcs[node] if a.kind in (SS, SG, STORE)]
        model.add(f"relay_lam.{nn}", [(L(a.key), 1) for a in ins] + [(L(a.key), -1) for a in outs], "=", 0, "eq12")
        model.add(f"relay_once.{nn}", [(L(a.key), 1) for a in ins], "<=", 1, "eq12")
        sc = g.sc_arc(node)
        cs = g.get((VCOM, node))
        x_left = [(X(a.key), 1) for a in ins] + ([(X(cs.key), 1)] if cs else [])
        x_right = [(X(a.key), -1) for a in outs] + ([(X(sc.key), -1)] if sc else [])
        model.add(f"relay_x.{nn}", x_left + x_right, "=", 0, "eq13")
        if sc is None:
            continue
        sc_arcs.append(sc)
        z = [(X(a.key), 1) for a in ins]
        # compress everything that reached the node, or nothing
        model.add(f"zip_lo.{nn}", [(X(sc.key), 1)] + [(i, -c) for i, c in z], "<=", 0, "eq20")
        model.add(f"zip_hi.{nn}", z + [(X(sc.key), -1), (L(sc.key), M)], "<=", M, "eq20")
        model.add(f"zip_out.{nn}", [(X(cs.key), q), (X(sc.key), -p)], "=", 0, "eq15")
        model.add(f"zip_lam.{nn}", [(L(cs.key), 1), (L(sc.key), -1)], "=", 0, "eq15")
    if sc_arcs:
        ca = g.arc(VCOM, VABS)
        model.add(f"zip_loss.{fu}", [(X(ca.key), q)] + [(X(a.key), -(q - p)) for a in sc_arcs], "=", 0, "eq15")
        model.add(f"zip_once.{fu}", [(L(a.key), 1) for a in sc_arcs], "<=", 1, "eq16")

    model.add(f"arrival.{fu}", [(model.arr_var[f.id], 1)] + [(L(a.key), -(a.slot + 1)) for a in sg], "=", -1, "eq21")

    if model.timeliness:
        Mt = model.m_time
        for a in sg:
            s, lam, t = model.sg_var[(f.id, a.key)], L(a.key), a.slot
            n = f"{fu}.{_tok(a.tail)}.{_tok(a.head)}"
            model.add(f"due_a.{n}", [(s, Mt), (lam, -(t - Mt))], "<=", 2 * Mt - f.t_start, "eq23")
            model.add(f"due_b.{n}", [(s, Mt), (lam, -(Mt - t))], "<=", f.t_end, "eq23")
            model.add(f"due_c.{n}", [(s, -Mt), (lam, Mt - t)], "<=", Mt - 1 - f.t_end, "eq23")


def timely_values(t: int, t_start: int, t_end: int, m_time: int, lam: int = 1) -> list[int]:
    """Indicator values allowed by the (scaled) timeliness couplings for one Sg arc."""
    M = m_time
    ok = []
    for s in (0, 1):
        if M * s - (t - M) * lam <= 2 * M - t_start and M * s - (M - t) * lam <= t_end \
                and -M * s + (M - t) * lam <= M - 1 - t_end:
            ok.append(s)
    return ok


# --- LP file format -----------------------------------------------------------

def _num(c) -> str:
    c = Fraction(c)
    if c.denominator == 1:
        return str(c.numerator)
    return repr(float(c))


def _terms(coeffs: dict, names) -> list[str]:
    out = []
    for i in sorted(coeffs):
        c = coeffs[i]
        sign = "-" if c < 0 else "+"
        mag = abs(c)
        out.append(f"{sign} {names[i]}" if mag == 1 else f"{sign} {_num(mag)} {names[i]}")
    return out


def _wrap(head: str, parts: list[str], tail: str, width: int = 200) -> list[str]:
    lines, cur = [], head
    for p in parts + ([tail] if tail else []):
        if len(cur) + len(p) + 1 > width and cur.strip():
            lines.append(cur)
            cur = "   "
        cur += " " + p
    lines.append(cur)
    return lines


def export_lp(model: MilpModel) -> str:
    names = [v.name for v in model.variables]
    lines = ["\\ MILP export: minimise minus the number of timely deliveries" if model.timeliness
             else "\\ MILP export: routing subproblem", "Minimize"]
    obj = _terms(model.objective, names)
    if model.constant:
        obj.append(("- " if model.constant < 0 else "+ ") + _num(abs(model.constant)))
    lines += _wrap(" obj:", obj or ["0"], "")
    lines.append("Subject To")
    for c in model.constraints:
        # an empty row still needs a variable to be valid syntax
        parts = _terms(c.coeffs, names) or [f"0 {names[0]}"]
        lines += _wrap(f" {c.name}:", parts, f"{c.sense} {_num(c.rhs)}")
    lines.append("Bounds")
    for v in model.variables:
        if v.vtype == "B" and v.ub == 1:
            continue
        if v.ub == 0 and v.lb == 0:
            lines.append(f" {v.name} = 0")
        elif v.ub is None:
            if v.lb != 0:
                lines.append(f" {v.name} >= {_num(v.lb)}")
        else:
            lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    bins = [v.name for v in model.variables if v.vtype == "B"]
    gens = [v.name for v in model.variables if v.vtype == "I"]
    if bins:
        lines.append("Binaries")
        lines += _wrap("", bins, "")
    if gens:
        lines.append("Generals")
        lines += _wrap("", gens, "")
    lines.append("End")
    return "\n".join(lines) + "\n"


@dataclass
class LpDocument:
    """What the reader recovers from an LP file; variables keyed by name."""
    objective: dict
    constant: Fraction
    constraints: dict  # name -> (coeffs by var name, sense, rhs)
    bounds: dict  # name -> (lb, ub)
    binaries: list
    generals: list


_SECTIONS = {"minimize": "obj", "minimise": "obj", "min": "obj", "subject to": "st", "st": "st",
             "s.t.": "st", "bounds": "bounds", "binaries": "bin", "binary": "bin", "bin": "bin",
             "generals": "gen", "general": "gen", "end": "end"}


def _parse_expr(tokens: list[str]) -> tuple[dict, Fraction]:
    coeffs: dict = {}
    const = Fraction(0)
    sign, coef = 1, None
    for tok in tokens:
        if tok in ("+", "-"):
            sign = -1 if tok == "-" else 1
            continue
        try:
            coef = Fraction(tok)
            continue
        except ValueError:
            pass
        c = sign * (coef if coef is not None else 1)
        coeffs[tok] = coeffs.get(tok, 0) + c
        sign, coef = 1, None
    if coef is not None:
        const += sign * coef
    return {k: v for k, v in coeffs.items() if v != 0}, const


def read_lp(text: str) -> LpDocument:
    section = None
    stmt: list[str] = []
    doc = LpDocument({}, Fraction(0), {}, {}, [], [])
    pending = []

    def flush_constraint(tokens):
        name, body = tokens[0], tokens[1:]
        for k, t in enumerate(body):
            if t in SENSES or t in ("=<", "=>"):
                sense = {"=<": "<=", "=>": ">="}.get(t, t)
                coeffs, const = _parse_expr(body[:k])
                rhs = Fraction(body[k + 1]) - const
                doc.constraints[name.rstrip(":")] = (coeffs, sense, rhs)
                return
        raise ValueError(f"constraint {name} has no sense")

    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].rstrip()
        if not line.strip():
            continue
        key = line.strip().lower()
        if not raw.startswith(" ") and key in _SECTIONS:
            if section == "obj" and pending:
                coeffs, const = _parse_expr(pending[1:] if pending[0].endswith(":") else pending)
                doc.objective, doc.constant = coeffs, const
            pending = []
            section = _SECTIONS[key]
            continue
        toks = line.replace(":", ": ").split()
        if section == "obj":
            pending += toks
        elif section == "st":
            if toks[0].endswith(":") and stmt and any(t in SENSES for t in stmt):
                flush_constraint(stmt)
                stmt = []
            stmt += toks
            if any(t in SENSES for t in stmt) and stmt[-1] not in SENSES:
                flush_constraint(stmt)
                stmt = []
        elif section == "bounds":
            if len(toks) == 3 and toks[1] == "=":
                doc.bounds[toks[0]] = (Fraction(toks[2]), Fraction(toks[2]))
            elif len(toks) == 3 and toks[1] == ">=":
                doc.bounds[toks[0]] = (Fraction(toks[2]), None)
            elif len(toks) == 5:
                doc.bounds[toks[2]] = (Fraction(toks[0]), Fraction(toks[4]))
            else:
                raise ValueError(f"unsupported bound line: {line.strip()}")
        elif section == "bin":
            doc.binaries += toks
        elif section == "gen":
            doc.generals += toks
    if stmt:
        flush_constraint(stmt)
    return doc


def lp_matrix(model: MilpModel) -> dict:
    """Constraint rows keyed by name, in the same shape the reader produces."""
    names = [v.name for v in model.variables]
    return {c.name: ({names[i]: Fraction(v) for i, v in c.coeffs.items()}, c.sense, Fraction(c.rhs))
            for c in model.constraints}
