"""Lagrangian scheduler: per-slot allocator, feasibility repair, local search
and the subgradient driver that ties them together.

Multipliers, steps and bounds are exact rationals so the lower bounds the
driver calls certified really are lower bounds.
"""
from __future__ import annotations

import csv
import heapq
import io
import logging
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from .exact import DEFAULT_BUDGET, UNSOLVED, PathOracle, branch_and_bound, independent_bound
from .graph import GND, LEO, OBS, OS, SG, SS, STORE, VABS, VCOM, Arc, MdrTeg, Node
from .model import Assignment, Flow, finalize, timeliness_index
from .milp import timely_values

log = logging.getLogger(__name__)

TRACE_HEADER = ["iter", "ub", "lb", "certified", "gap_pct", "beta", "step_norm", "reason"]
GRID = 2 ** 24  # multipliers live on this dyadic grid (rounded down after projection)

EXACT, HEURISTIC = "exact", "heuristic"


def default_m_time(graph: MdrTeg, flows: Sequence[Flow] = ()) -> int:
    return 2 * graph.K + 1


# --- multipliers and the Lagrangian ------------------------------------------

def multiplier_index(graph: MdrTeg, flows: Sequence[Flow]) -> list[tuple[str, tuple]]:
    """(flow id, Sg arc key) pairs the timeliness couplings are written for."""
    return [(f.id, a.key) for f in sorted(flows, key=lambda f: f.id) for a in timeliness_index(graph, f)]


@dataclass
class Multipliers:
    mu1: dict = field(default_factory=dict)
    mu2: dict = field(default_factory=dict)
    mu3: dict = field(default_factory=dict)

    @classmethod
    def constant(cls, index: Iterable, value=1) -> "Multipliers":
        """Every entry set to ``value``, or to ``value[i]`` in family i when a triple is given."""
        vals = [Fraction(v) for v in value] if isinstance(value, (tuple, list)) else [Fraction(value)] * 3
        if len(vals) != 3:
            raise ValueError("need one value or one per family")
        idx = list(index)
        return cls(*({k: v for k in idx} for v in vals))

    def families(self):
        return (self.mu1, self.mu2, self.mu3)

    def p1_coef(self, k) -> Fraction:
        return self.mu1.get(k, 0) - self.mu2.get(k, 0) + self.mu3.get(k, 0)

    def p2_coef(self, k) -> Fraction:
        return -1 + self.mu1.get(k, 0) + self.mu2.get(k, 0) - self.mu3.get(k, 0)

    def copy(self) -> "Multipliers":
        return Multipliers(dict(self.mu1), dict(self.mu2), dict(self.mu3))

    def nonnegative(self) -> bool:
        return all(v >= 0 for fam in self.families() for v in fam.values())


def g_values(t: int, t_start: int, t_end: int, lam, lam_sg, M: int) -> tuple[Fraction, Fraction, Fraction]:
    """The three relaxed timeliness functions at one (flow, Sg arc) index.

    Each is an integer over M, built directly in that form.
    """
    lam, lam_sg = int(lam), int(lam_sg)
    g1 = Fraction(M * lam_sg - (t - M) * lam - (2 * M - t_start), M)
    g2 = Fraction(M * lam_sg - (M - t) * lam - t_end, M)
    g3 = Fraction(-M * lam_sg + (M - t) * lam + (t_end + 1 - M), M)
    return g1, g2, g3


def constant_term(mu: Multipliers, flows: Sequence[Flow], index, M: int) -> Fraction:
    by_id = {f.id: f for f in flows}
    total = Fraction(0)
    for k in index:
        f = by_id[k[0]]
        total += (mu.mu1.get(k, 0) * (f.t_start - 2 * M) - mu.mu2.get(k, 0) * f.t_end
                  + mu.mu3.get(k, 0) * (1 + f.t_end - M))
    return total / M


def lagrangian_value(graph: MdrTeg, flows: Sequence[Flow], a: Assignment, mu: Multipliers,
                     m_time: int | None = None) -> Fraction:
    M = m_time or default_m_time(graph, flows)
    by_id = {f.id: f for f in flows}
    total = Fraction(-sum(v for d in a.lam_sg.values() for v in d.values()))
    for k in multiplier_index(graph, flows):
        fid, key = k
        f = by_id[fid]
        g1, g2, g3 = g_values(key[0].slot, f.t_start, f.t_end, a.lam.get(fid, {}).get(key, 0),
                              a.lam_sg.get(fid, {}).get(key, 0), M)
        total += mu.mu1.get(k, 0) * g1 + mu.mu2.get(k, 0) * g2 + mu.mu3.get(k, 0) * g3
    return total


def solve_p2(mu: Multipliers, index: Iterable | None = None) -> tuple[dict, Fraction]:
    """Closed-form timeliness subproblem; a zero coefficient leaves the indicator at 0."""
    keys = list(index) if index is not None else sorted(set(mu.mu1) | set(mu.mu2) | set(mu.mu3),
                                                         key=lambda k: (k[0], str(k[1][0]), str(k[1][1])))
    choice, value = {}, Fraction(0)
    for k in keys:
        c = mu.p2_coef(k)
        choice[k] = 1 if c < 0 else 0
        if c < 0:
            value += c
    return choice, value


# --- scheduler state ---------------------------------------------------------

@dataclass
class SchedulerState:
    f_pending: set = field(default_factory=set)
    f_suc: set = field(default_factory=set)
    f_un: set = field(default_factory=set)
    f_fail: set = field(default_factory=set)
    flag: dict = field(default_factory=dict)
    window: dict = field(default_factory=dict)
    reach: dict = field(default_factory=dict)
    alloc: dict = field(default_factory=dict)   # flow id -> [(arc, bits), ...]
    compressions: int = 0

    def partition_ok(self, flows: Sequence[Flow]) -> bool:
        sets = (self.f_pending, self.f_suc, self.f_un, self.f_fail)
        ids = {f.id for f in flows}
        union = set().union(*sets)
        return union == ids and sum(len(s) for s in sets) == len(ids)

    def copy(self) -> "SchedulerState":
        return SchedulerState(set(self.f_pending), set(self.f_suc), set(self.f_un), set(self.f_fail),
                              dict(self.flag), dict(self.window), dict(self.reach),
                              {k: list(v) for k, v in self.alloc.items()}, self.compressions)


def reach_range(n_real: int, t_window: int, t_start: int) -> int:
    return (n_real * (t_window - t_start + 1)) ** 2


def release_flow(graph: MdrTeg, a: Assignment, state: SchedulerState, fid: str):
    for arc, amt in reversed(state.alloc.pop(fid, [])):
        graph.release(arc, amt)
    a.drop(fid)


def visited(state: SchedulerState, fid: str) -> set:
    """Real node copies the flow already occupies."""
    out = set()
    for arc, _ in state.alloc.get(fid, ()):
        if arc.kind in (OS, SS, SG, STORE):
            out.update(arc.key)
    return out


def _allocate(graph: MdrTeg, a: Assignment, state: SchedulerState, fid: str, arc: Arc, amount: int):
    graph.consume(arc, amount)
    state.alloc.setdefault(fid, []).append((arc, amount))
    a.add(fid, arc.key, amount)


def shortest_path(graph: MdrTeg, flow: Flow, src: Node, volume: int, t_end: int,
                  avoid: frozenset | set = frozenset()) -> list[Arc] | None:
    """Dijkstra on 1/residual over arcs able to carry ``volume``, slots <= t_end.

    Ties go to the lexicographically smallest node. Returns the arc list to the
    first acceptable ground copy reached, or None.
    """
    dist = {src: 0.0}
    prev: dict[Node, Arc] = {}
    heap = [(0.0, src)]
    done = set(avoid) - {src}
    route_out = graph.route_out
    source = flow.source
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node.kind == GND:
            path = []
            while node != src:
                arc = prev[node]
                path.append(arc)
                node = arc.tail
            return path[::-1]
        for arc in route_out[node]:
            head = arc.head
            if head.slot > t_end or arc.residual < volume or head in done:
                continue
            if arc.tail.kind == OBS and arc.tail.pid != source:
                continue
            if arc.kind == SG and not flow.accepts(head):
                continue
            # routing arcs are bounded and residual >= volume > 0 here
            nd = d + 1.0 / arc.residual
            old = dist.get(head)
            if old is None or nd < old or (nd == old and arc.tail < prev[head].tail):
                dist[head] = nd
                prev[head] = arc
                heapq.heappush(heap, (nd, head))
    return None


def window_arcs(graph: MdrTeg, flow: Flow) -> list[Arc]:
    return [a for a in timeliness_index(graph, flow) if flow.on_time(a.slot)]


def prefiltered(graph: MdrTeg, flow: Flow, mu: Multipliers) -> bool:
    """True when every in-window ground arc of the flow has a nonnegative path price."""
    cands = window_arcs(graph, flow)
    return bool(cands) and all(mu.p1_coef((flow.id, a.key)) >= 0 for a in cands)


def esa(graph: MdrTeg, flows: Sequence[Flow], mu: Multipliers | None = None, *,
        compression: bool = True, priority: Mapping[str, int] | None = None,
        assignment: Assignment | None = None,
        skip: frozenset | None = None) -> tuple[Assignment, SchedulerState]:
    """Per-slot allocator.

    Flows are served in (current slot, priority, deadline, volume, id) order. A
    served flow either compresses at the first capable relay of its shortest
    path (and re-plans from there), reaches the ground inside the slot, or
    advances one slot keeping only the in-slot prefix of its path. ``skip``
    is the precomputed set of prefiltered flows for ``mu``.
    """
    a = assignment if assignment is not None else Assignment()
    state = SchedulerState()
    priority = priority or {}
    by_id = {f.id: f for f in flows}
    heap = []
    for f in sorted(flows, key=lambda f: f.id):
        state.flag[f.id] = 0 if compression else 1
        if mu is not None and (f.id in skip if skip is not None else prefiltered(graph, f, mu)):
            state.f_fail.add(f.id)
            continue
        state.f_pending.add(f.id)
        state.window[f.id] = f.t_start
        state.reach[f.id] = reach_range(graph.n_real, f.t_start, f.t_start)
        node = Node(OBS, f.source, f.t_start)
        heapq.heappush(heap, (f.t_start, priority.get(f.id, 0), f.t_end, f.volume, f.id, node, f.volume))

    while heap:
        t, _, _, _, fid, node, volume = heapq.heappop(heap)
        f = by_id[fid]
        while True:
            t_win = max(state.window[fid], t)
            path = None
            while t_win <= f.t_end:
                path = shortest_path(graph, f, node, volume, t_win, visited(state, fid))
                if path is not None:
                    break
                t_win += 1
                if t_win <= f.t_end:
                    state.reach[fid] = reach_range(graph.n_real, t_win, f.t_start)
            state.window[fid] = min(t_win, f.t_end)
            if path is None:
                release_flow(graph, a, state, fid)
                state.f_pending.discard(fid)
                state.f_un.add(fid)
                break
            relay = None
            if state.flag[fid] == 0:
                for n in [node] + [arc.head for arc in path]:
                    if n.slot != t:
                        break
                    if n.kind == LEO:
                        sc = graph.sc_arc(n)
                        if sc is not None and sc.residual >= volume:
                            relay = n
                            break
            if relay is not None:
                for arc in path:
                    if arc.tail == relay:
                        break
                    _allocate(graph, a, state, fid, arc, volume)
                small = int(volume * f.theta)
                _allocate(graph, a, state, fid, graph.sc_arc(relay), volume)
                _allocate(graph, a, state, fid, graph.arc(VCOM, relay), small)
                _allocate(graph, a, state, fid, graph.arc(VCOM, VABS), volume - small)
                state.flag[fid] = 1
                state.compressions += 1
                node, volume = relay, small
                continue
            # keep the in-slot prefix (and the storage hop out of the slot)
            reached = False
            for arc in path:
                _allocate(graph, a, state, fid, arc, volume)
                node = arc.head
                if arc.kind == SG:
                    reached = True
                    break
                if arc.kind == STORE:
                    break
            if reached:
                state.f_pending.discard(fid)
                state.f_suc.add(fid)
            else:
                heapq.heappush(heap, (node.slot, priority.get(fid, 0), f.t_end, volume, fid, node, volume))
            break
    finalize(a, flows)
    return a, state


def fsc(graph: MdrTeg, flows: Sequence[Flow], a: Assignment, state: SchedulerState,
        mu: Multipliers | None = None, m_time: int | None = None) -> int:
    """Feasibility repair; returns the number of timely deliveries kept."""
    M = m_time or default_m_time(graph, flows)
    by_id = {f.id: f for f in flows}
    finalize(a, flows)
    for fid in sorted(state.f_suc):
        f = by_id[fid]
        t = a.arrival.get(fid, -1)
        ok = t != -1 and 1 in timely_values(t, f.t_start, f.t_end, M)
        if not ok:
            release_flow(graph, a, state, fid)
            state.f_suc.discard(fid)
            state.f_un.add(fid)
            continue
        if mu is not None:
            key = next(iter(a.lam_sg[fid]))
            if mu.p2_coef((fid, key)) >= 0:
                release_flow(graph, a, state, fid)
                state.f_suc.discard(fid)
                state.f_fail.add(fid)
    finalize(a, flows)
    return len(state.f_suc)


def lsa(graph: MdrTeg, flows: Sequence[Flow], a: Assignment, state: SchedulerState, sum_u: int,
        mu: Multipliers | None = None, *, compression: bool = True,
        m_time: int | None = None, skip: frozenset | None = None) -> tuple[Assignment, SchedulerState, int]:
    """Reorder-and-reschedule trials, one per stranded flow; keeps the best."""
    by_id = {f.id: f for f in flows}
    trials = sorted(state.f_un, key=lambda fid: (by_id[fid].t_end, fid))
    best = (a, state, sum_u, graph.residuals())
    for fid in trials:
        graph.reset()
        ta, ts = esa(graph, flows, mu, compression=compression, priority={fid: -1}, skip=skip)
        s = fsc(graph, flows, ta, ts, mu, m_time)
        if s > best[2]:
            best = (ta, ts, s, graph.residuals())
    graph.restore(best[3])
    return best[0], best[1], best[2]


# --- dual side -----------------------------------------------------------------

@dataclass
class DualResult:
    value: Fraction
    certified: bool
    lam: dict          # index -> 0/1 from the routing subproblem
    lam_sg: dict       # index -> 0/1 from the closed form
    status: str = "ok"


def p1_cost(mu: Multipliers, M: int):
    def cost(f: Flow, arc: Arc):
        c = mu.p1_coef((f.id, arc.key))
        return c * Fraction(M - arc.slot, M)
    return cost


def p1_value(mu: Multipliers, lam: Mapping, M: int) -> Fraction:
    return sum((mu.p1_coef(k) * Fraction(M - k[1][0].slot, M) for k, v in lam.items() if v), Fraction(0))


P1_BUDGET = 20_000


def dual_value(graph: MdrTeg, flows: Sequence[Flow], mu: Multipliers, mode: str = EXACT, *,
               oracle: PathOracle | None = None, m_time: int | None = None,
               budget: int = P1_BUDGET, heuristic_lam: Mapping | None = None,
               deadline: float | None = None, index: Sequence | None = None) -> DualResult:
    """d(mu) = min P1 + min P2 + constant.

    Exact mode solves P1 by branch-and-bound. If the search outgrows ``budget``
    the routing subproblem is relaxed to independent per-flow choices, which is
    still a valid lower bound (status ``relaxed``). Heuristic mode, or an
    overflow of path enumeration, prices a given routing instead
    (``heuristic_lam``) and is flagged uncertified.
    """
    M = m_time or default_m_time(graph, flows)
    index = multiplier_index(graph, flows) if index is None else index
    lam_sg, p2 = solve_p2(mu, index)
    const = constant_term(mu, flows, index, M)
    if mode == EXACT:
        oracle = oracle or PathOracle(graph, flows)
        cost = p1_cost(mu, M)
        res = branch_and_bound(graph, oracle, cost, budget, deadline)
        choice, status = res.choice, "ok"
        if not res.solved and res.enumerated:
            p1, choice = independent_bound(graph, oracle, cost)
            status = "relaxed"
        if res.solved or res.enumerated:
            lam = {k: 0 for k in index}
            for fid, p in choice.items():
                lam[(fid, graph.arcs[p.arrival].key)] = 1
            value = (res.value if res.solved else p1) + p2 + const
            return DualResult(value, True, lam, lam_sg, status)
        status = res.status
    elif mode == HEURISTIC:
        status = "ok"
    else:
        raise ValueError(f"unknown dual mode {mode!r}")
    lam = {k: 0 for k in index}
    for k, v in (heuristic_lam or {}).items():
        if k in lam:
            lam[k] = v
    p1 = p1_value(mu, lam, M)
    if p1 > 0:
        lam, p1 = {k: 0 for k in index}, Fraction(0)
    return DualResult(p1 + p2 + const, False, lam, lam_sg, status)


def routing_indicators(graph: MdrTeg, flows: Sequence[Flow], a: Assignment) -> dict:
    """Indicator of each (flow, Sg arc) index in an assignment."""
    out = {}
    for k in multiplier_index(graph, flows):
        out[k] = 1 if a.lam.get(k[0], {}).get(k[1], 0) else 0
    return out


def subgradient(graph: MdrTeg, flows: Sequence[Flow], lam: Mapping, lam_sg: Mapping, M: int,
                index: Sequence | None = None):
    by_id = {f.id: f for f in flows}
    grads = ({}, {}, {})
    for k in (multiplier_index(graph, flows) if index is None else index):
        f = by_id[k[0]]
        gs = g_values(k[1][0].slot, f.t_start, f.t_end, lam.get(k, 0), lam_sg.get(k, 0), M)
        for fam, g in zip(grads, gs):
            fam[k] = g
    return grads


def norm_sq(grad: Mapping, M: int) -> Fraction:
    """Squared norm of one subgradient family; every entry is an integer over M."""
    return Fraction(sum((v.numerator * (M // v.denominator)) ** 2 for v in grad.values()), M * M)


def project(value: Fraction) -> Fraction:
    """Nonnegative part, rounded down to the multiplier grid."""
    if value <= 0:
        return Fraction(0)
    return Fraction(math.floor(value * GRID), GRID)


def step_size(beta, ub, lb, norm_sq):
    return Fraction(beta) * (Fraction(ub) - Fraction(lb)) / Fraction(norm_sq)


# --- driver --------------------------------------------------------------------

@dataclass
class SrccConfig:
    epsilon: float = 0.0
    n_max: int = 100
    beta: Fraction = Fraction(1)
    beta_halve_after: int = 3
    min_step: Fraction = Fraction(1, 100)
    dual_mode: str = EXACT
    exact_budget: int = P1_BUDGET
    max_paths: int = 200_000
    m_time: int | None = None
    initial_mu: Fraction | tuple = Fraction(1)
    use_lsa: bool = True
    warm_start: bool = False
    beta_min: Fraction = Fraction(1, 2 ** 30)
    time_limit: float | None = None     # seconds; checked between iterations and inside the exact dual

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if not 1 <= self.beta < 2:
            raise ValueError("beta must lie in [1, 2)")
        self.beta = Fraction(self.beta)
        self.min_step = Fraction(self.min_step)
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if self.dual_mode not in (EXACT, HEURISTIC):
            raise ValueError(f"unknown dual mode {self.dual_mode!r}")


@dataclass
class TraceRow:
    iter: int
    ub: Fraction
    lb: Fraction
    certified: bool
    gap_pct: float
    beta: Fraction
    step_norm: float
    reason: str
    d_mu: Fraction = Fraction(0)
    d_certified: bool = False
    sum_u: int = 0
    f_suc: int = 0
    f_un: int = 0
    f_fail: int = 0


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else repr(float(v))
    if isinstance(v, float):
        return "inf" if v == math.inf else ("-inf" if v == -math.inf else repr(round(v, 9)))
    return str(v)


@dataclass
class Bounds:
    ub: object = math.inf
    lb: object = -math.inf
    lb_certified: object = -math.inf
    certified: bool = False
    trace: list = field(default_factory=list)
    reason: str = ""

    @property
    def gap(self) -> float:
        return gap_pct(self.ub, self.lb)

    @property
    def raw_gap(self) -> float:
        if self.ub in (0, math.inf) or self.lb == -math.inf:
            return math.inf
        return float((Fraction(self.ub) - Fraction(self.lb)) / Fraction(self.ub) * 100)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in self.trace:
            w.writerow([_fmt(getattr(r, h)) for h in TRACE_HEADER])
        return buf.getvalue()


def gap_pct(ub, lb) -> float:
    if ub == math.inf or lb == -math.inf:
        return math.inf
    return float((Fraction(ub) - Fraction(lb)) / max(abs(Fraction(ub)), 1) * 100)


@dataclass
class SrccResult:
    assignment: Assignment
    bounds: Bounds
    state: SchedulerState
    multipliers: Multipliers
    iterations: int
    status: str = "ok"

    @property
    def success(self) -> int:
        return len(self.assignment.delivered())


def apply_assignment(graph: MdrTeg, a: Assignment):
    """Consume the capacities an assignment uses on a fresh graph."""
    graph.reset()
    for fid in sorted(a.x):
        for key, amt in a.x[fid].items():
            if amt:
                graph.consume(graph.get(key), amt)


Primal = Callable[[MdrTeg, Sequence[Flow], Multipliers, int], tuple]


def primal_signature(graph: MdrTeg, flows: Sequence[Flow], mu: Multipliers, index) -> tuple:
    """Everything the allocate/repair/search passes read from the multipliers.

    The passes only look at which flows are prefiltered and at the sign of each
    timeliness coefficient, so equal signatures give identical results.
    """
    pre = frozenset(f.id for f in flows if prefiltered(graph, f, mu))
    drop = frozenset(k for k in index if mu.p2_coef(k) >= 0)
    return pre, drop


def srcc_primal(use_lsa: bool = True) -> Primal:
    """Allocate, repair and (optionally) locally improve under the given multipliers.

    Results are memoised on :func:`primal_signature`.
    """
    cache: dict = {}
    index: list = []

    def primal(graph, flows, mu, M):
        if not index:
            index.extend(multiplier_index(graph, flows))
        pre, drop = primal_signature(graph, flows, mu, index)
        sig = (M, pre, drop)
        if sig not in cache:
            graph.reset()
            a, state = esa(graph, flows, mu, skip=pre)
            relaxed = routing_indicators(graph, flows, a)
            sum_u = fsc(graph, flows, a, state, mu, M)
            if use_lsa:
                a, state, sum_u = lsa(graph, flows, a, state, sum_u, mu, m_time=M, skip=pre)
            cache[sig] = (a, state, sum_u, relaxed, graph.residuals())
        a, state, sum_u, relaxed, residuals = cache[sig]
        graph.restore(residuals)
        return a.copy(), state.copy(), sum_u, dict(relaxed)
    return primal


def srcc(graph: MdrTeg, flows: Sequence[Flow], cfg: SrccConfig | None = None, *,
         oracle: PathOracle | None = None,
         on_iteration: Callable[[TraceRow, Assignment], None] | None = None) -> SrccResult:
    """Subgradient loop around allocate / repair / local search.

    ``on_iteration`` sees every trace row together with that iteration's repaired
    assignment, which is how callers check per-iteration bound ordering.
    """
    cfg = cfg or SrccConfig()
    warm = None
    if cfg.warm_start:
        M = cfg.m_time or default_m_time(graph, flows)
        graph.reset()
        a0, s0 = esa(graph, flows, None)
        sum0 = fsc(graph, flows, a0, s0, None, M)
        if cfg.use_lsa:
            a0, s0, sum0 = lsa(graph, flows, a0, s0, sum0, None, m_time=M)
        warm = (a0, s0, sum0)
    return drive(graph, flows, cfg, srcc_primal(cfg.use_lsa), oracle=oracle,
                 on_iteration=on_iteration, warm=warm)


def drive(graph: MdrTeg, flows: Sequence[Flow], cfg: SrccConfig, primal: Primal, *,
          oracle: PathOracle | None = None,
          on_iteration: Callable[[TraceRow, Assignment], None] | None = None,
          warm: tuple | None = None) -> SrccResult:
    """The subgradient iteration shared by the scheduler and the exhaustive baseline."""
    flows = list(flows)
    M = cfg.m_time or default_m_time(graph, flows)
    index = multiplier_index(graph, flows)
    mu = Multipliers.constant(index, cfg.initial_mu)
    bounds = Bounds()
    mode = cfg.dual_mode
    if mode == EXACT and oracle is None:
        oracle = PathOracle(graph, flows, cfg.max_paths)
    beta = cfg.beta
    stall = 0
    best_a = finalize(Assignment(), flows)
    best_state = SchedulerState(f_un={f.id for f in flows})
    best_mu = mu.copy()
    status = "ok"
    if warm is not None:
        bounds.ub = -warm[2]
        best_a, best_state = warm[0].copy(), warm[1].copy()

    deadline = None if cfg.time_limit is None else time.monotonic() + cfg.time_limit
    n = 0
    reason = "n_max"
    for n in range(1, cfg.n_max + 1):
        if n > 1 and deadline is not None and time.monotonic() > deadline:
            status, reason = "time limit", "time_limit"
            if bounds.trace:
                bounds.trace[-1].reason = reason
            break
        a, state, sum_u, relaxed_lam = primal(graph, flows, mu, M)
        if a is None:
            status, reason = UNSOLVED, "budget"
            break
        if -sum_u < bounds.ub:
            bounds.ub = -sum_u
            best_a, best_state, best_mu = a.copy(), state.copy(), mu.copy()
            stall = 0
        else:
            stall += 1
            if stall >= cfg.beta_halve_after:
                beta /= 2
                stall = 0

        dual = dual_value(graph, flows, mu, mode, oracle=oracle, m_time=M, budget=cfg.exact_budget,
                          heuristic_lam=relaxed_lam, deadline=deadline, index=index)
        if mode == EXACT and not dual.certified:
            log.info("exact dual over budget at iteration %d; continuing heuristically", n)
            mode = HEURISTIC
        if dual.certified:
            bounds.lb_certified = max(bounds.lb_certified, dual.value)
            bounds.certified = True
        bounds.lb = bounds.lb_certified if bounds.certified else max(bounds.lb, dual.value)
        if bounds.certified and bounds.lb > bounds.ub:
            raise AssertionError("certified lower bound above a feasible value")

        row = TraceRow(n, bounds.ub, bounds.lb, bounds.certified, bounds.gap, beta, 0.0, "",
                       dual.value, dual.certified, sum_u, len(state.f_suc), len(state.f_un), len(state.f_fail))
        bounds.trace.append(row)
        if on_iteration is not None:
            on_iteration(row, a)

        stop = None
        if bounds.gap <= cfg.epsilon:
            stop = "gap"
        elif beta < cfg.beta_min:
            stop = "beta"
        else:
            grads = subgradient(graph, flows, dual.lam, dual.lam_sg, M, index)
            norms = [norm_sq(fam, M) for fam in grads]
            diff = Fraction(bounds.ub) - Fraction(bounds.lb)
            if all(ns == 0 for ns in norms):
                stop = "zero_subgradient"
            elif diff <= 0:
                stop = "gap"
            else:
                # step length alpha*|grad| = beta*diff/|grad| per family
                longest_sq = max((beta * diff) ** 2 / ns for ns in norms if ns)
                row.step_norm = math.sqrt(float(longest_sq))
                if longest_sq < cfg.min_step ** 2:
                    stop = "min_step"
                else:
                    for fam_mu, fam_g, ns in zip(mu.families(), grads, norms):
                        if not ns:
                            continue
                        alpha = step_size(beta, bounds.ub, bounds.lb, ns)
                        for k in index:
                            fam_mu[k] = project(fam_mu.get(k, 0) + alpha * fam_g[k])
        if stop:
            row.reason = stop
            reason = stop
            break
    else:
        if bounds.trace:
            bounds.trace[-1].reason = "n_max"
    bounds.reason = reason
    apply_assignment(graph, best_a)
    finalize(best_a, flows)
    return SrccResult(best_a, bounds, best_state, best_mu, n, status)
