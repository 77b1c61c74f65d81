"""Exact small-scale oracle: path enumeration plus branch-and-bound.

A flow's routing is a simple path in the time-expanded graph from its source
copy at the release slot to an acceptable ground copy, optionally with one
compression detour through the virtual compute node. Every feasible integral
assignment decomposes this way, so choosing one path (or none) per flow under
shared residual capacities is an exact search.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .graph import CA, LEO, OBS, OS, SG, SS, STORE, VABS, VCOM, Arc, MdrTeg, Node
from .model import Assignment, Flow, finalize

DEFAULT_BUDGET = 2_000_000
OPTIMAL = "optimal"
UNSOLVED = "unsolved within budget"


class BudgetExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class PathOption:
    flow: str
    arrival: int                 # index of the Sg arc used
    usage: tuple                 # ((arc index, bits), ...) for every arc, path order
    bounded: tuple               # same, restricted to capacity-limited arcs
    compress_at: Node | None

    def fits(self, residual: Sequence) -> bool:
        return all(residual[i] >= amt for i, amt in self.bounded)


class PathOracle:
    """Enumerates and caches the distinct routing options of each flow."""

    def __init__(self, graph: MdrTeg, flows: Sequence[Flow], max_paths: int = 200_000):
        self.graph = graph
        self.flows = sorted(flows, key=lambda f: f.id)
        self.max_paths = max_paths
        self._cache: dict[str, list[PathOption]] = {}

    def options(self, flow: Flow) -> list[PathOption]:
        if flow.id not in self._cache:
            self._cache[flow.id] = self._enumerate(flow)
        return self._cache[flow.id]

    def _enumerate(self, flow: Flow) -> list[PathOption]:
        g = self.graph
        start = Node(OBS, flow.source, flow.t_start)
        found: list[PathOption] = []
        count = [0]
        ca = g.get((VCOM, VABS))

        def emit(usage, compress_at, sg_arc):
            count[0] += 1
            if count[0] > self.max_paths:
                raise BudgetExceeded(f"flow {flow.id}: more than {self.max_paths} paths")
            usage = tuple(usage)
            bounded = tuple((i, amt) for i, amt in usage if g.arcs[i].bounded)
            found.append(PathOption(flow.id, sg_arc.index, usage, bounded, compress_at))

        def walk(node, volume, compress_at, visited, usage):
            if node.kind == LEO and compress_at is None:
                sc = g.sc_arc(node)
                if sc is not None and sc.capacity >= volume:
                    small = int(volume * flow.theta)
                    extra = [(sc.index, volume), (g.arc(VCOM, node).index, small),
                             (ca.index, volume - small)]
                    moves(node, small, node, visited, usage + extra)
            moves(node, volume, compress_at, visited, usage)

        def moves(node, volume, compress_at, visited, usage):
            for arc in g.out_arcs[node]:
                if arc.kind not in (OS, SS, SG, STORE) or arc.capacity < volume:
                    continue
                head = arc.head
                if head in visited:
                    continue
                if arc.kind == SG:
                    if flow.accepts(head):
                        emit(usage + [(arc.index, volume)], compress_at, arc)
                    continue
                visited.add(head)
                walk(head, volume, compress_at, visited, usage + [(arc.index, volume)])
                visited.discard(head)

        walk(start, flow.volume, None, {start}, [])
        return _distinct(found)


def _distinct(found: list[PathOption]) -> list[PathOption]:
    """Drop options whose arrival and capacity use repeat an earlier one."""
    seen, out = set(), []
    for p in found:
        key = (p.arrival, tuple(sorted(p.bounded)))
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


@dataclass
class ExactResult:
    status: str
    value: object                      # optimal objective (sum of chosen path costs)
    assignment: Assignment | None
    choice: dict                       # flow id -> PathOption
    nodes: int
    enumerated: bool = True            # False when path enumeration itself overflowed

    @property
    def solved(self) -> bool:
        return self.status == OPTIMAL


def _components(opts: list) -> list[list[int]]:
    parent = list(range(len(opts)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i
    owner: dict[int, int] = {}
    for i, lst in enumerate(opts):
        for _, _, p in lst:
            for idx, _ in p.bounded:
                j = owner.setdefault(idx, i)
                parent[find(i)] = find(j)
    groups: dict[int, list[int]] = {}
    for i in range(len(opts)):
        groups.setdefault(find(i), []).append(i)
    # fewest options first keeps the tree narrow near the root
    return [sorted(groups[r], key=lambda i: (len(opts[i]), i)) for r in sorted(groups)]


def branch_and_bound(graph: MdrTeg, oracle: PathOracle,
                     cost: Callable[[Flow, Arc], object], budget: int = DEFAULT_BUDGET,
                     deadline: float | None = None) -> ExactResult:
    """Minimise the sum of path costs; unrouted flows cost 0.

    Only options of negative cost are ever worth taking, so the search space is
    one negative option or nothing per flow. Flows that share no capacity are
    solved separately; costs are scaled to integers for the search. Passing the
    ``time.monotonic()`` ``deadline`` counts as running out of budget.
    """
    flows = oracle.flows
    try:
        raw = []
        for f in flows:
            lst = []
            for k, p in enumerate(oracle.options(f)):
                c = cost(f, graph.arcs[p.arrival])
                if c is not None and c < 0:
                    lst.append((Fraction(c), k, p))
            raw.append(lst)
    except BudgetExceeded:
        return ExactResult(UNSOLVED, None, None, {}, 0, enumerated=False)

    den = 1
    for lst in raw:
        for c, _, _ in lst:
            den = den * c.denominator // math.gcd(den, c.denominator)
    opts = []
    for lst in raw:
        scaled = sorted(((int(c * den), k, p) for c, k, p in lst), key=lambda t: (t[0], t[1]))
        opts.append(scaled)

    residual = [a.capacity for a in graph.arcs]
    nodes = [0]
    total = 0
    choice: dict = {}
    try:
        for comp in _components(opts):
            val, picked = _search(comp, opts, residual, nodes, budget, deadline)
            total += val
            for i, p in picked.items():
                choice[flows[i].id] = p
    except BudgetExceeded:
        return ExactResult(UNSOLVED, None, None, {}, nodes[0])
    return ExactResult(OPTIMAL, Fraction(total, den), assignment_from(graph, flows, choice), choice, nodes[0])


def independent_bound(graph: MdrTeg, oracle: PathOracle, cost: Callable[[Flow, Arc], object]):
    """Each flow's cheapest option on its own: a lower bound that ignores sharing.

    Returns (value, {flow id: option}).
    """
    total, choice = Fraction(0), {}
    for f in oracle.flows:
        best = None
        for p in oracle.options(f):
            c = cost(f, graph.arcs[p.arrival])
            if c is not None and c < 0 and (best is None or c < best[0]):
                best = (Fraction(c), p)
        if best is not None:
            total += best[0]
            choice[f.id] = best[1]
    return total, choice


def _search(comp, opts, residual, nodes, budget, deadline=None):
    """Depth-first search over one component, flows in the given order.

    The bound adds, for every undecided flow, its cheapest option that still
    fits the current residuals. A first-fit pass seeds the incumbent. Finished
    subtrees leave a lower bound on their remaining value keyed by the residuals
    of the arcs later flows can touch, so equivalent states are searched once.
    """
    n = len(comp)
    best = [0, {}]
    chosen: dict = {}
    taken = []
    for i in comp:
        for c, _, p in opts[i]:
            if p.fits(residual):
                for idx, amt in p.bounded:
                    residual[idx] -= amt
                taken.append(p)
                best[0] += c
                best[1][i] = p
                break
    for p in taken:
        for idx, amt in p.bounded:
            residual[idx] += amt
    relevant = []
    for pos in range(n + 1):
        arcs = {idx for j in comp[pos:] for _, _, p in opts[j] for idx, _ in p.bounded}
        relevant.append(sorted(arcs))
    floor: dict = {}

    def bound_rest(pos):
        total = 0
        for j in comp[pos:]:
            for c, _, p in opts[j]:
                if p.fits(residual):
                    total += c
                    break
        return total

    def search(pos, cur):
        nodes[0] += 1
        if nodes[0] > budget:
            raise BudgetExceeded
        if deadline is not None and nodes[0] % 1024 == 0 and time.monotonic() > deadline:
            raise BudgetExceeded
        if pos == n:
            if cur < best[0]:
                best[0], best[1] = cur, dict(chosen)
            return
        key = (pos, tuple(residual[k] for k in relevant[pos]))
        known = floor.get(key)
        if known is not None and cur + known >= best[0]:
            return
        rest = bound_rest(pos + 1)
        i = comp[pos]
        for c, _, p in opts[i]:
            if cur + c + rest >= best[0]:
                break
            if not p.fits(residual):
                continue
            for idx, amt in p.bounded:
                residual[idx] -= amt
            chosen[i] = p
            search(pos + 1, cur + c)
            del chosen[i]
            for idx, amt in p.bounded:
                residual[idx] += amt
        if cur + rest < best[0]:
            search(pos + 1, cur)
        # nothing in this subtree beats best - cur
        floor[key] = max(best[0] - cur, known if known is not None else best[0] - cur)

    search(0, 0)
    return best[0], best[1]


def assignment_from(graph: MdrTeg, flows: Sequence[Flow], choice: Mapping[str, PathOption]) -> Assignment:
    a = Assignment()
    for fid in sorted(choice):
        for idx, amt in choice[fid].usage:
            a.add(fid, graph.arcs[idx].key, amt)
    return finalize(a, flows)


def _objective_costs(model):
    """Per (flow, Sg arc) path cost implied by a MILP objective."""
    from .milp import timely_values

    g = model.graph
    allowed = set()
    for (fid, key), i in model.lam_var.items():
        if g.get(key).kind == SG:
            allowed.add(i)
    allowed |= set(model.sg_var.values())
    stray = [model.variables[i].name for i, c in model.objective.items() if c and i not in allowed]
    if stray:
        raise ValueError(f"objective touches unsupported variables: {stray[:3]}")

    def cost(f: Flow, arc: Arc):
        c = Fraction(model.objective.get(model.lam_var[(f.id, arc.key)], 0))
        if model.timeliness:
            s = model.sg_var.get((f.id, arc.key))
            cs = Fraction(model.objective.get(s, 0)) if s is not None else 0
            vals = timely_values(arc.slot, f.t_start, f.t_end, model.m_time)
            if not vals:
                return None
            c += min(cs * v for v in vals)
        return c
    return cost


def exact_solve(model, budget: int = DEFAULT_BUDGET, oracle: PathOracle | None = None) -> ExactResult:
    """Certified optimum of a model built by :func:`tdisched.milp.build_milp`."""
    oracle = oracle or PathOracle(model.graph, model.flows)
    res = branch_and_bound(model.graph, oracle, _objective_costs(model), budget)
    if res.solved:
        res.value = res.value + model.constant
    return res


def op_cost(f: Flow, arc: Arc) -> int:
    """Path cost for the delivery objective: -1 when the arrival slot is timely."""
    return -1 if f.on_time(arc.slot) else 0


def optimum(graph: MdrTeg, flows: Sequence[Flow], budget: int = DEFAULT_BUDGET,
            oracle: PathOracle | None = None) -> ExactResult:
    """Maximum number of timely deliveries, as the minimisation value -count."""
    oracle = oracle or PathOracle(graph, flows)
    return branch_and_bound(graph, oracle, op_cost, budget)
