"""Comparison schedulers sharing the assignment and metrics contract."""
from __future__ import annotations

import enum
from typing import Sequence

from .exact import DEFAULT_BUDGET, PathOracle, optimum
from .graph import OBS, VABS, VCOM, MdrTeg, Node
from .model import Assignment, Flow, finalize
from .solver import (EXACT, SchedulerState, SrccConfig, SrccResult, _allocate, drive, esa, fsc,
                     routing_indicators, shortest_path)


class BaselineKind(enum.Enum):
    ESALR = "esalr"
    JA = "ja"
    CRPAA = "crpaa"


def esalr(graph: MdrTeg, flows: Sequence[Flow], budget: int = DEFAULT_BUDGET,
          cfg: SrccConfig | None = None, time_limit: float | None = None) -> SrccResult:
    """Subgradient loop whose primal step is an exhaustive search each iteration.

    The dual side is always solved exactly; an exhausted budget ends the run
    with status ``unsolved within budget``. ``time_limit`` stops the dual
    iterations early (status ``time limit``); the primal optimum found in the
    first iteration is kept.
    """
    cfg = cfg or SrccConfig(dual_mode=EXACT, exact_budget=budget, use_lsa=False, warm_start=False,
                            time_limit=time_limit)
    oracle = PathOracle(graph, flows, cfg.max_paths)

    def primal(g, fl, mu, M):
        res = optimum(g, fl, budget, oracle)
        if not res.solved:
            return None, None, None, None
        a = res.assignment
        state = SchedulerState(f_suc=set(a.delivered()))
        state.f_un = {f.id for f in fl} - state.f_suc
        return a, state, -res.value, routing_indicators(g, fl, a)

    return drive(graph, flows, cfg, primal, oracle=oracle)


def ja(graph_2d: MdrTeg, flows: Sequence[Flow]) -> tuple[Assignment, SchedulerState]:
    """Communication and storage only: the allocator with compression disabled."""
    graph_2d.reset()
    a, state = esa(graph_2d, flows, None, compression=False)
    fsc(graph_2d, flows, a, state, None)
    return a, state


def crpaa(graph: MdrTeg, flows: Sequence[Flow]) -> tuple[Assignment, SchedulerState]:
    """Plan each flow's whole cross-slot path up front and compress on it.

    Flows are taken in the allocator's order. The path is found at the original
    volume over the flow's full window, compression goes to the first relay on
    that path with enough compute, and every slot is committed at once.
    """
    graph.reset()
    a = Assignment()
    state = SchedulerState()
    for f in sorted(flows, key=lambda f: (f.t_start, f.t_end, f.volume, f.id)):
        state.flag[f.id] = 0
        state.window[f.id] = f.t_end
        path = shortest_path(graph, f, Node(OBS, f.source, f.t_start), f.volume, f.t_end)
        if path is None:
            state.f_un.add(f.id)
            continue
        volume = f.volume
        for arc in path:
            _allocate(graph, a, state, f.id, arc, volume)
            head = arc.head
            if state.flag[f.id] == 0 and head.kind == "leo":
                sc = graph.sc_arc(head)
                if sc is not None and sc.residual >= volume:
                    small = int(volume * f.theta)
                    _allocate(graph, a, state, f.id, sc, volume)
                    _allocate(graph, a, state, f.id, graph.arc(VCOM, head), small)
                    _allocate(graph, a, state, f.id, graph.arc(VCOM, VABS), volume - small)
                    state.flag[f.id] = 1
                    state.compressions += 1
                    volume = small
        state.f_suc.add(f.id)
    finalize(a, flows)
    fsc(graph, flows, a, state, None)
    return a, state
