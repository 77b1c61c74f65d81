"""Hand-built instances and a seeded generator of small random ones."""
from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping

from .graph import MBIT, MdrTeg, build
from .model import ANY_GROUND, Flow
from .topology import SlotTopology


def capacity_graph(K: int, caps: Mapping[tuple[str, str, int], int], *, s_max: int, compute_cap: int,
                   nodes=(), with_compute: bool = True) -> MdrTeg:
    """Graph from explicit per-slot arc capacities in bits (``(src, dst, slot) -> bits``)."""
    per_slot: dict[int, dict] = {t: {} for t in range(1, K + 1)}
    for (i, j, t), cap in caps.items():
        if not 1 <= t <= K:
            raise ValueError(f"slot {t} outside 1..{K}")
        per_slot[t][(i, j)] = cap
    ids = set(nodes)
    for (i, j, _t) in caps:
        ids.update((i, j))
    slots = [SlotTopology(t, per_slot[t], frozenset(ids)) for t in range(1, K + 1)]
    return build(slots, s_max, compute_cap, 1, tau=1, rho_unit=1, with_compute=with_compute)


def mb(x) -> int:
    return int(Fraction(x) * MBIT)


def two_image_bottleneck(with_compute: bool = True):
    """One relay, one ground station, two images due within two slots.

    Without compute the second-slot downlink cannot carry both images; with
    compute the first image is compressed at the relay and both fit.
    """
    caps = {("O1", "S1", 1): mb(220), ("S1", "G1", 2): mb(170), ("S1", "G1", 3): mb(1000)}
    g = capacity_graph(3, caps, s_max=mb(220), compute_cap=mb(100), with_compute=with_compute)
    flows = [Flow("f1", "O1", ANY_GROUND, mb(100), 1, 2, Fraction(1, 2)),
             Flow("f2", "O1", ANY_GROUND, mb(120), 1, 2, Fraction(1, 2))]
    return g, flows


def cross_slot_starvation():
    """Two images; committing the first one's whole path up front starves the second."""
    caps = {("O1", "S1", 1): mb(200), ("S1", "G1", 2): mb(60), ("S1", "S2", 2): mb(100),
            ("S2", "G1", 2): mb(100)}
    g = capacity_graph(2, caps, s_max=mb(1000), compute_cap=mb(200))
    flows = [Flow("f1", "O1", ANY_GROUND, mb(100), 1, 2, Fraction(1, 2)),
             Flow("f2", "O1", ANY_GROUND, mb(100), 1, 2, Fraction(1, 2))]
    return g, flows


def order_sensitive_corridor():
    """Two uplinks of different width; serving the small image first strands the big one."""
    caps = {("O1", "S1", 1): mb(100), ("O1", "S2", 1): mb(60),
            ("S1", "G1", 1): mb(1000), ("S2", "G1", 1): mb(1000)}
    g = capacity_graph(1, caps, s_max=mb(1000), compute_cap=0, with_compute=False)
    flows = [Flow("A", "O1", ANY_GROUND, mb(50), 1, 1, Fraction(1, 2)),
             Flow("B", "O1", ANY_GROUND, mb(90), 1, 1, Fraction(1, 2))]
    return g, flows


@dataclass
class DeskSpec:
    """Knobs of the random small-instance generator (capacities in Mbits)."""
    n_obs: tuple = (1, 2)
    n_leo: tuple = (2, 5)
    n_gnd: tuple = (1, 2)
    slots: tuple = (3, 6)
    flows: tuple = (1, 8)
    link_prob: float = 0.5
    downlink_prob: float = 0.4
    cap: tuple = (40, 300)
    store: int = 400
    compute: tuple = (0, 150)
    volume: tuple = (40, 120)
    delay: tuple = (0, 3)
    thetas: tuple = (Fraction(1, 2), Fraction(3, 5), Fraction(4, 5))


def desk_instance(seed: int, spec: DeskSpec | None = None, *, n_flows: int | None = None,
                  theta: Fraction | None = None, with_compute: bool = True) -> tuple[MdrTeg, list[Flow]]:
    """Seeded random instance with at most 10 real nodes."""
    spec = spec or DeskSpec()
    rng = random.Random(seed)
    obs = [f"O{i}" for i in range(1, rng.randint(*spec.n_obs) + 1)]
    leo = [f"S{i}" for i in range(1, rng.randint(*spec.n_leo) + 1)]
    gnd = [f"G{i}" for i in range(1, rng.randint(*spec.n_gnd) + 1)]
    K = rng.randint(*spec.slots)
    caps = {}
    for t in range(1, K + 1):
        for o in obs:
            for s in leo:
                if rng.random() < spec.link_prob:
                    caps[(o, s, t)] = mb(rng.randint(*spec.cap))
        for s1 in leo:
            for s2 in leo:
                if s1 != s2 and rng.random() < spec.link_prob / 2:
                    caps[(s1, s2, t)] = mb(rng.randint(*spec.cap))
            for gs in gnd:
                if rng.random() < spec.downlink_prob:
                    caps[(s1, gs, t)] = mb(rng.randint(*spec.cap))
    g = capacity_graph(K, caps, s_max=mb(spec.store), compute_cap=mb(rng.randint(*spec.compute)),
                       nodes=obs + leo + gnd, with_compute=with_compute)
    count = n_flows if n_flows is not None else rng.randint(*spec.flows)
    flows = []
    for i in range(count):
        ts = rng.randint(1, K)
        te = min(K, ts + rng.randint(*spec.delay))
        th = theta if theta is not None else rng.choice(spec.thetas)
        flows.append(Flow(f"u{i:02d}", rng.choice(obs), ANY_GROUND, mb(rng.randint(*spec.volume)), ts, te, th))
    return g, flows
