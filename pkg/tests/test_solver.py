import csv
import io
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_lagrangian
from tdisched import exact
from tdisched.graph import Node
from tdisched.model import ANY_GROUND, Assignment, Flow, finalize, objective, validate
from tdisched.scenarios import (DeskSpec, capacity_graph, cross_slot_starvation, desk_instance, mb,
                                order_sensitive_corridor, two_image_bottleneck)
from tdisched.solver import (EXACT, GRID, HEURISTIC, TRACE_HEADER, Multipliers, SrccConfig, constant_term,
                             default_m_time, dual_value, esa, fsc, lagrangian_value, lsa, multiplier_index,
                             primal_signature, project, solve_p2, srcc, step_size)


def random_mu(index, rng, hi=3):
    def draw():
        return {k: Fraction(rng.randint(0, hi * GRID), GRID) for k in index}
    return Multipliers(draw(), draw(), draw())


def late_instance():
    """One image that can only land two slots after its deadline."""
    caps = {("O1", "S1", 1): mb(100), ("S1", "G1", 3): mb(100)}
    g = capacity_graph(3, caps, s_max=mb(1000), compute_cap=0)
    return g, [Flow("late", "O1", ANY_GROUND, mb(100), 1, 1)]


class TestLagrangian:
    def test_zero_multipliers(self):
        g, flows = two_image_bottleneck()
        a, _ = esa(g, flows)
        mu = Multipliers.constant(multiplier_index(g, flows), 0)
        assert lagrangian_value(g, flows, a, mu) == -objective(flows, a)

    def test_unit_multipliers_at_zero(self):
        g, flows = two_image_bottleneck()
        index = multiplier_index(g, flows)
        M = default_m_time(g, flows)
        by_id = {f.id: f for f in flows}
        want = sum(Fraction(by_id[fid].t_start + 1 - 3 * M, M) for fid, _ in index)
        mu = Multipliers.constant(index, 1)
        assert lagrangian_value(g, flows, finalize(Assignment(), flows), mu) == want

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 2 ** 32))
    def test_matches_naive_summation(self, seed, mseed):
        g, flows = desk_instance(seed)
        a, _ = esa(g, flows)
        index = multiplier_index(g, flows)
        mu = random_mu(index, random.Random(mseed))
        M = default_m_time(g, flows)
        assert lagrangian_value(g, flows, a, mu) == naive_lagrangian(g, flows, a, mu, M)

    def test_constant_term_hand_sum(self):
        g, flows = cross_slot_starvation()
        index = multiplier_index(g, flows)
        M = 2 * g.K
        mu = Multipliers.constant(index, 1)
        by_id = {f.id: f for f in flows}
        hand = Fraction(0)
        for fid, _ in index:
            f = by_id[fid]
            hand += Fraction((f.t_start - 2 * M) - f.t_end + (1 + f.t_end - M), M)
        assert constant_term(mu, flows, index, M) == hand


class TestSolveP2:
    def k(self):
        return ("f", (Node("leo", "S1", 1), Node("gnd", "G1", 1)))

    def test_zero(self):
        choice, value = solve_p2(Multipliers({self.k(): 0}, {self.k(): 0}, {self.k(): 0}))
        assert choice == {self.k(): 1} and value == -1

    def test_positive_coefficient(self):
        choice, value = solve_p2(Multipliers({self.k(): 1}, {self.k(): 1}, {self.k(): 0}))
        assert choice == {self.k(): 0} and value == 0

    def test_tie_goes_to_zero(self):
        half = Fraction(1, 2)
        choice, value = solve_p2(Multipliers({self.k(): half}, {self.k(): half}, {self.k(): 0}))
        assert choice == {self.k(): 0} and value == 0


class TestStep:
    def test_projection(self):
        assert project(Fraction(1, 2) - Fraction(9, 10)) == 0

    def test_projection_grid(self):
        assert project(Fraction(1, 3)) == Fraction(GRID // 3, GRID)

    def test_step_formula(self):
        assert step_size(1, 10, 0, 4) == Fraction(5, 2)

    @given(st.fractions(-10, 10))
    def test_projection_nonnegative_and_below(self, v):
        p = project(v)
        assert 0 <= p and (p == 0 or v - Fraction(1, GRID) < p <= v)


class TestEsa:
    def test_bottleneck_needs_compression(self):
        g, flows = two_image_bottleneck()
        a, state = esa(g, flows)
        assert a.delivered() == ["f1", "f2"] and max(a.arrival.values()) == 2
        assert state.compressions == 1 and validate(g, flows, a).feasible

    def test_bottleneck_without_compute(self):
        g, flows = two_image_bottleneck(with_compute=False)
        a, _ = esa(g, flows, compression=False)
        late = [fid for fid in a.delivered() if a.arrival[fid] > 2]
        assert len(a.delivered()) - len(late) == 1

    def test_per_slot_replanning(self):
        g, flows = cross_slot_starvation()
        a, _ = esa(g, flows)
        assert a.delivered() == ["f1", "f2"] and set(a.arrival.values()) == {2}
        s1 = (Node("leo", "S1", 1), Node("leo", "S1", 2))
        assert a.x["f1"][s1] == mb(50)

    def test_zero_capacity_leaves_graph_untouched(self):
        caps = {("O1", "S1", 1): mb(10), ("S1", "G1", 1): mb(10)}
        g = capacity_graph(1, caps, s_max=0, compute_cap=0)
        for arc in g.arcs:
            arc.residual = 0 if arc.bounded else arc.residual
        before = g.residuals()
        flows = [Flow("f", "O1", ANY_GROUND, mb(10), 1, 1)]
        a, state = esa(g, flows)
        assert state.f_un == {"f"} and g.residuals() == before and a.delivered() == []

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_partition_and_feasible(self, seed):
        g, flows = desk_instance(seed)
        a, state = esa(g, flows)
        assert not state.f_pending
        assert state.partition_ok(flows)
        assert validate(g, flows, a).tags() <= {"eq17", "eq18"} or validate(g, flows, a).feasible


class TestFsc:
    def test_all_timely(self):
        g, flows = two_image_bottleneck()
        a, state = esa(g, flows)
        before = len(state.f_suc)
        assert fsc(g, flows, a, state) == before == 2

    def test_late_arrival_released(self):
        g, flows = late_instance()
        a, state = esa(g, flows)
        a.add("late", (Node("obs", "O1", 1), Node("leo", "S1", 1)), 0)
        assert objective(flows, a) == 0
        assert fsc(g, flows, a, state) == 0
        assert "late" in state.f_un and g.is_pristine()

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.integers(0, 2 ** 32))
    def test_output_validates(self, seed, mseed):
        g, flows = desk_instance(seed)
        index = multiplier_index(g, flows)
        mu = random_mu(index, random.Random(mseed), hi=1)
        a, state = esa(g, flows, mu)
        s = fsc(g, flows, a, state, mu)
        assert validate(g, flows, a).feasible and s == objective(flows, a) == len(state.f_suc)
        assert state.partition_ok(flows)


class TestLsa:
    def test_nothing_stranded(self):
        g, flows = two_image_bottleneck()
        a, state = esa(g, flows)
        s = fsc(g, flows, a, state)
        _, _, s2 = lsa(g, flows, a, state, s)
        assert s2 == s == 2

    def test_reordering_rescues_stranded_flow(self):
        g, flows = order_sensitive_corridor()
        a, state = esa(g, flows)
        s = fsc(g, flows, a, state)
        assert s == 1
        a2, _, s2 = lsa(g, flows, a, state, s)
        assert s2 == 2 and validate(g, flows, a2).feasible

    def test_both_orders_exhaustively(self):
        g, flows = order_sensitive_corridor()
        served = []
        for first in ("A", "B"):
            g.reset()
            a, state = esa(g, flows, priority={first: -1})
            served.append(fsc(g, flows, a, state))
        assert sorted(served) == [1, 2]

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_monotone(self, seed):
        g, flows = desk_instance(seed)
        a, state = esa(g, flows)
        s = fsc(g, flows, a, state)
        a2, _, s2 = lsa(g, flows, a, state, s)
        assert s2 >= s and validate(g, flows, a2).feasible


class TestDual:
    def test_zero_multipliers(self):
        # every timeliness indicator is free at mu = 0, so d(0) is minus the index size
        g, flows = desk_instance(4)
        index = multiplier_index(g, flows)
        d = dual_value(g, flows, Multipliers.constant(index, 0))
        assert d.certified and d.value == -len(index)
        assert d.value <= -len(flows) <= exact.optimum(g, flows).value

    def test_random_multipliers_below_optimum(self):
        rng = random.Random(5)
        checked = 0
        for seed in range(10):
            g, flows = desk_instance(seed)
            p = exact.optimum(g, flows).value
            index = multiplier_index(g, flows)
            for _ in range(10):
                d = dual_value(g, flows, random_mu(index, rng), EXACT)
                assert d.certified and d.value <= p
                checked += 1
        assert checked == 100

    def test_heuristic_is_flagged(self):
        g, flows = desk_instance(4)
        index = multiplier_index(g, flows)
        assert not dual_value(g, flows, Multipliers.constant(index, 1), HEURISTIC).certified

    def test_unknown_mode(self):
        g, flows = desk_instance(4)
        with pytest.raises(ValueError):
            dual_value(g, flows, Multipliers(), "magic")


class TestSrcc:
    def test_immediate_convergence(self):
        caps = {("O1", "S1", 1): mb(100), ("S1", "G1", 1): mb(100)}
        g = capacity_graph(1, caps, s_max=mb(100), compute_cap=0)
        # M = 3: routing earns -1/2 * 2/3, P2 gives -1/2, the constant -1/6, so d = -1 = p*
        cfg = SrccConfig(initial_mu=(0, Fraction(1, 2), 0))
        res = srcc(g, [Flow("f", "O1", ANY_GROUND, mb(100), 1, 1)], cfg)
        assert res.iterations == 1 and res.bounds.gap == 0 and res.bounds.reason == "gap"
        assert res.success == 1

    def test_vignettes(self):
        for make in (two_image_bottleneck, cross_slot_starvation, order_sensitive_corridor):
            g, flows = make()
            res = srcc(g, flows)
            assert res.success == 2 and validate(g, flows, res.assignment).feasible

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_bounds_sandwich(self, seed):
        g, flows = desk_instance(seed, DeskSpec(flows=(1, 5)))
        p = exact.optimum(g, flows).value
        rows = []
        res = srcc(g, flows, on_iteration=lambda row, a: rows.append((row, objective(flows, a))))
        for row, count in rows:
            assert row.d_certified and row.d_mu <= p <= -row.sum_u == -count
        assert res.bounds.lb <= p <= res.bounds.ub == -res.success
        assert g.residuals() == _residuals_of(g, res.assignment)

    def test_deterministic(self):
        g, flows = desk_instance(8, n_flows=8)
        a = srcc(g, flows, SrccConfig(dual_mode=HEURISTIC))
        b = srcc(g, flows, SrccConfig(dual_mode=HEURISTIC))
        assert a.assignment.to_json() == b.assignment.to_json()
        assert a.bounds.to_csv() == b.bounds.to_csv()

    def test_trace_csv(self):
        g, flows = desk_instance(8)
        res = srcc(g, flows)
        rows = list(csv.reader(io.StringIO(res.bounds.to_csv())))
        assert rows[0] == TRACE_HEADER and len(rows) == res.iterations + 1
        assert rows[-1][-1] == res.bounds.reason

    def test_time_limit(self):
        g, flows = desk_instance(8, n_flows=8)
        res = srcc(g, flows, SrccConfig(time_limit=1e-9))
        assert res.iterations <= 2 and res.status == "time limit"
        assert validate(g, flows, res.assignment).feasible

    @pytest.mark.parametrize("kw", [dict(epsilon=-1), dict(n_max=0), dict(beta=0), dict(time_limit=0),
                                    dict(dual_mode="x")])
    def test_config_validation(self, kw):
        with pytest.raises(ValueError):
            SrccConfig(**kw)

    def test_signature_ignores_magnitudes(self):
        g, flows = desk_instance(8)
        index = multiplier_index(g, flows)
        lo, hi = Multipliers.constant(index, 2), Multipliers.constant(index, 3)
        assert primal_signature(g, flows, lo, index) == primal_signature(g, flows, hi, index)


def _residuals_of(graph, a):
    caps = {arc.key: arc.capacity for arc in graph.arcs}
    for usage in a.x.values():
        for key, amt in usage.items():
            caps[key] -= amt
    return [caps[arc.key] for arc in graph.arcs]
