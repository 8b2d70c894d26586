import math

import numpy as np
import pytest

from abscontrol.abstraction import PwlSystem, cons_abs
from abscontrol.game import PropertyAutomaton, reduce_reach, solve_finite_game
from abscontrol.geometry import AffineMap, Box, ConvexPwlFunction, Polyhedron
from abscontrol.serialization import parse_problem
from abscontrol.synthesis import (LeftDomainError, aligned_perturbation, check_deviation_bound,
                                  deviation_bound_constants, extract, simulate, synthesize,
                                  trajectory_matrices)
from oracles import expanded_deviation
from systems import random_pwl_system

REACH = PropertyAutomaton.reachability("goal", ["free"])


@pytest.fixture(scope="module")
def linear():
    return parse_problem("linear.json")


@pytest.fixture(scope="module")
def twotank():
    return parse_problem("twotank.json")


def contracting_1d():
    """x' = x/2 + u/10 on [0,1], goal [0, 1/2]."""
    return PwlSystem(Box([0.0], [1.0]), Box([-1.0], [1.0]),
                     [(AffineMap([[0.5]], [[0.1]]), Polyhedron.universe(1))],
                     [("goal", [Box([0.0], [0.5])])],
                     ConvexPwlFunction.one_norm_of_input(1, 1), default_label="free")


class TestSimulate:
    def test_hand_computed_step(self, linear):
        system, _, params = linear
        tr = simulate(system, params.x0, [[0.0]])
        assert tr.states[1] == pytest.approx([0.486, 0.738], abs=1e-12)
        assert tr.total_cost == 0.0

    def test_identity_is_constant(self):
        system = PwlSystem(Box([0, 0], [1, 1]), Box([-1], [1]),
                           [(AffineMap(np.eye(2), [[1], [0]]), Polyhedron.universe(2))], (),
                           ConvexPwlFunction([[0, 1]], [[0]], [0.25]), default_label="free")
        tr = simulate(system, [0.3, 0.6], np.zeros((4, 1)))
        assert np.all(tr.states == [0.3, 0.6])
        assert tr.stage_costs == pytest.approx([0.85] * 4)
        assert tr.total_cost == pytest.approx(sum(tr.stage_costs))

    def test_two_tank_switches_piece(self, twotank):
        system, _, params = twotank
        u = [[0.0005]] * 3
        tr = simulate(system, [0.15, 0.1], u)
        assert tr.pieces[0] == 0  # inside [0, 0.2]^2
        assert tr.states[1][0] > 0.2
        assert tr.pieces[1] != 0
        A2 = system.pieces[tr.pieces[1]][0].A
        assert A2[0, 1] == pytest.approx(0.1719)

    def test_leaves_domain(self):
        system = PwlSystem(Box([0.0], [1.0]), Box([0.0], [0.5]),
                           [(AffineMap([[1.0]], [[1.0]]), Polyhedron.universe(1))], (),
                           ConvexPwlFunction.one_norm_of_input(1, 1), default_label="free")
        with pytest.raises(LeftDomainError) as err:
            simulate(system, [0.2], [[0.5], [0.5], [0.5]])
        assert err.value.step == 2

    def test_input_outside(self, linear):
        system, _, params = linear
        with pytest.raises(ValueError):
            simulate(system, params.x0, [[2.0]])


class TestExtract:
    def test_zero_input_when_allowed(self):
        system = contracting_1d()
        res = cons_abs(system, "1/2", [0.9], input_counts=[2])
        game = reduce_reach(res.wts, REACH)
        _, strat = solve_finite_game(game)
        tr = extract(strat, game, res, system, [0.9], REACH)
        assert tr.steps == 1
        assert tr.inputs[0, 0] == 0.0
        assert tr.total_cost == 0.0

    def test_cost_bounded_by_abstract_cost(self):
        system = contracting_1d()
        for eps in ("1/2", "1/4", "1/8"):
            [rep] = synthesize(system, REACH, [0.95], eps, input_counts=[4])
            assert rep.winning
            assert rep.concrete_cost <= rep.abstract_cost


class TestSynthesize:
    def test_grid_halving(self):
        system = contracting_1d()
        reps = synthesize(system, REACH, [0.95], "1/2", max_iterations=3, input_counts=[2])
        assert [r.epsilon[0] for r in reps] == [0.5, 0.25, 0.125]
        assert [r.input_epsilon[0] for r in reps] == [1, 0.5, 0.25]
        reps = synthesize(system, REACH, [0.95], "1/2", max_iterations=2, input_counts=[2],
                          refine_inputs=False)
        assert reps[1].input_epsilon == reps[0].input_epsilon

    def test_invalid_iterations(self):
        with pytest.raises(ValueError):
            synthesize(contracting_1d(), REACH, [0.95], "1/2", max_iterations=0)

    @pytest.mark.parametrize("seed", [0, 1, 7, 15])
    def test_random_runs(self, seed):
        system, prop, x0, eps = random_pwl_system(seed)
        reps = synthesize(system, prop, x0, eps, max_iterations=3, input_counts=[2])
        finite = [r.abstract_cost for r in reps if math.isfinite(r.abstract_cost)]
        assert finite == sorted(finite, reverse=True)
        for r in reps:
            if not r.winning:
                continue
            tr = r.trajectory
            assert tr.total_cost <= r.abstract_cost
            replay = simulate(system, x0, tr.inputs)
            assert np.array_equal(replay.states, tr.states)
            assert np.array_equal(replay.stage_costs, tr.stage_costs)
            word = [system.label(x) for x in tr.states]
            assert prop.accepts(word)

    def test_unwinnable_is_a_report(self):
        # dynamics pushing away from the goal
        system = PwlSystem(Box([0.0], [1.0]), Box([0.0], [0.1]),
                           [(AffineMap([[1.0]], [[1.0]]), Polyhedron.universe(1))],
                           [("goal", [Box([0.0], [0.25])])],
                           ConvexPwlFunction.one_norm_of_input(1, 1), default_label="free")
        [rep] = synthesize(system, REACH, [0.9], "1/4")
        assert not rep.winning and rep.trajectory is None and rep.abstract_cost == math.inf


class TestDeviationBound:
    def test_constants_linear_case(self, linear):
        system, _, _ = linear
        amap = system.pieces[0][0]
        bc = deviation_bound_constants([amap.A], [amap.B], 0)
        assert bc.c1 == pytest.approx(0.82)
        assert bc.c2 == pytest.approx(0.1)

    def test_identity(self):
        for t in range(4):
            bc = deviation_bound_constants([np.eye(3)] * (t + 1), [np.ones((3, 1))] * (t + 1), t)
            assert bc.c1 == 1.0
            assert bc.c2 == t + 1

    @pytest.mark.parametrize("seed", range(10))
    def test_against_expanded_recursion(self, seed):
        rng = np.random.default_rng(seed)
        A = [rng.normal(size=(2, 2)) for _ in range(3)]
        B = [rng.normal(size=(2, 1)) for _ in range(3)]
        bc = deviation_bound_constants(A, B, 2)
        assert (bc.c1, bc.c2) == pytest.approx(expanded_deviation(A, B, 2), rel=1e-12)

    def test_zero_perturbation(self, linear):
        system, _, params = linear
        nominal = simulate(system, params.x0, np.zeros((6, 1)))
        res = check_deviation_bound(system, nominal, 0.0, 0.0, trials=20)
        assert res.ok and res.worst_ratio == 0.0

    def test_sampled_trials(self, linear):
        system, _, params = linear
        rng = np.random.default_rng(0)
        nominal = simulate(system, params.x0, rng.uniform(-0.5, 0.5, size=(6, 1)))
        res = check_deviation_bound(system, nominal, 0.01, 0.01, trials=1000, seed=1)
        assert res.violations == 0 and res.skipped == 0
        assert res.worst_ratio <= 1.0

    def test_aligned_perturbation_reaches_bound(self, linear):
        system, _, params = linear
        nominal = simulate(system, params.x0, np.zeros((6, 1)))
        dx0, du = aligned_perturbation(system, nominal, 0.01, 0.01, t=0)
        tr = simulate(system, nominal.states[0] + dx0, nominal.inputs + du, check_inputs=False)
        dev = np.abs(tr.states[1] - nominal.states[1]).max()
        A, B = trajectory_matrices(system, nominal)
        bound = deviation_bound_constants(A, B, 0).bound(0.01, 0.01)
        assert dev == pytest.approx(bound, rel=1e-9)
        assert dev <= bound * (1 + 1e-12)
