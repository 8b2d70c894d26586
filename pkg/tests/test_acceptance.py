"""Acceptance gate: one test per criterion.

Each test evaluates every sub-check before failing so that the failure
message lists all of them; ``conftest.py`` prints one PASS/FAIL line per
criterion in the terminal summary.
"""

import json
import math
import time

import numpy as np
import pytest

from abscontrol import lp
from abscontrol.abstraction import canonical_refinement_witness, check_simulation, \
    concrete_step_covered, cons_abs
from abscontrol.game import brute_force_game, solve_finite_game
from abscontrol.serialization import parse_problem
from abscontrol.synthesis import check_deviation_bound, simulate, synthesize
from oracles import LP_CASES
from systems import random_game, random_pwl_system

GRID_BUDGET = 60.0  # seconds per grid
N_SYSTEMS = 20


class Checks:
    def __init__(self):
        self.failed = []
        self.lines = []

    def __call__(self, ok, what):
        self.lines.append(f"{'ok  ' if ok else 'FAIL'} {what}")
        if not ok:
            self.failed.append(what)

    def finish(self):
        print("\n".join(self.lines))
        assert not self.failed, "failed checks:\n  " + "\n  ".join(self.failed)


def _in_goal(system, x):
    return system.label(x) == "goal"


def test_criterion_1_linear_case_study():
    system, prop, params = parse_problem("linear.json")
    reps = synthesize(system, prop, params.x0, params.epsilon0, 2,
                      input_counts=params.input_counts, refine_inputs=params.refine_inputs)
    check = Checks()
    coarse, fine = reps
    check(coarse.abstract_state_count == 20 * 20 + 1, "20x20 grid (+ sink)")
    check(coarse.winning, "20x20 synthesis wins")
    if coarse.winning:
        tr = coarse.trajectory
        check(_in_goal(system, tr.final_point), f"20x20 reaches goal at {tr.final_point}")
        check(4 <= tr.steps <= 8, f"20x20 steps {tr.steps} in 6 +- 2")
        check(abs(tr.total_cost - 0.5) <= 0.25, f"20x20 concrete cost {tr.total_cost:.4g} in 0.5 +- 0.25")
    check(sum(coarse.wall_times.values()) <= GRID_BUDGET,
          f"20x20 runtime {sum(coarse.wall_times.values()):.1f}s <= {GRID_BUDGET}s")
    check(fine.abstract_state_count == 40 * 40 + 1, "40x40 grid (+ sink)")
    check(fine.winning, "40x40 synthesis wins")
    if fine.winning:
        tr = fine.trajectory
        check(_in_goal(system, tr.final_point), "40x40 reaches goal")
        check(tr.total_cost <= 0.05, f"40x40 concrete cost {tr.total_cost:.4g} <= 0.05")
        dist = np.abs(tr.final_point - [-0.0468, 0.1999]).max()
        check(dist <= 0.05, f"40x40 final point {tr.final_point} within 0.05 of (-0.0468, 0.1999)")
    check(sum(fine.wall_times.values()) <= GRID_BUDGET,
          f"40x40 runtime {sum(fine.wall_times.values()):.1f}s <= {GRID_BUDGET}s")
    check.finish()


def test_criterion_2_two_tank_case_study():
    system, prop, params = parse_problem("twotank.json")
    reps = synthesize(system, prop, params.x0, params.epsilon0, 2,
                      input_counts=params.input_counts, refine_inputs=params.refine_inputs,
                      merge=params.merge)
    check = Checks()
    coarse, fine = reps
    # 28 x 16 cells below the goal band plus the merged goal and the sink
    check(coarse.abstract_state_count == 28 * 16 + 2, "28x16 grid (+ goal, sink)")
    check(coarse.winning, f"28x16 synthesis wins (abstract cost {coarse.abstract_cost})")
    if coarse.winning:
        tr = coarse.trajectory
        check(_in_goal(system, tr.final_point), "28x16 reaches goal")
        check(abs(tr.total_cost - 0.0034) <= 0.3 * 0.0034, f"28x16 cost {tr.total_cost:.4g} within 30% of 0.0034")
        check(9 <= tr.steps <= 15, f"28x16 steps {tr.steps} in 12 +- 3")
    check(fine.winning, f"56x32 synthesis wins (abstract cost {fine.abstract_cost})")
    if fine.winning:
        tr = fine.trajectory
        check(_in_goal(system, tr.final_point), "56x32 reaches goal")
        if coarse.winning:
            check(tr.total_cost <= coarse.trajectory.total_cost, "56x32 cost <= 28x16 cost")
        check(abs(tr.total_cost - 0.0032) <= 0.3 * 0.0032, f"56x32 cost {tr.total_cost:.4g} within 30% of 0.0032")
    for r in reps:
        t = sum(r.wall_times.values())
        check(t <= GRID_BUDGET, f"grid {r.abstract_state_count} states runtime {t:.1f}s <= {GRID_BUDGET}s")
    check.finish()


def test_criterion_3_game_oracle_equivalence():
    check = Checks()
    t0 = time.perf_counter()
    mismatches = []
    sizes = []
    for seed in range(100):
        game, prop = random_game(seed, max_states=6, max_inputs=3, max_weight=9)
        sizes.append(game.n_states)
        q = game.initial_for(0, prop)[0]
        a = solve_finite_game(game, q)[0]
        b = brute_force_game(game, q)
        if a != b:
            mismatches.append((seed, a, b))
    elapsed = time.perf_counter() - t0
    check(max(sizes) <= 6, f"games have at most 6 states (max {max(sizes)})")
    check(not mismatches, f"solve_finite_game == brute_force_game on 100 games {mismatches}")
    check(elapsed < 10, f"runtime {elapsed:.2f}s < 10s")
    check.finish()


@pytest.fixture(scope="module")
def refinement_runs():
    runs = []
    for seed in range(N_SYSTEMS):
        system, prop, x0, eps = random_pwl_system(seed)
        reps = synthesize(system, prop, x0, eps, max_iterations=4, input_counts=[2],
                          check_soundness=False)
        runs.append((seed, system, prop, x0, eps, reps))
    return runs


def test_criterion_4_refinement_monotonicity(refinement_runs):
    check = Checks()
    winning = 0
    for seed, system, _, _, _, reps in refinement_runs:
        J = [r.abstract_cost for r in reps]
        winning += any(math.isfinite(j) for j in J)
        ok = all(b <= a for a, b in zip(J, J[1:]) if math.isfinite(a))
        check(ok, f"system {seed} (dim {system.n}): J = {[f'{j:.17g}' for j in J]}")
    check(winning >= N_SYSTEMS // 3, f"{winning} of {N_SYSTEMS} systems win at some grid")
    check.finish()


def test_criterion_5_simulation_witness(refinement_runs):
    check = Checks()
    for seed, system, _, x0, eps, _ in refinement_runs:
        for i in range(3):
            coarse = cons_abs(system, eps / 2 ** i, x0, input_counts=[2 ** (i + 1)])
            fine = cons_abs(system, eps / 2 ** (i + 1), x0, input_counts=[2 ** (i + 2)])
            res = check_simulation(fine.wts, coarse.wts, canonical_refinement_witness(fine, coarse))
            check(bool(res), f"system {seed}, eps/{2 ** i} vs eps/{2 ** (i + 1)}: {res.reason}")
    check.finish()


def test_criterion_6_soundness_sampling(refinement_runs):
    check = Checks()
    for seed, system, _, x0, eps, reps in refinement_runs:
        res = cons_abs(system, eps / 2, x0, input_counts=[4])
        rng = np.random.default_rng(1000 + seed)
        X, U = system.state_space, system.input_space
        bad = 0
        for _ in range(1000):
            x = rng.uniform(X.lower, X.upper)
            u = rng.uniform(U.lower, U.upper)
            hit = concrete_step_covered(res, system, x, u)
            if hit is None or hit[2] > hit[1]:
                bad += 1
        check(bad == 0, f"system {seed}: {1000 - bad}/1000 steps covered with dominating weight")
        for r in reps:
            if r.winning:
                check(r.concrete_cost <= r.abstract_cost,
                      f"system {seed} iteration {r.iteration}: concrete {r.concrete_cost:.6g} "
                      f"<= abstract {r.abstract_cost:.6g}")
    check.finish()


def test_criterion_7_deviation_bound():
    system, _, params = parse_problem("linear.json")
    check = Checks()
    rng = np.random.default_rng(7)
    nominals = {
        "zero inputs": np.zeros((6, 1)),
        "random inputs": rng.uniform(-0.9, 0.9, size=(6, 1)),
    }
    for name, inputs in nominals.items():
        nominal = simulate(system, params.x0, inputs)
        res = check_deviation_bound(system, nominal, 0.01, 0.01, trials=1000, seed=11)
        check(nominal.steps == 6, f"{name}: 6-step nominal")
        check(res.violations == 0 and res.skipped == 0,
              f"{name}: {res.violations} violations, {res.skipped} skipped in {res.trials} trials "
              f"(worst deviation/bound {res.worst_ratio:.4f})")
    check.finish()


def test_criterion_8_lp_correctness():
    check = Checks()
    cases = json.loads(LP_CASES.read_text())
    check(len(cases) == 200, "200 frozen LP cases")
    dims = max(len(case["c"]) for case in cases)
    check(dims <= 4, f"at most 4 dimensions (max {dims})")
    worst = 0.0
    for k, case in enumerate(cases):
        A, b, c = np.array(case["A"]), np.array(case["b"]), np.array(case["c"])
        if case["expected"] is None:
            try:
                lp.solve([c], A, b)
                check(False, f"case {k}: expected infeasible")
            except lp.InfeasibleError:
                pass
        else:
            [(v, _)] = lp.solve([c], A, b)
            err = abs(v - case["expected"])
            worst = max(worst, err)
            if err > 1e-9:
                check(False, f"case {k}: {v} vs oracle {case['expected']}")
    check(worst <= 1e-9, f"max |simplex - vertex enumeration| = {worst:.2e} <= 1e-9")
    check.finish()
