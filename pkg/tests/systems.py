"""Random piecewise linear systems and games shared by the tests."""

import numpy as np

from abscontrol.abstraction import PwlSystem
from abscontrol.game import PropertyAutomaton, reduce_reach
from abscontrol.geometry import AffineMap, Box, ConvexPwlFunction, Polyhedron
from abscontrol.wts import FiniteWts


def random_pwl_system(seed, dim=None):
    """Contractive 1-D or 2-D linear system on [0,1]^n, goal box at the origin corner.

    2-D systems get two pieces split at ``x1 = 1/2``; 1-D ones a single
    piece. Costs mix ``|u|`` with a state term so weights depend on both.
    """
    rng = np.random.default_rng(seed)
    n = int(dim if dim is not None else rng.integers(1, 3))
    p = 1
    X = Box(np.zeros(n), np.ones(n))
    U = Box([-1.0], [1.0])

    def matrix():
        A = rng.uniform(-1, 1, size=(n, n))
        A *= rng.uniform(0.2, 0.6) / max(np.abs(np.linalg.eigvals(A)).max(), 1e-9)
        return A

    pieces = []
    if n == 1:
        A = matrix()
        pieces.append((AffineMap(A, rng.uniform(-0.3, 0.3, size=(n, p))), Polyhedron.universe(n)))
    else:
        A1 = matrix()
        A2 = matrix()
        B = rng.uniform(-0.5, 0.5, size=(n, p))
        pieces.append((AffineMap(A1, B), Polyhedron([[1.0, 0.0]], [0.5])))
        pieces.append((AffineMap(A2, B), Polyhedron([[-1.0, 0.0]], [-0.5], [True])))
    goal_lo = np.zeros(n)
    goal_hi = np.full(n, 0.5)
    goal = Box(goal_lo, goal_hi)
    a = rng.uniform(0, 0.5, size=n)
    cost = ConvexPwlFunction(
        np.vstack([a, a]), np.array([[1.0], [-1.0]]), np.zeros(2))
    system = PwlSystem(X, U, pieces, [("goal", [goal])], cost, default_label="free")
    x0 = rng.uniform(0.55, 1.0, size=n)
    epsilon0 = 0.25 if n == 1 else 0.5
    prop = PropertyAutomaton.reachability("goal", ["free"])
    return system, prop, x0, epsilon0


def random_game(seed, max_states=6, max_inputs=3, max_weight=9):
    """Random product game with integer weights built through reduce_reach."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, max_states))  # one slot left for the dead state
    k = int(rng.integers(1, max_inputs + 1))
    labels = ["goal" if rng.random() < 0.3 else "free" for _ in range(n)]
    trs = []
    for s in range(n):
        for u in range(k):
            if rng.random() < 0.25:
                continue
            succ = rng.choice(n, size=int(rng.integers(1, 3)), replace=False)
            for t in sorted(succ.tolist()):
                trs.append((s, u, t, int(rng.integers(0, max_weight + 1))))
    wts = FiniteWts.from_transitions(n, k, trs, labels, init_states={0})
    prop = PropertyAutomaton.reachability("goal", ["free"])
    return reduce_reach(wts, prop), prop
