"""Abstraction refinement loop, controller extraction and closed-loop simulation."""

from dataclasses import dataclass, field
import logging
import math
import time

import numpy as np

from . import lp
from .abstraction import cons_abs
from .game import reduce_reach, solve_finite_game
from .geometry import as_fraction
from .wts import INF

log = logging.getLogger(__name__)

COST_TOL = 1e-9


class LeftDomainError(RuntimeError):
    def __init__(self, step, state):
        super().__init__(f"state left the state space at step {step}: {state}")
        self.step = step
        self.state = state


class ExtractionError(RuntimeError):
    pass


class StepLimitError(ExtractionError):
    pass


class SoundnessError(AssertionError):
    """Extracted concrete cost exceeded the abstract cost bound."""


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray  # (k+1, n)
    inputs: np.ndarray  # (k, p)
    stage_costs: np.ndarray  # (k,)
    pieces: tuple = ()

    @property
    def total_cost(self):
        return float(sum(self.stage_costs.tolist()))

    @property
    def steps(self):
        return int(self.inputs.shape[0])

    @property
    def final_point(self):
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class RefinementReport:
    iteration: int
    epsilon: tuple  # Fractions, one per state axis
    input_epsilon: tuple
    abstract_cost: float
    winning: bool
    trajectory: Trajectory = None
    abstract_state_count: int = 0
    transition_count: int = 0
    wall_times: dict = field(default_factory=dict)

    @property
    def concrete_cost(self):
        return None if self.trajectory is None else self.trajectory.total_cost

    @property
    def steps(self):
        return None if self.trajectory is None else self.trajectory.steps


@dataclass(frozen=True)
class BoundConstants:
    c1: float
    c2: float
    t: int

    def bound(self, eps_x, eps_u):
        return self.c1 * eps_x + self.c2 * eps_u


@dataclass(frozen=True)
class DeviationCheck:
    ok: bool
    trials: int
    skipped: int
    violations: int
    worst_ratio: float  # max over trials/steps of deviation / bound

    def __bool__(self):
        return self.ok


def simulate(system, x0, inputs, check_inputs=True, tol=1e-12):
    """Forward simulation with piece selection by membership of ``x_t``."""
    x = np.asarray(x0, dtype=float)
    if not system.in_domain(x, tol):
        raise LeftDomainError(0, x)
    inputs = np.asarray(inputs, dtype=float).reshape(-1, system.p)
    states = [x]
    costs = []
    pieces = []
    U = system.input_space
    for t, u in enumerate(inputs):
        if check_inputs and not U.contains_closed(u, tol):
            raise ValueError(f"input {u} at step {t} is outside the input space")
        x, i = system.step(x, u)
        if not system.in_domain(x, tol):
            raise LeftDomainError(t + 1, x)
        states.append(x)
        costs.append(system.cost(x, u))
        pieces.append(i)
    return Trajectory(np.array(states), inputs.copy(), np.array(costs, dtype=float), tuple(pieces))


def _shrunk(box, margin):
    """Closure of ``box`` with open lower faces pulled in by ``margin`` of the width."""
    lo = box.lower.copy()
    width = box.upper - box.lower
    for i, is_open in enumerate(box.lower_open):
        if is_open:
            lo[i] = lo[i] + margin * width[i]
    return lo, box.upper


def _cheapest_input(system, piece, x, ubox, tbox, margin):
    """Minimise ``J(A x + B u, u)`` over ``u`` in the input cell with the successor in ``tbox``."""
    amap = system.pieces[piece][0]
    n, p = system.n, system.p
    ulo, uhi = _shrunk(ubox, margin)
    tlo, thi = _shrunk(tbox, margin)
    ax = amap.A @ x
    # variables (u, tau); maximise -tau
    C, c0 = system.cost.after_map(amap)
    cu = C[:, n:]
    cx = C[:, :n] @ x + c0
    k = cu.shape[0]
    A = np.vstack([
        np.hstack([amap.B, np.zeros((n, 1))]),
        np.hstack([-amap.B, np.zeros((n, 1))]),
        np.hstack([cu, -np.ones((k, 1))]),
    ])
    b = np.concatenate([thi - ax, -(tlo - ax), -cx])
    lower = np.append(ulo, -np.inf)
    upper = np.append(uhi, np.inf)
    obj = np.zeros(p + 1)
    obj[-1] = -1.0
    [(val, z)] = lp.solve([obj], A, b, lower, upper)
    return -val, np.clip(z[:p], ubox.lower, ubox.upper)


def extract(strategy, game, abstraction, system, x0, prop, max_steps=None, margin=1e-9):
    """Concrete input sequence that follows the abstract strategy from ``x0``.

    At each step the strategy's input class is refined to a single input by
    a linear program: the cheapest stage cost among inputs of the class
    whose successor lies in one of the strategy's successor cells. Open
    lower cell faces are pulled in by ``margin`` of the cell width so that
    the chosen successor is inside its half-open cell.
    """
    s0 = abstraction.locate(x0)
    if s0 is None:
        raise ExtractionError(f"x0 = {x0} is outside the state space")
    starts = game.initial_for(s0, prop)
    layer = strategy.horizon
    starts = [q for q in starts if math.isfinite(strategy.value[layer, q])]
    if not starts:
        raise ExtractionError("strategy is not winning from the cell of x0")
    q = min(starts, key=lambda s: (strategy.value[layer, s], s))
    max_steps = game.n_states if max_steps is None else max_steps

    x = np.asarray(x0, dtype=float)
    inputs = []
    budget = layer
    while q not in game.final_states:
        if len(inputs) >= max_steps:
            raise StepLimitError(f"no final state within {max_steps} steps")
        v = strategy.input_at(budget, q)
        if v is None:
            raise ExtractionError(f"strategy undefined at product state {q} (budget {budget})")
        succ = [t for t, w in game.wts.successors(q, v) if math.isfinite(w)]
        cells = sorted({game.back_map[t][0] for t in succ})
        piece = system.piece_index(x)
        ubox = abstraction.input_cells[v]
        best = None
        for c in cells:
            for m in (margin, 0.0):
                try:
                    cost, u = _cheapest_input(system, piece, x, ubox, abstraction.cells[c], m)
                except lp.InfeasibleError:
                    continue
                if best is None or cost < best[0]:
                    best = (cost, u, c)
                break
        if best is None:
            raise ExtractionError(f"no input of class {v} reaches a strategy successor from {x}")
        _, u, c_planned = best
        x_next, _ = system.step(x, u)
        c_next = abstraction.locate(x_next)
        if c_next not in cells:
            near = [c for c in cells if abstraction.cells[c].contains_closed(x_next, 1e-9)]
            if not near:
                raise ExtractionError(f"successor {x_next} is outside every strategy successor cell")
            c_next = c_planned if c_planned in near else near[0]
        options = [t for t in succ if game.back_map[t][0] == c_next]
        q = min(options, key=lambda s: (strategy.value[max(budget - 1, 0), s], s))
        inputs.append(u)
        x = x_next
        budget -= 1
    inputs = np.array(inputs, dtype=float).reshape(-1, system.p)
    return simulate(system, x0, inputs)


def _halve(eps, i):
    return tuple(e / (2 ** i) for e in eps)


def synthesize(system, prop, x0, epsilon0, max_iterations=1, input_counts=None,
               refine_inputs=True, merge=(), jobs=1, check_soundness=True):
    """Run the refinement loop for ``max_iterations`` grid halvings.

    Returns one :class:`RefinementReport` per iteration. Input cells use
    ``input_counts`` per axis when given (doubled each iteration if
    ``refine_inputs``), otherwise the current state grid width.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be at least 1")
    if isinstance(epsilon0, (list, tuple)):
        eps0 = tuple(as_fraction(e) for e in epsilon0)
    else:
        eps0 = (as_fraction(epsilon0),) * system.n
    x0 = np.asarray(x0, dtype=float)
    reports = []
    for i in range(max_iterations):
        eps = _halve(eps0, i)
        times = {}
        t0 = time.perf_counter()
        if input_counts is not None:
            counts = [int(c) * (2 ** i if refine_inputs else 1) for c in input_counts]
            abstraction = cons_abs(system, list(eps), x0, input_counts=counts, merge=merge, jobs=jobs)
        else:
            ueps = _halve((as_fraction(eps0[0]),) * system.p, i) if refine_inputs else \
                (as_fraction(eps0[0]),) * system.p
            abstraction = cons_abs(system, list(eps), x0, input_epsilon=list(ueps), merge=merge,
                                   jobs=jobs)
        times["abstraction"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        game = reduce_reach(abstraction.wts, prop)
        starts = game.initial_for(abstraction.initial_abstract_state, prop)
        _, strategy = solve_finite_game(game)
        costs = [float(strategy.value[-1, s]) for s in starts]
        cost = min(costs) if costs else INF
        times["game"] = time.perf_counter() - t0

        trajectory = None
        winning = math.isfinite(cost)
        if winning:
            t0 = time.perf_counter()
            trajectory = extract(strategy, game, abstraction, system, x0, prop)
            times["extraction"] = time.perf_counter() - t0
            if check_soundness and trajectory.total_cost > cost + COST_TOL:
                raise SoundnessError(
                    f"concrete cost {trajectory.total_cost} exceeds abstract cost {cost}")
        log.info("iteration %d: eps=%s cost=%s states=%d", i, [str(e) for e in eps], cost,
                 abstraction.wts.n_states)
        reports.append(RefinementReport(
            i, eps, tuple(abstraction.input_lattice.eps), cost, winning, trajectory,
            abstraction.wts.n_states, abstraction.wts.n_transitions, times))
    return reports


# --------------------------------------------------------------------------
# deviation bound diagnostics


def inf_norm(M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return float(np.abs(M).sum(axis=1).max())


def deviation_bound_constants(A_seq, B_seq, t):
    """Constants ``c1, c2`` bounding ``|x_{t+1} - x*_{t+1}|`` by ``c1 eps_x + c2 eps_u``.

    ``A_seq[j], B_seq[j]`` are the matrices active at step ``j``; the bound
    holds when the initial state moves by at most ``eps_x`` and each input
    by at most ``eps_u`` (infinity norms) while the piece sequence is kept.
    """
    a = [inf_norm(A_seq[j]) for j in range(t + 1)]
    b = [inf_norm(B_seq[j]) for j in range(t + 1)]
    c1 = math.prod(a)
    c2 = b[t]
    for k in range(1, t + 1):
        c2 += math.prod(a[k:t + 1]) * b[k - 1]
    return BoundConstants(c1, c2, t)


def trajectory_matrices(system, trajectory):
    A = [system.pieces[i][0].A for i in trajectory.pieces]
    B = [system.pieces[i][0].B for i in trajectory.pieces]
    return A, B


def check_deviation_bound(system, nominal, eps_x, eps_u, trials=1000, seed=0, rel_tol=1e-12):
    """Sample perturbed runs around ``nominal`` and test the deviation bound at every step.

    Trials whose piece sequence differs from the nominal one are skipped,
    since the bound is only claimed while the same matrices apply.
    """
    rng = np.random.default_rng(seed)
    A_seq, B_seq = trajectory_matrices(system, nominal)
    steps = nominal.steps
    bounds = [deviation_bound_constants(A_seq, B_seq, t).bound(eps_x, eps_u) for t in range(steps)]
    skipped = violations = 0
    worst = 0.0
    x0 = nominal.states[0]
    for _ in range(trials):
        x = x0 + rng.uniform(-eps_x, eps_x, size=x0.shape)
        du = rng.uniform(-eps_u, eps_u, size=nominal.inputs.shape)
        devs, ok = _perturbed_run(system, nominal, x, nominal.inputs + du)
        if not ok:
            skipped += 1
            continue
        for t, d in enumerate(devs):
            if d > bounds[t] * (1 + rel_tol) + rel_tol:
                violations += 1
                break
        worst = max(worst, max((d / bd if bd > 0 else (0.0 if d == 0 else INF))
                               for d, bd in zip(devs, bounds)) if devs else 0.0)
    return DeviationCheck(violations == 0, trials, skipped, violations, worst)


def _perturbed_run(system, nominal, x, inputs):
    devs = []
    for t, u in enumerate(inputs):
        i = system.piece_index(x)
        if i != nominal.pieces[t]:
            return devs, False
        x = system.pieces[i][0](x, u)
        devs.append(float(np.abs(x - nominal.states[t + 1]).max()))
    return devs, True


def aligned_perturbation(system, nominal, eps_x, eps_u, t=0):
    """Perturbation that attains the bound for step ``t`` when one row dominates.

    Picks the row maximising the combined row sums of the step-``t``
    propagation matrices and aligns every perturbation with its signs.
    """
    A_seq, B_seq = trajectory_matrices(system, nominal)
    n = system.n
    Phi = np.eye(n)
    gains = []
    for j in range(t, -1, -1):
        gains.append((j, Phi @ B_seq[j]))
        Phi = Phi @ A_seq[j]
    r = int(np.argmax(np.abs(Phi).sum(axis=1) * eps_x
                      + sum(np.abs(G).sum(axis=1) for _, G in gains) * eps_u))
    dx0 = eps_x * np.sign(Phi[r])
    du = np.zeros_like(nominal.inputs)
    for j, G in gains:
        du[j] = eps_u * np.sign(G[r])
    return dx0, du


__all__ = [
    "Trajectory", "RefinementReport", "BoundConstants", "DeviationCheck", "simulate",
    "extract", "synthesize", "deviation_bound_constants", "check_deviation_bound",
    "aligned_perturbation", "LeftDomainError", "ExtractionError", "StepLimitError",
    "SoundnessError",
]
