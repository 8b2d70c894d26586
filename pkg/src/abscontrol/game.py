"""Regular objectives as reachability games on a product, solved by value iteration."""

from dataclasses import dataclass
import itertools
import logging
import math

import numpy as np

from .wts import INF, FiniteWts, LayeredStrategy, strategy_cost

log = logging.getLogger(__name__)

DEAD_LABEL = "__dead__"


class LabelMismatchError(ValueError):
    pass


class GameTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class PropertyAutomaton:
    """Finite automaton whose accepted traces end in a state labelled ``final``.

    ``transitions`` holds ``(src, dst, letter)`` triples; ``letter`` may be
    None, meaning the move is allowed whenever the destination label matches.
    """

    states: tuple
    labels: dict
    init_states: frozenset
    transitions: tuple
    final: str

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "init_states", frozenset(self.init_states))
        trs = []
        for t in self.transitions:
            src, dst = t[0], t[1]
            letter = t[2] if len(t) > 2 else None
            if src not in self.labels or dst not in self.labels:
                raise ValueError(f"transition {t!r} uses an unknown state")
            trs.append((src, dst, letter))
        object.__setattr__(self, "transitions", tuple(trs))
        if set(self.labels) != set(self.states):
            raise ValueError("every automaton state needs exactly one label")
        if not self.init_states <= set(self.states):
            raise ValueError("initial automaton state not declared")
        if self.final not in self.reachable_labels():
            log.warning("no state labelled %r is reachable in the property automaton", self.final)

    @classmethod
    def reachability(cls, goal, others):
        """Reach a ``goal``-labelled state; other labels are unconstrained."""
        names = [f"q_{lab}" for lab in others] + ["q_goal"]
        labels = {f"q_{lab}": lab for lab in others}
        labels["q_goal"] = goal
        trs = [(a, b) for a in names[:-1] for b in names]
        return cls(tuple(names), labels, frozenset(names), tuple(trs), goal)

    def reachable_labels(self):
        seen = set(self.init_states)
        stack = list(seen)
        while stack:
            q = stack.pop()
            for a, b, _ in self.transitions:
                if a == q and b not in seen:
                    seen.add(b)
                    stack.append(b)
        return {self.labels[q] for q in seen}

    def moves(self, q, label):
        """Automaton successors of ``q`` on reading a state labelled ``label``."""
        return sorted({b for a, b, letter in self.transitions
                       if a == q and self.labels[b] == label and letter in (None, label)},
                      key=self.states.index)

    def accepts(self, word):
        """Whether a trace (sequence of labels) belongs to the property."""
        if not word:
            return False
        current = {q for q in self.init_states if self.labels[q] == word[0]}
        for lab in word[1:]:
            current = {b for q in current for b in self.moves(q, lab)}
            if not current:
                return False
        return any(self.labels[q] == self.final for q in current)


@dataclass(frozen=True, eq=False)
class ProductGame:
    """Reachability game produced by :func:`reduce_reach`.

    ``back_map[s]`` is ``(system_state, automaton_state)`` or None for the
    dead state.
    """

    wts: FiniteWts
    final_states: frozenset
    back_map: tuple
    dead_state: int
    index: dict

    @property
    def n_states(self):
        return self.wts.n_states

    def state_of(self, system_state, automaton_state):
        return self.index[(system_state, automaton_state)]

    def initial_for(self, system_state, prop):
        """Product states pairing ``system_state`` with a matching initial automaton state."""
        return [self.index[(system_state, q)] for q in prop.states
                if q in prop.init_states and (system_state, q) in self.index]


def reduce_reach(system, prop):
    """Product of a finite system with the property automaton plus a dead state."""
    labels_s = system.labels
    pairs = [(s1, q) for s1 in range(system.n_states) for q in prop.states
             if labels_s[s1] == prop.labels[q]]
    index = {pq: i for i, pq in enumerate(pairs)}
    dead = len(pairs)
    n = dead + 1

    init = [index[(s1, q)] for s1 in sorted(system.init_states) for q in prop.states
            if q in prop.init_states and (s1, q) in index]
    if system.init_states and not init:
        raise LabelMismatchError("no initial product state: initial labels do not match")

    move_cache = {}

    def moves(q, lab):
        key = (q, lab)
        if key not in move_cache:
            move_cache[key] = prop.moves(q, lab)
        return move_cache[key]

    by_state = {}
    for q_pair, i in index.items():
        by_state.setdefault(q_pair[0], []).append((q_pair[1], i))

    src, inp, dst, wts = [], [], [], []
    E = system.edges
    W = system.weights
    for k in range(E.shape[0]):
        s1, u, t1 = int(E[k, 0]), int(E[k, 1]), int(E[k, 2])
        w = float(W[k])
        lab_t = labels_s[t1]
        for q, i in by_state.get(s1, ()):
            targets = moves(q, lab_t)
            if targets:
                for q2 in targets:
                    src.append(i); inp.append(u); dst.append(index[(t1, q2)]); wts.append(w)
            else:
                src.append(i); inp.append(u); dst.append(dead); wts.append(INF)
    for u in range(system.n_inputs):
        src.append(dead); inp.append(u); dst.append(dead); wts.append(INF)

    edges = np.array([src, inp, dst], dtype=np.int64).T
    weights = np.array(wts, dtype=float)
    # several automaton moves can collapse onto one dead edge
    key = edges[:, 0] * (system.n_inputs * n) + edges[:, 1] * n + edges[:, 2]
    _, first = np.unique(key, return_index=True)
    edges, weights = edges[first], weights[first]

    labels = tuple(labels_s[s1] for s1, _ in pairs) + (DEAD_LABEL,)
    final = frozenset(i for (s1, q), i in index.items() if prop.labels[q] == prop.final)
    wts_p = FiniteWts(n, system.n_inputs, edges, weights, labels, frozenset(init), sink=dead,
                      state_names=tuple(pairs) + ("dead",), input_names=system.input_names)
    return ProductGame(wts_p, final, tuple(pairs) + (None,), dead, index)


def _group_structure(wts):
    """Edge groups per (state, input) pair, in lexicographic order."""
    E = wts.edges
    if E.shape[0] == 0:
        return (np.zeros(0, np.int64),) * 3
    new = np.ones(E.shape[0], dtype=bool)
    new[1:] = np.any(E[1:, :2] != E[:-1, :2], axis=1)
    starts = np.flatnonzero(new)
    return starts, E[starts, 0], E[starts, 1]


def solve_finite_game(game, start=None, max_layers=None):
    """Min-max value iteration for reaching ``game.final_states``.

    Returns ``(cost, strategy)``; the strategy is None when ``start`` cannot
    be won. With ``start=None`` the strategy is always returned and the cost
    is NaN.
    """
    wts = game.wts
    n = wts.n_states
    final = np.zeros(n, dtype=bool)
    final[list(game.final_states)] = True
    E, W = wts.edges, wts.weights
    starts, g_state, g_input = _group_structure(wts)

    # final states are absorbing: their edges play no role
    keep_group = ~final[g_state]
    value = np.where(final, 0.0, INF)
    choice = np.full(n, -1, dtype=np.int64)
    values = [value]
    choices = [choice]
    horizon = n if max_layers is None else min(n, max_layers)
    for _ in range(horizon):
        prev = values[-1]
        cand = W + prev[E[:, 2]] if E.shape[0] else np.zeros(0)
        gmax = np.maximum.reduceat(cand, starts) if starts.size else np.zeros(0)
        gs, gu, gv = g_state[keep_group], g_input[keep_group], gmax[keep_group]
        new_val = np.where(final, 0.0, INF)
        new_choice = np.full(n, -1, dtype=np.int64)
        if gs.size:
            order = np.lexsort((gu, gv, gs))
            first = np.ones(order.size, dtype=bool)
            first[1:] = gs[order][1:] != gs[order][:-1]
            best = order[first]
            s_best = gs[best]
            v_best = gv[best]
            fin = np.isfinite(v_best)
            new_val[s_best] = v_best
            new_choice[s_best[fin]] = gu[best][fin]
        values.append(new_val)
        choices.append(new_choice)
        if np.array_equal(new_val, prev):
            break
    strategy = LayeredStrategy(np.vstack(values), np.vstack(choices), game.final_states)
    if start is None:
        return math.nan, strategy
    cost = float(strategy.value[-1, start])
    if not math.isfinite(cost):
        return INF, None
    return cost, strategy


def brute_force_game(game, start, max_states=8, method="tree"):
    """Exhaustive oracle for :func:`solve_finite_game`.

    ``method="tree"`` searches the full game tree of histories up to ``|S|``
    steps, i.e. minimises over every history-dependent strategy of that
    horizon. ``method="strategies"`` literally enumerates every layered
    strategy (one input per state per layer) and scores each with
    :func:`strategy_cost`; it is only practical for a few states.
    """
    wts = game.wts
    n = wts.n_states
    if n > max_states:
        raise GameTooLargeError(f"{n} states exceeds the oracle cap of {max_states}")
    final = game.final_states

    if method == "strategies":
        slots = [(i, s) for i in range(1, n + 1) for s in range(n)
                 if s not in final and wts.enabled(s)]
        options = [wts.enabled(s) for _, s in slots]
        best = INF
        for combo in itertools.product(*options):
            choice = np.full((n + 1, n), -1, dtype=np.int64)
            for (i, s), u in zip(slots, combo):
                choice[i, s] = u
            strat = LayeredStrategy(np.zeros((n + 1, n)), choice, final)
            best = min(best, strategy_cost(wts, strat, start))
        return best

    def value(s, budget):
        if s in final:
            return 0.0
        if budget == 0:
            return INF
        best = INF
        for u in wts.enabled(s):
            worst = 0.0
            for t, w in wts.successors(s, u):
                if w == INF:
                    worst = INF
                    break
                worst = max(worst, w + value(t, budget - 1))
                if worst >= best:
                    break
            best = min(best, worst)
        return best

    return value(start, n)
