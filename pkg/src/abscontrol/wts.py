"""Finite weighted transition systems, paths, layered strategies and their costs.

Weights are extended non-negative reals: ``math.inf`` is a legal weight and
addition saturates, which plain float arithmetic already gives us.
"""

from dataclasses import dataclass, field
from functools import cached_property
import math

import numpy as np

INF = math.inf
DEFAULT_PATH_CAP = 10 ** 6


class InvalidPathError(ValueError):
    pass


class PathExplosionError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class FiniteWts:
    """Finite weighted transition system over integer states and inputs.

    ``edges`` is an ``(m, 3)`` int array of ``(state, input, successor)``
    triples sorted lexicographically, with ``weights`` aligned to it.
    """

    n_states: int
    n_inputs: int
    edges: np.ndarray
    weights: np.ndarray
    labels: tuple
    init_states: frozenset = frozenset()
    sink: int = None
    state_names: tuple = None
    input_names: tuple = None

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        weights = np.asarray(self.weights, dtype=float).ravel()
        if edges.shape[0] != weights.size:
            raise ValueError("one weight per transition required")
        if np.any(weights < 0) or np.any(np.isnan(weights)):
            raise ValueError("weights must be non-negative (or +inf)")
        if edges.size and (edges[:, [0, 2]].min() < 0 or edges[:, [0, 2]].max() >= self.n_states
                           or edges[:, 1].min() < 0 or edges[:, 1].max() >= self.n_inputs):
            raise ValueError("transition refers to an unknown state or input")
        order = np.lexsort((edges[:, 2], edges[:, 1], edges[:, 0]))
        edges, weights = edges[order], weights[order]
        if edges.shape[0] > 1:
            dup = np.all(edges[1:] == edges[:-1], axis=1)
            if dup.any():
                raise ValueError("duplicate transition")
        edges.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "weights", weights)
        if len(self.labels) != self.n_states:
            raise ValueError("label must be total on states")
        object.__setattr__(self, "labels", tuple(self.labels))
        init = frozenset(int(s) for s in self.init_states)
        if any(s < 0 or s >= self.n_states for s in init):
            raise ValueError("initial state outside the state set")
        object.__setattr__(self, "init_states", init)

    @classmethod
    def from_transitions(cls, n_states, n_inputs, transitions, labels, **kw):
        """Build from an iterable of ``(s, u, s2, weight)``."""
        transitions = list(transitions)
        if transitions:
            e = np.array([t[:3] for t in transitions], dtype=np.int64)
            w = np.array([t[3] for t in transitions], dtype=float)
        else:
            e = np.zeros((0, 3), dtype=np.int64)
            w = np.zeros(0)
        return cls(n_states, n_inputs, e, w, tuple(labels), **kw)

    @property
    def propositions(self):
        return frozenset(self.labels)

    @cached_property
    def _succ(self):
        table = {}
        for (s, u, t), w in zip(self.edges.tolist(), self.weights.tolist()):
            table.setdefault((s, u), []).append((t, w))
        return table

    @cached_property
    def _enabled(self):
        out = [[] for _ in range(self.n_states)]
        for s, u in self._succ:
            out[s].append(u)
        return tuple(tuple(sorted(v)) for v in out)

    def successors(self, s, u):
        """List of ``(successor, weight)`` for the pair; empty if not enabled."""
        return self._succ.get((s, u), [])

    def enabled(self, s):
        return self._enabled[s]

    def weight(self, s, u, t):
        for t2, w in self.successors(s, u):
            if t2 == t:
                return w
        raise KeyError((s, u, t))

    def has_transition(self, s, u, t):
        return any(t2 == t for t2, _ in self.successors(s, u))

    def transitions(self):
        for (s, u, t), w in zip(self.edges.tolist(), self.weights.tolist()):
            yield s, u, t, w

    @property
    def n_transitions(self):
        return int(self.edges.shape[0])


@dataclass(frozen=True)
class Path:
    states: tuple
    inputs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(self, "inputs", tuple(int(u) for u in self.inputs))
        if len(self.states) != len(self.inputs) + 1:
            raise InvalidPathError("need exactly one more state than inputs")

    def __len__(self):
        return len(self.inputs)

    @property
    def last(self):
        return self.states[-1]

    def extend(self, u, s):
        return Path(self.states + (s,), self.inputs + (u,))


def path_cost(system, path):
    """Sum of transition weights along ``path`` (0 for a single state)."""
    total = 0.0
    for j, u in enumerate(path.inputs):
        s, t = path.states[j], path.states[j + 1]
        try:
            total += system.weight(s, u, t)
        except KeyError:
            raise InvalidPathError(f"({s}, {u}, {t}) is not a transition") from None
    return total


def trace(system, path):
    return tuple(system.labels[s] for s in path.states)


@dataclass(frozen=True, eq=False)
class LayeredStrategy:
    """Value table and input choice per layer, as produced by value iteration.

    ``value[i, s]`` is the best worst-case cost of reaching the final states
    in at most ``i`` steps; ``choice[i, s]`` is the input attaining it (-1
    where undefined). Layer ``horizon`` is the converged one. Following the
    strategy from a state means using layer ``horizon - t`` at step ``t``.
    """

    value: np.ndarray
    choice: np.ndarray
    final_states: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        v = np.asarray(self.value, dtype=float)
        c = np.asarray(self.choice, dtype=np.int64)
        if v.shape != c.shape or v.ndim != 2:
            raise ValueError("value and choice must be (layers, states) arrays")
        v.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "choice", c)
        object.__setattr__(self, "final_states", frozenset(int(s) for s in self.final_states))

    @property
    def horizon(self):
        return self.value.shape[0] - 1

    def cost(self, s):
        return float(self.value[-1, s])

    def input_at(self, layer, s):
        """Input prescribed at ``s`` with ``layer`` steps of budget left, or None."""
        if s in self.final_states or layer <= 0:
            return None
        layer = min(layer, self.horizon)
        u = int(self.choice[layer, s])
        return None if u < 0 else u

    @property
    def memoryless(self):
        """Choice from the converged layer."""
        return self.choice[-1]


def conforming_maximal_paths(system, strategy, start, cap=DEFAULT_PATH_CAP, horizon=None):
    """Every maximal path from ``start`` that conforms to the layered strategy.

    A path stops at a final state or where the strategy is undefined (value
    infinite or budget exhausted).
    """
    budget0 = strategy.horizon if horizon is None else horizon
    out = []
    stack = [(Path((start,)), budget0)]
    while stack:
        path, budget = stack.pop()
        s = path.last
        u = strategy.input_at(budget, s)
        succ = system.successors(s, u) if u is not None else []
        if not succ:
            out.append(path)
            if len(out) > cap:
                raise PathExplosionError(f"more than {cap} conforming paths")
            continue
        for t, _ in reversed(succ):
            stack.append((path.extend(u, t), budget - 1))
    return out


def strategy_cost(system, strategy, start, cap=DEFAULT_PATH_CAP, horizon=None):
    """Worst-case cost over the maximal conforming paths.

    Infinite if any maximal path stops outside the final states.
    """
    worst = 0.0
    for path in conforming_maximal_paths(system, strategy, start, cap, horizon):
        if path.last not in strategy.final_states:
            return INF
        worst = max(worst, path_cost(system, path))
    return worst
