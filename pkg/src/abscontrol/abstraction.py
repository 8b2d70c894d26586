"""Grid abstractions of piecewise linear systems and weighted simulation checks."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import numpy as np

from . import lp
from .game import DEAD_LABEL
from .geometry import Box, Lattice, as_fraction
from .wts import INF, FiniteWts

TOL = 1e-9


class AbstractionError(ValueError):
    pass


class MisalignedPropositionsError(AbstractionError):
    pass


class EmptyInitialCellError(AbstractionError):
    pass


class NonNestedGridsError(AbstractionError):
    pass


@dataclass(frozen=True, eq=False)
class PwlSystem:
    """Discrete-time piecewise linear system with a convex PWL stage cost.

    ``pieces`` is a sequence of ``(AffineMap, Polyhedron)``; the dynamics of
    the first piece whose (closed) region contains ``x`` apply. Proposition
    boxes use the same half-open convention as grid cells, so labels are
    constant on every aligned cell. Points outside every proposition box get
    ``default_label``.
    """

    state_space: Box
    input_space: Box
    pieces: tuple
    propositions: tuple
    cost: object
    init_set: Box = None
    default_label: str = None
    piece_names: tuple = None

    def __post_init__(self):
        X = self.state_space
        object.__setattr__(self, "pieces", tuple((m, r) for m, r in self.pieces))
        props = []
        for name, boxes in self.propositions:
            fixed = []
            for b in boxes:
                flags = tuple(bool(b.lower[i] > X.lower[i]) for i in range(X.dim))
                fixed.append(Box(b.lower, b.upper, flags))
            props.append((name, tuple(fixed)))
        object.__setattr__(self, "propositions", tuple(props))
        if self.init_set is None:
            object.__setattr__(self, "init_set", X)
        if self.piece_names is None:
            object.__setattr__(self, "piece_names",
                               tuple(f"piece{i}" for i in range(len(self.pieces))))
        for amap, region in self.pieces:
            if amap.n != self.n or amap.p != self.p or region.dim != self.n:
                raise ValueError("piece dimensions do not match the state/input spaces")

    @property
    def n(self):
        return self.state_space.dim

    @property
    def p(self):
        return self.input_space.dim

    @property
    def label_names(self):
        names = [name for name, _ in self.propositions]
        if self.default_label is not None and self.default_label not in names:
            names.append(self.default_label)
        return names

    def piece_index(self, x, tol=0.0):
        for i, (_, region) in enumerate(self.pieces):
            if region.contains(x, tol):
                return i
        raise ValueError(f"no piece region contains {x}")

    def label(self, x):
        for name, boxes in self.propositions:
            if any(b.contains(x) for b in boxes):
                return name
        if self.default_label is None:
            raise ValueError(f"no proposition holds at {x}")
        return self.default_label

    def in_domain(self, x, tol=TOL):
        return self.state_space.contains_closed(x, tol)

    def step(self, x, u):
        i = self.piece_index(x)
        return self.pieces[i][0](x, u), i

    def proposition_box(self, name):
        for n_, boxes in self.propositions:
            if n_ == name:
                return boxes
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class AbstractionResult:
    wts: FiniteWts
    lattice: Lattice
    input_lattice: Lattice
    cells: tuple  # Box per abstract state, None for the sink
    cell_index: dict  # lattice index vector -> abstract state
    input_cells: tuple
    input_index: dict
    initial_abstract_state: int
    merged: dict = field(default_factory=dict)  # proposition name -> abstract state

    @property
    def epsilon(self):
        return self.lattice.eps

    @property
    def input_epsilon(self):
        return self.input_lattice.eps

    @property
    def sink(self):
        return self.wts.sink

    def locate(self, x):
        """Abstract state of the half-open cell containing ``x`` (None outside)."""
        k = self.lattice.locate(x)
        if k is None:
            return None
        d = tuple(ki + o for ki, o in zip(k, self.lattice.offsets))
        return self.cell_index[d]

    def locate_input(self, u):
        k = self.input_lattice.locate(u)
        if k is None:
            return None
        return self.input_index[tuple(ki + o for ki, o in zip(k, self.input_lattice.offsets))]

    def states_containing(self, x, tol=TOL):
        """All non-sink states whose closure contains ``x`` up to ``tol``."""
        return [s for s, b in enumerate(self.cells) if b is not None and b.contains_closed(x, tol)]


@dataclass(frozen=True)
class SimulationWitness:
    alpha: frozenset
    beta: frozenset


@dataclass(frozen=True)
class SimulationCheck:
    ok: bool
    violation: tuple = None
    reason: str = ""

    def __bool__(self):
        return self.ok


# --------------------------------------------------------------------------
# construction


def _check_alignment(system, lattice, merge):
    bad = []
    for name, boxes in system.propositions:
        for b in boxes:
            for i in range(system.n):
                for v in (b.lower[i], b.upper[i]):
                    if not lattice.is_aligned(v, i):
                        bad.append((name, i, v))
    if bad:
        name, i, v = bad[0]
        raise MisalignedPropositionsError(
            f"proposition {name!r} has a face at {v} on axis {i} that is not on the "
            f"grid of width {float(lattice.eps[i])} ({len(bad)} misaligned faces)")
    for name in merge:
        if len(system.proposition_box(name)) != 1:
            raise AbstractionError(f"merged proposition {name!r} must be a single box")


def _touching_range(edges, lo, hi, tol):
    """Local indices of cells whose closure meets ``[lo, hi]``."""
    k0 = int(np.searchsorted(edges, lo - tol, side="left")) - 1
    k1 = int(np.searchsorted(edges, hi + tol, side="right")) - 1
    return max(k0, 0), min(k1, edges.size - 2)


class _Builder:
    """Per-source transition computation; picklable for worker processes."""

    def __init__(self, system, lattice, ulat, cells, cell_of_local, input_cells):
        self.system = system
        self.lattice = lattice
        self.edges = [lattice.edges(i) for i in range(lattice.dim)]
        self.cells = cells
        self.cell_of_local = cell_of_local
        self.input_cells = input_cells
        n, p = system.n, system.p
        self.n, self.p = n, p
        X = system.state_space
        self.X_lo, self.X_hi = X.lower, X.upper
        self.maps = []
        for amap, region in system.pieces:
            C, c0 = system.cost.after_map(amap)
            self.maps.append((amap.M, region, C, c0))

    def _pieces_for(self, box):
        """Pieces meeting the half-open cell; guard is None when the cell is inside."""
        out = []
        for i, (M, region, C, c0) in enumerate(self.maps):
            if region.contains_box(box):
                out.append((i, None))
                continue
            try:
                slack, _ = lp.solve_strict([], region.A, region.b, region.strict,
                                           box.lower, box.upper, box.lower_open)
            except lp.InfeasibleError:
                continue
            if slack > lp.STRICT_TOL:
                out.append((i, region))
        return out

    def source_edges(self, s):
        """All ``(s, v, t, w)`` transitions leaving abstract state ``s``."""
        box = self.cells[s]
        n, p = self.n, self.p
        found = {}
        sink = len(self.cells)
        pieces = self._pieces_for(box)
        for v, ubox in enumerate(self.input_cells):
            zlo = np.concatenate([box.lower, ubox.lower])
            zhi = np.concatenate([box.upper, ubox.upper])
            zopen = box.lower_open + ubox.lower_open
            for i, region in pieces:
                M, _, C, c0 = self.maps[i]
                img_lo = np.where(M > 0, M * zlo, M * zhi).sum(axis=1)
                img_hi = np.where(M > 0, M * zhi, M * zlo).sum(axis=1)
                if region is None:
                    guard = (np.zeros((0, n + p)), np.zeros(0), np.zeros(0, bool))
                else:
                    guard = (np.hstack([region.A, np.zeros((region.b.size, p))]),
                             region.b, region.strict)

                if self._leaves_domain(M, guard, zlo, zhi, zopen, img_lo, img_hi):
                    found[(v, sink)] = INF

                ranges = [_touching_range(self.edges[j], max(img_lo[j], self.X_lo[j]),
                                          min(img_hi[j], self.X_hi[j]), TOL)
                          for j in range(n)]
                if any(r[0] > r[1] for r in ranges):
                    continue
                targets = []
                seen = set()
                for k in np.ndindex(*[r[1] - r[0] + 1 for r in ranges]):
                    t = self.cell_of_local[tuple(r[0] + kk for r, kk in zip(ranges, k))]
                    if t not in seen:
                        seen.add(t)
                        targets.append(t)
                for t in targets:
                    w = self._weight(M, guard, C, c0, zlo, zhi, zopen, img_lo, img_hi,
                                     self.cells[t])
                    if w is not None:
                        key = (v, t)
                        found[key] = max(found.get(key, -INF), w)
        return [(s, v, t, w) for (v, t), w in sorted(found.items())]

    def _leaves_domain(self, M, guard, zlo, zhi, zopen, img_lo, img_hi):
        over = np.flatnonzero(img_hi > self.X_hi + lp.STRICT_TOL)
        under = np.flatnonzero(img_lo < self.X_lo - lp.STRICT_TOL)
        if over.size == 0 and under.size == 0:
            return False
        objs = [M[j] for j in over] + [-M[j] for j in under]
        bounds = [self.X_hi[j] for j in over] + [-self.X_lo[j] for j in under]
        gA, gb, gs = guard
        _, res = lp.solve_strict(objs, gA, gb, gs, zlo, zhi, zopen)
        return any(val > bd + lp.STRICT_TOL * max(1.0, abs(bd)) for (val, _), bd in zip(res, bounds))

    def _weight(self, M, guard, C, c0, zlo, zhi, zopen, img_lo, img_hi, tbox):
        gA, gb, gs = guard
        lo_ok = np.where(tbox.lower_open, img_lo > tbox.lower, img_lo >= tbox.lower)
        if gb.size == 0 and np.all(lo_ok) and np.all(img_hi <= tbox.upper):
            # whole image inside the target: the target rows are redundant
            return float(np.max(np.where(C > 0, C * zhi, C * zlo).sum(axis=1) + c0))
        A = np.vstack([gA, M, -M])
        b = np.concatenate([gb, tbox.upper, -tbox.lower])
        strict = np.concatenate([gs, np.zeros(self.n, bool), tbox.lower_open])
        try:
            slack, res = lp.solve_strict(list(C), A, b, strict, zlo, zhi, zopen,
                                         skip_if_empty=True)
        except lp.InfeasibleError:
            return None
        if res is None:
            return None
        return max(val + c for (val, _), c in zip(res, c0))


def _run_chunk(builder, sources):
    out = []
    for s in sources:
        out.extend(builder.source_edges(s))
    return out


def _input_lattice(system, input_epsilon=None, input_counts=None, epsilon=None):
    U = system.input_space
    if input_counts is not None:
        return Lattice.from_counts(U.lower, U.upper, input_counts)
    eps = input_epsilon if input_epsilon is not None else epsilon
    if not isinstance(eps, (list, tuple)):
        eps = [eps] * system.p
    return Lattice.build(U.lower, U.upper, list(eps))


def cons_abs(system, epsilon, x0, input_epsilon=None, input_counts=None, merge=(), jobs=1):
    """Finite abstraction of ``system`` on the grid of width ``epsilon``.

    Inputs are gridded with ``input_counts`` cells per axis, or width
    ``input_epsilon``, or ``epsilon`` when neither is given. Propositions
    listed in ``merge`` collapse into a single abstract state each.
    Transitions are existential over closures; weights are the supremum of
    the stage cost over each transition; any (cell, input) whose image may
    leave the state space gets an infinite-weight edge to an absorbing sink.
    """
    X = system.state_space
    lattice = Lattice.build(X.lower, X.upper, epsilon)
    ulat = _input_lattice(system, input_epsilon, input_counts, epsilon)
    _check_alignment(system, lattice, merge)

    x0 = np.asarray(x0, dtype=float)
    if not X.contains(x0) and not X.contains_closed(x0):
        raise EmptyInitialCellError(f"x0 = {x0} lies outside the state space")

    merged_boxes = {name: system.proposition_box(name)[0] for name in merge}
    cells = []
    cell_index = {}
    local_to_state = {}
    pending = []
    for k in np.ndindex(*lattice.counts):
        cell = lattice.cell(k)
        lab = system.label(cell.center())
        if lab in merged_boxes:
            pending.append((k, cell.index, lab))
            continue
        local_to_state[k] = len(cells)
        cell_index[cell.index] = len(cells)
        cells.append(cell)
    merged = {}
    for name in merge:
        merged[name] = len(cells)
        cells.append(merged_boxes[name])
    for k, d, lab in pending:
        local_to_state[k] = merged[lab]
        cell_index[d] = merged[lab]
    sink = len(cells)

    input_cells = ulat.cells()
    input_index = {c.index: j for j, c in enumerate(input_cells)}

    builder = _Builder(system, lattice, ulat, cells, local_to_state, input_cells)
    sources = list(range(len(cells)))
    if jobs > 1 and len(sources) > 1:
        chunks = [sources[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_run_chunk, [builder] * len(chunks), chunks))
        transitions = sorted(t for part in parts for t in part)
    else:
        transitions = _run_chunk(builder, sources)
    transitions += [(sink, v, sink, INF) for v in range(len(input_cells))]

    labels = [system.label(c.center()) if c is not None else None for c in cells]
    for name, s in merged.items():
        labels[s] = name
    labels.append(DEAD_LABEL)

    k0 = lattice.locate(x0)
    init_state = local_to_state[k0]
    init_states = {init_state}
    I = system.init_set
    for s, c in enumerate(cells):
        if _halfopen_meets(c, I):
            init_states.add(s)

    wts = FiniteWts.from_transitions(
        sink + 1, len(input_cells), transitions, labels, init_states=init_states, sink=sink,
        state_names=tuple(c.index if c.index is not None else f"merged:{nm}"
                          for c, nm in zip(cells, _merged_names(cells, merged))) + ("sink",),
        input_names=tuple(c.index for c in input_cells))
    return AbstractionResult(wts, lattice, ulat, tuple(cells) + (None,), cell_index,
                             tuple(input_cells), input_index, init_state, merged)


def _merged_names(cells, merged):
    rev = {s: name for name, s in merged.items()}
    return [rev.get(s) for s in range(len(cells))]


def _halfopen_meets(cell, box):
    for i in range(cell.dim):
        if cell.upper[i] < box.lower[i]:
            return False
        if cell.lower_open[i]:
            if box.upper[i] <= cell.lower[i]:
                return False
        elif box.upper[i] < cell.lower[i]:
            return False
    return True


# --------------------------------------------------------------------------
# simulation


def check_simulation(t1, t2, witness, tol=TOL):
    """Check that ``(alpha, beta)`` is a weighted alternating simulation of t1 by t2.

    Weight comparisons allow ``tol`` of floating-point slack. Returns a
    :class:`SimulationCheck` naming the first violation found.
    """
    alpha = witness.alpha
    by_pair = {}
    for s1, u1, s2, u2 in witness.beta:
        by_pair.setdefault((s1, s2), {}).setdefault(u2, []).append(u1)
    related = {}
    for s1, s2 in alpha:
        related.setdefault(s1, set()).add(s2)

    for s1 in sorted(t1.init_states):
        if not any(s2 in t2.init_states for s2 in related.get(s1, ())):
            return SimulationCheck(False, ("init", s1), "initial state without related initial state")
    for s1, s2 in sorted(alpha):
        if t1.labels[s1] != t2.labels[s2]:
            return SimulationCheck(False, ("label", s1, s2), "related states carry different labels")

    for s1, s2 in sorted(alpha):
        options = by_pair.get((s1, s2), {})
        en1 = set(t1.enabled(s1))
        for u2 in t2.enabled(s2):
            succ2 = t2.successors(s2, u2)
            last = None
            for u1 in sorted(options.get(u2, ())):
                if u1 not in en1:
                    continue
                bad = None
                for s1p, w1 in t1.successors(s1, u1):
                    if not any((s1p, s2p) in alpha and w1 <= w2 + tol for s2p, w2 in succ2):
                        bad = (s1, u1, s1p, s2, u2)
                        break
                if bad is None:
                    break
                last = bad
            else:
                if last is None:
                    return SimulationCheck(False, ("no-input", s1, s2, u2),
                                           "no enabled related input")
                return SimulationCheck(False, last,
                                       "transition not matched with a dominating weight")
    return SimulationCheck(True)


def identity_witness(t):
    alpha = frozenset((s, s) for s in range(t.n_states))
    beta = frozenset((s, u, s, u) for s in range(t.n_states) for u in range(t.n_inputs))
    return SimulationWitness(alpha, beta)


def _nested(fine_lat, coarse_lat):
    if fine_lat.lower != coarse_lat.lower or fine_lat.upper != coarse_lat.upper:
        return False
    for ef, ec in zip(fine_lat.eps, coarse_lat.eps):
        q = ec / ef
        if q.denominator != 1 or q < 1:
            return False
    return True


def canonical_refinement_witness(fine, coarse):
    """Containment witness pairing each fine cell with the coarse cell holding it."""
    if not (_nested(fine.lattice, coarse.lattice) and _nested(fine.input_lattice, coarse.input_lattice)):
        raise NonNestedGridsError("fine grid does not refine the coarse grid")
    if set(fine.merged) != set(coarse.merged):
        raise NonNestedGridsError("merged regions differ")

    def coarse_of(box, locate):
        lo = np.array([float(as_fraction(v)) for v in box.lower])
        probe = 0.5 * (lo + box.upper)
        return locate(probe)

    alpha = set()
    rev = {s: name for name, s in fine.merged.items()}
    for s, box in enumerate(fine.cells):
        if box is None:
            alpha.add((s, coarse.sink))
        elif s in rev:
            alpha.add((s, coarse.merged[rev[s]]))
        else:
            c = coarse_of(box, coarse.locate)
            cbox = coarse.cells[c]
            if np.any(box.lower < cbox.lower) or np.any(box.upper > cbox.upper):
                raise NonNestedGridsError(f"fine cell {box} not inside coarse cell {cbox}")
            alpha.add((s, c))
    uin = {}
    for j, ub in enumerate(fine.input_cells):
        uin[j] = coarse_of(ub, coarse.locate_input)
    beta = set()
    for s, c in alpha:
        for j, jc in uin.items():
            beta.add((s, j, c, jc))
    return SimulationWitness(frozenset(alpha), frozenset(beta))


def concrete_step_covered(abstraction, system, x, u, tol=TOL):
    """Return the abstract triple for a concrete step and its weight, or None if uncovered."""
    s = abstraction.locate(x)
    v = abstraction.locate_input(u)
    x2, _ = system.step(x, u)
    if not system.in_domain(x2, 0.0):
        t = abstraction.sink
    else:
        t = abstraction.locate(x2)
    if not abstraction.wts.has_transition(s, v, t):
        return None
    return (s, v, t), abstraction.wts.weight(s, v, t), system.cost(x2, u)


def abstraction_size(result):
    return result.wts.n_states, result.wts.n_transitions


__all__ = [
    "PwlSystem", "AbstractionResult", "SimulationWitness", "SimulationCheck", "cons_abs",
    "check_simulation", "canonical_refinement_witness", "identity_witness",
    "concrete_step_covered", "AbstractionError", "MisalignedPropositionsError",
    "EmptyInitialCellError", "NonNestedGridsError",
]
