"""Boxes, polyhedra, affine maps, convex piecewise-linear costs and gridding."""

from dataclasses import dataclass, field
from functools import cached_property
from fractions import Fraction
import math

import numpy as np

from . import lp
from .lp import InfeasibleError, UnboundedError  # noqa: F401  (re-exported)


def as_fraction(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v.strip())
    return Fraction(repr(float(v)))


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box ``{x : lower <= x <= upper}``.

    ``lower_open[i]`` marks the lower face of axis ``i`` as excluded, which
    is how half-open grid cells ``(lo, hi]`` are represented. LP code always
    works with the closure.
    """

    lower: np.ndarray
    upper: np.ndarray
    lower_open: tuple = None
    index: tuple = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValueError("lower/upper dimension mismatch")
        if np.any(lo > hi):
            raise ValueError(f"empty box: {lo} > {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        flags = self.lower_open
        if flags is None:
            flags = (False,) * lo.size
        if len(flags) != lo.size:
            raise ValueError("lower_open has wrong dimension")
        object.__setattr__(self, "lower_open", tuple(bool(f) for f in flags))

    @property
    def dim(self):
        return self.lower.size

    def contains(self, x):
        """Membership honouring the half-open lower faces."""
        x = np.asarray(x, dtype=float)
        for i in range(self.dim):
            if x[i] > self.upper[i]:
                return False
            if self.lower_open[i]:
                if x[i] <= self.lower[i]:
                    return False
            elif x[i] < self.lower[i]:
                return False
        return True

    def contains_closed(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def center(self):
        return 0.5 * (self.lower + self.upper)

    def to_polyhedron(self):
        d = self.dim
        return Polyhedron(np.vstack([np.eye(d), -np.eye(d)]),
                          np.concatenate([self.upper, -self.lower]))

    def __repr__(self):
        parts = []
        for i in range(self.dim):
            left = "(" if self.lower_open[i] else "["
            parts.append(f"{left}{self.lower[i]:g}, {self.upper[i]:g}]")
        return "Box(" + " x ".join(parts) + ")"


@dataclass(frozen=True, eq=False)
class Polyhedron:
    """``{x : A x <= b}``, where rows flagged in ``strict`` use ``<``."""

    A: np.ndarray
    b: np.ndarray
    strict: np.ndarray = None

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float)
        A = A.reshape(b.size, A.shape[-1] if A.ndim == 2 else -1)
        strict = np.zeros(b.size, bool) if self.strict is None else np.asarray(self.strict, bool).ravel()
        if strict.size != b.size:
            raise ValueError("one strictness flag per row required")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "strict", strict)

    @classmethod
    def universe(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def dim(self):
        return self.A.shape[1]

    @property
    def constraints(self):
        return [(self.A[i], float(self.b[i])) for i in range(self.b.size)]

    def closure(self):
        return Polyhedron(self.A, self.b)

    def intersect(self, other):
        if other.dim != self.dim:
            raise ValueError("dimension mismatch")
        return Polyhedron(np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]),
                          np.concatenate([self.strict, other.strict]))

    def contains(self, x, tol=0.0):
        """Membership; ``tol`` relaxes the non-strict rows only."""
        if self.b.size == 0:
            return True
        ax = self.A @ np.asarray(x, float)
        return bool(np.all(np.where(self.strict, ax < self.b, ax <= self.b + tol)))

    def contains_box(self, box, tol=1e-12):
        """True if the closed box lies inside the polyhedron."""
        if self.b.size == 0:
            return True
        worst = np.where(self.A > 0, self.A * box.upper, self.A * box.lower).sum(axis=1)
        return bool(np.all(np.where(self.strict, worst < self.b, worst <= self.b + tol)))


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``x' = A x + B u``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(A.shape[0], -1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise ValueError(f"bad map dimensions A{A.shape} B{B.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def p(self):
        return self.B.shape[1]

    @property
    def M(self):
        return np.hstack([self.A, self.B])

    def __call__(self, x, u):
        return self.A @ np.asarray(x, float) + self.B @ np.asarray(u, float)


@dataclass(frozen=True, eq=False)
class ConvexPwlFunction:
    """``J(x, u) = max_k (a_k . x + b_k . u + c_k)``."""

    state_coeffs: np.ndarray
    input_coeffs: np.ndarray
    constants: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.constants, dtype=float).ravel()
        if c.size == 0:
            raise ValueError("a convex PWL function needs at least one piece")
        a = np.asarray(self.state_coeffs, dtype=float).reshape(c.size, -1)
        b = np.asarray(self.input_coeffs, dtype=float).reshape(c.size, -1)
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "state_coeffs", a)
        object.__setattr__(self, "input_coeffs", b)
        object.__setattr__(self, "constants", c)

    @classmethod
    def one_norm_of_input(cls, n, p, weight=1.0):
        """``weight * ||u||_1`` expanded into its ``2**p`` sign pieces."""
        signs = np.array(list(np.ndindex(*(2,) * p)), dtype=float) * -2 + 1
        k = signs.shape[0]
        return cls(np.zeros((k, n)), weight * signs, np.zeros(k))

    @property
    def n_pieces(self):
        return self.constants.size

    def __call__(self, x, u):
        x = np.asarray(x, float)
        u = np.asarray(u, float)
        return float(np.max(self.state_coeffs @ x + self.input_coeffs @ u + self.constants))

    def pieces(self):
        return [(self.state_coeffs[k], self.input_coeffs[k], float(self.constants[k]))
                for k in range(self.n_pieces)]

    def after_map(self, amap):
        """Pieces as linear functionals of ``z = (x, u)`` with ``x' = A x + B u``.

        Returns ``(C, c0)`` such that ``J(A x + B u, u) = max_k C[k] . z + c0[k]``.
        """
        C = np.hstack([self.state_coeffs @ amap.A,
                       self.state_coeffs @ amap.B + self.input_coeffs])
        return C, self.constants.copy()


# --------------------------------------------------------------------------
# Grid


@dataclass(frozen=True)
class Lattice:
    """Uniform grid of ``domain`` anchored at its lower corner.

    Cell ``k`` on axis ``i`` is ``(lo + k*eps, lo + (k+1)*eps] ∩ domain``,
    except that cell 0 is closed at ``lo``. Bounds are computed in exact
    rational arithmetic so that nested lattices share faces bit-for-bit.
    """

    lower: tuple  # Fractions
    upper: tuple
    eps: tuple
    counts: tuple
    offsets: tuple = field(default=None)

    @classmethod
    def build(cls, domain_lower, domain_upper, epsilon):
        lo = tuple(as_fraction(v) for v in domain_lower)
        hi = tuple(as_fraction(v) for v in domain_upper)
        if isinstance(epsilon, (list, tuple)):
            eps = tuple(as_fraction(e) for e in epsilon)
        else:
            eps = (as_fraction(epsilon),) * len(lo)
        if len(eps) != len(lo):
            raise ValueError("epsilon has wrong dimension")
        if any(e <= 0 for e in eps):
            raise ValueError("epsilon must be positive")
        counts = tuple(max(1, math.ceil((h - l) / e)) for l, h, e in zip(lo, hi, eps))
        offsets = tuple(math.floor(l / e) for l, e in zip(lo, eps))
        return cls(lo, hi, eps, counts, offsets)

    @classmethod
    def from_counts(cls, domain_lower, domain_upper, counts):
        lo = [as_fraction(v) for v in domain_lower]
        hi = [as_fraction(v) for v in domain_upper]
        eps = [(h - l) / int(c) for l, h, c in zip(lo, hi, counts)]
        return cls.build(lo, hi, eps)

    @property
    def dim(self):
        return len(self.counts)

    @property
    def size(self):
        return math.prod(self.counts)

    @cached_property
    def _edges(self):
        out = []
        for lo, hi, e, c in zip(self.lower, self.upper, self.eps, self.counts):
            out.append(np.array([float(min(lo + k * e, hi)) for k in range(c + 1)]))
        return out

    def edges(self, axis):
        """Float cell boundaries on one axis (``counts[axis] + 1`` values)."""
        return self._edges[axis]

    def cell(self, k):
        lo = np.empty(self.dim)
        hi = np.empty(self.dim)
        for i, ki in enumerate(k):
            e = self.edges(i)
            lo[i], hi[i] = e[ki], e[ki + 1]
        flags = tuple(ki > 0 for ki in k)
        index = tuple(ki + o for ki, o in zip(k, self.offsets))
        return Box(lo, hi, flags, index)

    def cells(self):
        edges = [self.edges(i) for i in range(self.dim)]
        out = []
        for k in np.ndindex(*self.counts):
            lo = np.array([edges[i][ki] for i, ki in enumerate(k)])
            hi = np.array([edges[i][ki + 1] for i, ki in enumerate(k)])
            out.append(Box(lo, hi, tuple(ki > 0 for ki in k),
                           tuple(ki + o for ki, o in zip(k, self.offsets))))
        return out

    def locate(self, x):
        """Local multi-index of the half-open cell containing ``x`` (or None)."""
        x = np.asarray(x, float)
        out = []
        for i in range(self.dim):
            e = self.edges(i)
            xi = x[i]
            if xi < e[0] or xi > e[-1]:
                return None
            k = int(np.searchsorted(e, xi, side="left")) - 1
            out.append(min(max(k, 0), self.counts[i] - 1))
        return tuple(out)

    def refine(self, factor=2):
        return Lattice.build(self.lower, self.upper, tuple(e / factor for e in self.eps))

    def is_aligned(self, value, axis):
        v = as_fraction(value)
        if v == self.lower[axis] or v == self.upper[axis]:
            return True
        q = (v - self.lower[axis]) / self.eps[axis]
        return q.denominator == 1


def grid(domain, epsilon):
    """Split ``domain`` into half-open cells of width ``epsilon``.

    ``epsilon`` may be a scalar or a per-axis sequence. Cells carry their
    lattice index vector in ``Box.index``.
    """
    return Lattice.build(domain.lower, domain.upper, epsilon).cells()


# --------------------------------------------------------------------------
# LP wrappers


def _bounds(poly):
    """Variable bounds implied by single-variable rows (used for LP shifting)."""
    d = poly.dim
    lower = np.full(d, -np.inf)
    upper = np.full(d, np.inf)
    A, b = poly.A, poly.b
    nz = (A != 0).sum(axis=1)
    for r in np.flatnonzero(nz == 1):
        j = int(np.flatnonzero(A[r])[0])
        v = b[r] / A[r, j]
        if A[r, j] > 0:
            upper[j] = min(upper[j], v)
        else:
            lower[j] = max(lower[j], v)
    return lower, upper


def lp_feasible(constraints):
    """True iff the polyhedron (strict rows included) is nonempty."""
    lower, upper = _bounds(constraints)
    if not constraints.strict.any():
        return lp.feasible(constraints.A, constraints.b, lower, upper)
    try:
        slack, _ = lp.solve_strict([], constraints.A, constraints.b, constraints.strict,
                                   lower, upper)
    except lp.InfeasibleError:
        return False
    return slack > lp.STRICT_TOL


def lp_maximize(objective, constraints):
    """Maximize ``objective . z`` over the closed polyhedron; returns ``(value, argmax)``.

    For a nonempty polyhedron with strict rows this is the supremum.
    """
    lower, upper = _bounds(constraints)
    [(value, z)] = lp.solve([np.asarray(objective, float)], constraints.A, constraints.b,
                            lower, upper)
    return value, z


def pwl_maximize(cost, constraints):
    """Maximum of a convex PWL function over a polyhedron in ``(x, u)`` space.

    The max of a convex PWL function over a polytope is the largest of the
    per-piece maxima, so one LP per piece suffices (they share phase one).
    """
    C = np.hstack([cost.state_coeffs, cost.input_coeffs])
    if C.shape[1] != constraints.dim:
        raise ValueError(f"cost acts on {C.shape[1]} variables, polyhedron has {constraints.dim}")
    lower, upper = _bounds(constraints)
    res = lp.solve(list(C), constraints.A, constraints.b, lower, upper)
    return max(v + c for (v, _), c in zip(res, cost.constants))


def image_constraints(cell, input_cell, piece_region, amap, target):
    """Polyhedron over ``z = (x, u)`` for ``x ∈ cell ∩ region, u ∈ input_cell,
    A x + B u ∈ target``; open lower cell faces become strict rows."""
    n, p = amap.n, amap.p
    blocks_A = []
    strict = []
    blocks_b = []
    # x in cell
    blocks_A.append(np.hstack([np.eye(n), np.zeros((n, p))]))
    blocks_b.append(cell.upper)
    blocks_A.append(np.hstack([-np.eye(n), np.zeros((n, p))]))
    blocks_b.append(-cell.lower)
    strict += [False] * n + list(cell.lower_open)
    # u in input cell
    blocks_A.append(np.hstack([np.zeros((p, n)), np.eye(p)]))
    blocks_b.append(input_cell.upper)
    blocks_A.append(np.hstack([np.zeros((p, n)), -np.eye(p)]))
    blocks_b.append(-input_cell.lower)
    strict += [False] * p + list(input_cell.lower_open)
    if piece_region is not None and piece_region.b.size:
        blocks_A.append(np.hstack([piece_region.A, np.zeros((piece_region.b.size, p))]))
        blocks_b.append(piece_region.b)
        strict += list(piece_region.strict)
    M = amap.M
    blocks_A.append(M)
    blocks_b.append(target.upper)
    blocks_A.append(-M)
    blocks_b.append(-target.lower)
    strict += [False] * n + list(target.lower_open)
    return Polyhedron(np.vstack(blocks_A), np.concatenate(blocks_b), strict)
