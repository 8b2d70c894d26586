"""Dense two-phase simplex for the small linear programs used by the abstraction.

Problems here have at most a handful of variables (state plus input
dimension) and a few dozen rows, so a tableau method with Bland's rule is
both fast enough and easy to audit.
"""

import numpy as np

TOL = 1e-9
MAX_ITER = 100_000
# a strict system is declared nonempty when its common slack exceeds this
STRICT_TOL = 1e-12


class LPError(Exception):
    pass


class InfeasibleError(LPError):
    pass


class UnboundedError(LPError):
    pass


class DegenerateError(LPError):
    """Raised when the pivot count exceeds the iteration cap."""


def _pivot(T, basis, r, c):
    row = T[r] / T[r, c]
    T -= np.outer(T[:, c], row)
    T[r] = row
    basis[r] = c


def _run(T, basis, ncols, tol, max_iter):
    """Maximize the objective encoded in the last row of ``T``.

    Only the first ``ncols`` columns may enter the basis. Returns False if
    the problem is unbounded.
    """
    m = T.shape[0] - 1
    for _ in range(max_iter):
        entering = np.flatnonzero(T[-1, :ncols] < -tol)
        if entering.size == 0:
            return True
        c = entering[0]
        colv = T[:m, c]
        rows = np.flatnonzero(colv > tol)
        if rows.size == 0:
            return False
        ratios = T[rows, -1] / colv[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        r = ties[0] if ties.size == 1 else min(ties, key=lambda i: basis[i])
        _pivot(T, basis, r, c)
    raise DegenerateError(f"simplex exceeded {max_iter} pivots")


def _phase_one(G, h, tol, max_iter):
    """Build a feasible tableau for ``G y <= h, y >= 0``.

    Returns ``(T, basis)`` with the artificial columns removed and an empty
    objective row, or raises InfeasibleError.
    """
    m, n = G.shape
    neg = h < 0
    n_art = int(neg.sum())
    width = n + m + n_art + 1
    T = np.zeros((m + 1, width))
    T[:m, :n] = G
    T[:m, n:n + m] = np.eye(m)
    T[:m, -1] = h
    T[:m][neg] *= -1.0
    basis = list(range(n, n + m))
    if n_art:
        art_rows = np.flatnonzero(neg)
        T[art_rows, n + m + np.arange(n_art)] = 1.0
        for k, r in enumerate(art_rows):
            basis[r] = n + m + k
        T[-1, n + m:n + m + n_art] = 1.0
        T[-1] -= T[art_rows].sum(axis=0)
        _run(T, basis, width - 1, tol, max_iter)
        if T[-1, -1] < -tol * max(1.0, np.abs(h).max()):
            raise InfeasibleError("constraints are infeasible")
        keep = []
        for r in range(m):
            if basis[r] >= n + m:
                cand = np.flatnonzero(np.abs(T[r, :n + m]) > tol)
                if cand.size == 0:
                    continue  # redundant row
                _pivot(T, basis, r, cand[0])
            keep.append(r)
        if len(keep) < m:
            T = np.vstack([T[keep], T[-1:]])
            basis = [basis[r] for r in keep]
        T = np.delete(T, np.s_[n + m:n + m + n_art], axis=1)
    T[-1] = 0.0
    return T, basis


def _prepare(G, h, tol):
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    if G.shape[0] == 0:
        return G, h
    scale = np.abs(G).max(axis=1)
    zero = scale == 0
    if zero.any():
        if np.any(h[zero] < -tol):
            raise InfeasibleError("constraint 0 <= b with b < 0")
        scale[zero] = 1.0
    return G / scale[:, None], h / scale


class _Problem:
    """``G y <= h, y >= 0`` after phase one, ready for several objectives."""

    def __init__(self, G, h, tol=TOL, max_iter=MAX_ITER):
        G, h = _prepare(G, h, tol)
        self.n = G.shape[1]
        self.tol = tol
        self.max_iter = max_iter
        self.T, self.basis = _phase_one(G, h, tol, max_iter)

    def maximize(self, c):
        """Phase two for objective ``c``; returns ``(value, y)``."""
        c = np.asarray(c, dtype=float)
        n = self.n
        T = self.T.copy()
        basis = list(self.basis)
        T[-1, :n] = -c
        for r, b in enumerate(basis):
            if b < n and c[b] != 0.0:
                T[-1] += c[b] * T[r]
        if not _run(T, basis, T.shape[1] - 1, self.tol, self.max_iter):
            raise UnboundedError("objective is unbounded")
        y = np.zeros(T.shape[1] - 1)
        y[basis] = T[:-1, -1]
        y = np.maximum(y[:n], 0.0)
        return float(c @ y), y


def simplex(objectives, G, h, tol=TOL, max_iter=MAX_ITER):
    """Solve ``max c.y  s.t.  G y <= h, y >= 0`` for each ``c`` in objectives.

    Phase one is run once and shared by all objectives. Returns a list of
    ``(value, y)`` pairs; an empty objective list only checks feasibility.
    """
    prob = _Problem(G, h, tol, max_iter)
    return [prob.maximize(c) for c in objectives]


class _Shifted:
    """``{A z <= b, lower <= z <= upper}`` rewritten in the ``y >= 0`` form.

    Variables with a finite lower bound are shifted, free ones are split
    into positive and negative parts.
    """

    def __init__(self, A, b, lower, upper, tol, max_iter):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        d = A.shape[1]
        lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, float)
        upper = np.full(d, np.inf) if upper is None else np.asarray(upper, float)
        if np.any(lower > upper + tol):
            raise InfeasibleError("empty variable bounds")
        bounded = np.isfinite(lower)
        fin_up = np.isfinite(upper)
        if bounded.all():
            self.S = None
            self.offset = lower
            rows = [A, np.eye(d)[fin_up]]
            rhs = [b - A @ lower, upper[fin_up] - lower[fin_up]]
        else:
            free = np.flatnonzero(~bounded)
            S = np.zeros((d, d + free.size))
            S[np.arange(d), np.arange(d)] = 1.0
            S[free, d + np.arange(free.size)] = -1.0
            self.S = S
            self.offset = np.where(bounded, lower, 0.0)
            rows = [A @ S, S[fin_up]]
            rhs = [b - A @ self.offset, upper[fin_up] - self.offset[fin_up]]
        self.prob = _Problem(np.vstack(rows), np.concatenate(rhs), tol, max_iter)

    def maximize(self, c):
        c = np.asarray(c, dtype=float)
        if self.S is None:
            _, y = self.prob.maximize(c)
            z = self.offset + y
        else:
            _, y = self.prob.maximize(c @ self.S)
            z = self.offset + self.S @ y
        return float(c @ z), z


def solve(objectives, A, b, lower=None, upper=None, tol=TOL, max_iter=MAX_ITER):
    """Maximize each objective over ``{z : A z <= b, lower <= z <= upper}``.

    Returns ``[(value, z), ...]``; raises InfeasibleError or UnboundedError.
    """
    prob = _Shifted(A, b, lower, upper, tol, max_iter)
    return [prob.maximize(c) for c in objectives]


def feasible(A, b, lower=None, upper=None, tol=TOL):
    try:
        _Shifted(A, b, lower, upper, tol, MAX_ITER)
    except InfeasibleError:
        return False
    return True


def solve_strict(objectives, A, b, strict, lower, upper, lower_open=None,
                 tol=TOL, max_iter=MAX_ITER, skip_if_empty=False):
    """Like :func:`solve` but with some rows (and lower bounds) strict.

    Strictness is decided by maximising a common slack ``delta`` in
    ``[0, 1]`` added to every strict row: the set is nonempty iff the
    optimal slack exceeds ``STRICT_TOL``. Objectives are maximised over the
    closure, which has the same supremum. Returns ``(slack, results)`` and
    raises InfeasibleError when even the closure is empty. With
    ``skip_if_empty`` the objectives are skipped (results is None) when the
    strict system is empty.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    d = A.shape[1]
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    strict = np.asarray(strict, dtype=bool).ravel()
    G = np.hstack([A, strict[:, None].astype(float)])
    h = b
    if lower_open is not None:
        opened = np.flatnonzero(np.asarray(lower_open, dtype=bool))
        if opened.size:
            R = np.zeros((opened.size, d + 1))
            R[np.arange(opened.size), opened] = -1.0
            R[:, -1] = 1.0
            G = np.vstack([G, R])
            h = np.concatenate([b, -lower[opened]])
    prob = _Shifted(G, h, np.append(lower, 0.0), np.append(upper, 1.0), tol, max_iter)
    slack_obj = np.zeros(d + 1)
    slack_obj[-1] = 1.0
    slack = prob.maximize(slack_obj)[0]
    if skip_if_empty and slack <= STRICT_TOL:
        return slack, None
    out = []
    for c in objectives:
        v, z = prob.maximize(np.append(np.asarray(c, float), 0.0))
        out.append((v, z[:d]))
    return slack, out
