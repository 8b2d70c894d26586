"""Independent reference implementations used to check the package.

None of these import solver code from ``abscontrol``; they are slow,
obviously-correct enumerations. Running this module regenerates the frozen
LP expectations in ``tests/data/lp_cases.json``.
"""

import itertools
import json
from pathlib import Path

import numpy as np

LP_CASES = Path(__file__).parent / "data" / "lp_cases.json"


def vertex_enum_max(c, A, b, tol=1e-9):
    """Max of ``c.x`` over the bounded polytope ``A x <= b`` by vertex enumeration.

    Returns None when no vertex is feasible (the polytope is empty).
    """
    A = np.asarray(A, float)
    b = np.asarray(b, float)
    d = A.shape[1]
    best = None
    for rows in itertools.combinations(range(A.shape[0]), d):
        M = A[list(rows)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, b[list(rows)])
        if np.all(A @ x <= b + tol):
            v = float(c @ x)
            best = v if best is None else max(best, v)
    return best


def random_lp(rng):
    """Random LP in 1..4 dims, bounded by a box, sometimes infeasible."""
    d = int(rng.integers(1, 5))
    m = int(rng.integers(1, 6))
    A = rng.normal(size=(m, d))
    b = rng.normal(size=m) + (0.0 if rng.random() < 0.2 else 1.5)
    box = np.vstack([np.eye(d), -np.eye(d)])
    A = np.vstack([A, box])
    b = np.concatenate([b, np.full(2 * d, 3.0)])
    c = rng.normal(size=d)
    return c, A, b


def freeze_lp_cases(count=200, seed=2024):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        c, A, b = random_lp(rng)
        cases.append({"c": c.tolist(), "A": A.tolist(), "b": b.tolist(),
                      "expected": vertex_enum_max(c, A, b)})
    return cases


def dfs_conforming_paths(system, strategy, start):
    """Recursive enumeration of maximal conforming paths as (states, inputs) tuples."""
    out = []

    def walk(states, inputs, budget):
        s = states[-1]
        u = None
        if s not in strategy.final_states and budget > 0:
            cu = int(strategy.choice[min(budget, strategy.horizon), s])
            u = cu if cu >= 0 else None
        succ = [t for (a, uu, t) in system.edges.tolist() if a == s and uu == u] if u is not None else []
        if not succ:
            out.append((tuple(states), tuple(inputs)))
            return
        for t in succ:
            walk(states + [t], inputs + [u], budget - 1)

    walk([start], [], strategy.horizon)
    return sorted(out)


def system_paths(system, start, length):
    """All paths of exactly ``length`` steps from ``start`` as state tuples."""
    paths = [(start,)]
    for _ in range(length):
        paths = [p + (t,) for p in paths for (s, _, t) in system.edges.tolist() if s == p[-1]]
    return sorted(set(paths))


def accepts(prop, word):
    """Direct NFA run: some run over ``word`` ends in a final-labelled state.

    Moves are letter-matched on the destination label.
    """
    runs = {q for q in prop.init_states if prop.labels[q] == word[0]}
    for lab in word[1:]:
        runs = {b for q in runs for (a, b, letter) in prop.transitions
                if a == q and prop.labels[b] == lab and letter in (None, lab)}
    return any(prop.labels[q] == prop.final for q in runs)


def sample_box(rng, lower, upper, size):
    lower = np.asarray(lower, float)
    upper = np.asarray(upper, float)
    return lower + (upper - lower) * rng.random((size, lower.size))


def interval_image(a, b, xlo, xhi, ulo, uhi):
    """Closed interval ``{a x + b u : x in [xlo, xhi], u in [ulo, uhi]}``."""
    xs = (a * xlo, a * xhi)
    us = (b * ulo, b * uhi)
    return min(xs) + min(us), max(xs) + max(us)


def expanded_deviation(A_seq, B_seq, t):
    """Gains of the initial and input errors in ``x_{t+1}`` from the unrolled recursion.

    ``x_{t+1} = A_t...A_0 x_0 + sum_k A_t...A_{k+1} B_k u_k``; bounding each
    product of norms separately gives the constants.
    """
    norm = lambda M: float(np.abs(np.atleast_2d(M)).sum(axis=1).max())  # noqa: E731
    c1 = 1.0
    for j in range(t + 1):
        c1 *= norm(A_seq[j])
    c2 = 0.0
    for k in range(t + 1):
        g = norm(B_seq[k])
        for j in range(k + 1, t + 1):
            g *= norm(A_seq[j])
        c2 += g
    return c1, c2


if __name__ == "__main__":
    LP_CASES.parent.mkdir(exist_ok=True)
    LP_CASES.write_text(json.dumps(freeze_lp_cases(), indent=0) + "\n")
    print(f"wrote {LP_CASES}")
