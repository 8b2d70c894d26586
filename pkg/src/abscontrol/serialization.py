"""Problem files, finite-system files, reports and trajectory tables.

Problems and reports are JSON; trajectory tables are CSV. Infinite costs
are written as JSON ``null``; exact rationals (grid widths) as strings.
"""

from dataclasses import dataclass
import csv
from fractions import Fraction
import importlib.resources
import io
import json
import math
from pathlib import Path

import numpy as np

from . import lp
from .abstraction import PwlSystem
from .game import PropertyAutomaton
from .geometry import AffineMap, Box, ConvexPwlFunction, Lattice, Polyhedron, as_fraction
from .synthesis import RefinementReport, Trajectory
from .wts import INF, FiniteWts

BUNDLED = ("linear.json", "twotank.json", "toy_game.json")


class ProblemParseError(ValueError):
    pass


class ProblemValidationError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid problem:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class RunParameters:
    x0: tuple
    epsilon0: tuple  # Fractions per state axis
    max_iterations: int = 1
    input_counts: tuple = None
    refine_inputs: bool = True
    merge: tuple = ()
    name: str = ""


def resolve_path(path):
    """Return ``path``, falling back to the bundled data file of that name."""
    p = Path(path)
    if p.exists():
        return p
    if p.name in BUNDLED:
        return Path(str(importlib.resources.files("abscontrol") / "data" / p.name))
    return p


def load_json(path):
    path = resolve_path(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ProblemParseError(f"{path}: {exc.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemParseError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


# --------------------------------------------------------------------------
# field helpers


def _get(doc, key, where, default=KeyError):
    if key in doc:
        return doc[key]
    if default is KeyError:
        raise ProblemParseError(f"{where}: missing field {key!r}")
    return default


def _vector(value, where, size=None):
    try:
        arr = np.array([float(as_fraction(v)) for v in value], dtype=float)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ProblemParseError(f"{where}: expected a list of numbers") from None
    if size is not None and arr.size != size:
        raise ProblemParseError(f"{where}: expected {size} entries, got {arr.size}")
    return arr


def _matrix(value, where, rows, cols):
    if not isinstance(value, list) or len(value) != rows:
        raise ProblemParseError(f"{where}: expected {rows} rows")
    return np.vstack([_vector(r, f"{where}[{i}]", cols) for i, r in enumerate(value)])


def _box(doc, where, dim=None):
    lo = _vector(_get(doc, "lower", where), f"{where}.lower", dim)
    hi = _vector(_get(doc, "upper", where), f"{where}.upper", lo.size)
    if np.any(lo > hi):
        raise ProblemParseError(f"{where}: lower exceeds upper")
    return Box(lo, hi)


def _epsilon(value, n, where):
    vals = value if isinstance(value, list) else [value] * n
    if len(vals) != n:
        raise ProblemParseError(f"{where}: expected a scalar or {n} entries")
    try:
        eps = tuple(as_fraction(v) for v in vals)
    except (ValueError, ZeroDivisionError):
        raise ProblemParseError(f"{where}: expected rationals such as \"1/10\"") from None
    if any(e <= 0 for e in eps):
        raise ProblemParseError(f"{where}: must be positive")
    return eps


# --------------------------------------------------------------------------
# problem files


def parse_problem(path):
    """Read a problem file into ``(PwlSystem, PropertyAutomaton, RunParameters)``."""
    doc = load_json(path)
    return problem_from_dict(doc, str(path))


def problem_from_dict(doc, where="problem"):
    if not isinstance(doc, dict):
        raise ProblemParseError(f"{where}: expected a JSON object")
    X = _box(_get(doc, "state_space", where), "state_space")
    U = _box(_get(doc, "input_space", where), "input_space")
    n, p = X.dim, U.dim
    init = doc.get("init_set")
    init_set = _box(init, "init_set", n) if init is not None else None

    pieces, names = [], []
    for k, pd in enumerate(_get(doc, "pieces", where)):
        w = f"pieces[{k}]"
        A = _matrix(_get(pd, "A", w), f"{w}.A", n, n)
        B = _matrix(_get(pd, "B", w), f"{w}.B", n, p)
        rows, rhs, strict = [], [], []
        for j, g in enumerate(pd.get("guard", [])):
            rows.append(_vector(_get(g, "a", f"{w}.guard[{j}]"), f"{w}.guard[{j}].a", n))
            rhs.append(float(as_fraction(_get(g, "b", f"{w}.guard[{j}]"))))
            strict.append(bool(g.get("strict", False)))
        region = Polyhedron(np.array(rows).reshape(len(rows), n), np.array(rhs), strict)
        pieces.append((AffineMap(A, B), region))
        names.append(pd.get("name", f"piece{k}"))

    cost = _cost(_get(doc, "cost", where), n, p)

    props = []
    for k, pr in enumerate(doc.get("propositions", [])):
        w = f"propositions[{k}]"
        boxes = [_box(b, f"{w}.boxes[{j}]", n) for j, b in enumerate(_get(pr, "boxes", w))]
        props.append((_get(pr, "name", w), boxes))
    default_label = doc.get("default_label")

    system = PwlSystem(X, U, pieces, props, cost, init_set=init_set,
                       default_label=default_label, piece_names=tuple(names))
    prop = _automaton(_get(doc, "automaton", where), system)

    x0 = _vector(_get(doc, "x0", where), "x0", n)
    params = RunParameters(
        x0=tuple(x0.tolist()),
        epsilon0=_epsilon(_get(doc, "epsilon0", where), n, "epsilon0"),
        max_iterations=int(doc.get("max_iterations", 1)),
        input_counts=tuple(int(c) for c in doc["input_counts"]) if "input_counts" in doc else None,
        refine_inputs=bool(doc.get("refine_inputs", True)),
        merge=tuple(doc.get("merge", ())),
        name=str(doc.get("name", "")),
    )
    problems = validate_problem(system, prop, params)
    if problems:
        raise ProblemValidationError(problems)
    return system, prop, params


def _cost(doc, n, p):
    if "one_norm_of_input" in doc:
        return ConvexPwlFunction.one_norm_of_input(n, p, float(doc["one_norm_of_input"]))
    pieces = _get(doc, "pieces", "cost")
    a = [_vector(pc.get("state", [0] * n), f"cost.pieces[{k}].state", n) for k, pc in enumerate(pieces)]
    b = [_vector(pc.get("input", [0] * p), f"cost.pieces[{k}].input", p) for k, pc in enumerate(pieces)]
    c = [float(as_fraction(pc.get("constant", 0))) for pc in pieces]
    if not pieces:
        raise ProblemParseError("cost.pieces: at least one piece required")
    return ConvexPwlFunction(np.array(a), np.array(b), np.array(c))


def _automaton(doc, system):
    if "reachability" in doc:
        goal = doc["reachability"]
        others = [lab for lab in system.label_names if lab != goal]
        return PropertyAutomaton.reachability(goal, others)
    w = "automaton"
    trs = [tuple(t) for t in _get(doc, "transitions", w)]
    try:
        return PropertyAutomaton(tuple(_get(doc, "states", w)), dict(_get(doc, "labels", w)),
                                 frozenset(_get(doc, "init", w)), tuple(trs), _get(doc, "final", w))
    except ValueError as exc:
        raise ProblemParseError(f"{w}: {exc}") from None


# --------------------------------------------------------------------------
# validation


def _interior_nonempty(A, b):
    """Whether ``{x : A x < b}`` is nonempty (all rows strict)."""
    d = A.shape[1]
    try:
        slack, _ = lp.solve_strict([], A, b, np.ones(b.size, bool), np.full(d, -np.inf),
                                   np.full(d, np.inf))
    except lp.InfeasibleError:
        return False
    return slack > 1e-9


def _uncovered(A, b, regions):
    """Whether ``{A x <= b}`` has interior outside the union of ``regions``."""
    if not _interior_nonempty(A, b):
        return False
    if not regions:
        return True
    RA, Rb = regions[0]
    rest = regions[1:]
    # Q \ R = union over rows k of Q ∩ {r_k x >= b_k} ∩ {r_j x <= b_j, j < k}
    for k in range(Rb.size):
        A2 = np.vstack([A, -RA[k:k + 1], RA[:k]])
        b2 = np.concatenate([b, -Rb[k:k + 1], Rb[:k]])
        if _uncovered(A2, b2, rest):
            return True
    return False


def validate_problem(system, prop, params):
    """Return a list of every violated constraint (empty when valid)."""
    out = []
    X = system.state_space
    n = system.n
    XA, Xb = X.to_polyhedron().A, X.to_polyhedron().b
    names = system.piece_names
    regions = [(r.A, r.b) for _, r in system.pieces]
    for i in range(len(regions)):
        for j in range(i + 1, len(regions)):
            A = np.vstack([XA, regions[i][0], regions[j][0]])
            b = np.concatenate([Xb, regions[i][1], regions[j][1]])
            if _interior_nonempty(A, b):
                out.append(f"pieces {names[i]!r} and {names[j]!r} overlap")
    if _uncovered(XA, Xb, regions):
        out.append("pieces do not cover the state space")

    boxes = [(name, b) for name, bs in system.propositions for b in bs]
    for name, b in boxes:
        if np.any(b.lower < X.lower) or np.any(b.upper > X.upper):
            out.append(f"proposition {name!r} has a box outside the state space")
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            (na, a), (nb, bb) = boxes[i], boxes[j]
            if na != nb and np.all(np.maximum(a.lower, bb.lower) < np.minimum(a.upper, bb.upper)):
                out.append(f"propositions {na!r} and {nb!r} overlap")
    if system.default_label is None:
        polys = [(b.to_polyhedron().A, b.to_polyhedron().b) for _, b in boxes]
        if _uncovered(XA, Xb, polys):
            out.append("propositions do not cover the state space and no default_label is given")

    labels = set(system.label_names)
    extra = set(prop.labels.values()) - labels
    if extra:
        out.append(f"automaton uses unknown propositions {sorted(extra)}")
    for name in params.merge:
        if name not in [nm for nm, _ in system.propositions]:
            out.append(f"merge names unknown proposition {name!r}")
    x0 = np.array(params.x0)
    if not X.contains_closed(x0):
        out.append(f"x0 = {params.x0} lies outside the state space")
    elif not system.init_set.contains_closed(x0):
        out.append(f"x0 = {params.x0} lies outside init_set")
    if len(params.epsilon0) != n:
        out.append("epsilon0 has the wrong dimension")
    else:
        lat = Lattice.build(X.lower, X.upper, params.epsilon0)
        for name, b in boxes:
            if not all(lat.is_aligned(v, i) for i in range(n) for v in (b.lower[i], b.upper[i])):
                out.append(f"proposition {name!r} is not aligned with the epsilon0 grid")
    if params.input_counts is not None and (len(params.input_counts) != system.p
                                            or min(params.input_counts) < 1):
        out.append("input_counts needs one positive count per input axis")
    if params.max_iterations < 1:
        out.append("max_iterations must be at least 1")
    return out


# --------------------------------------------------------------------------
# finite systems (games)


def finite_system_to_dict(wts, goal=None, start=None):
    names = wts.state_names or tuple(range(wts.n_states))
    inputs = wts.input_names or tuple(range(wts.n_inputs))
    sn = [_name(s) for s in names]
    un = [_name(u) for u in inputs]
    return {
        "states": sn,
        "inputs": un,
        "labels": {sn[s]: wts.labels[s] for s in range(wts.n_states)},
        "transitions": [[sn[s], un[u], sn[t], _num(w)] for s, u, t, w in wts.transitions()],
        "goal": goal,
        "start": sn[start] if start is not None else None,
    }


def _name(v):
    return v if isinstance(v, str) else json.dumps(v if not isinstance(v, tuple) else list(v))


def finite_system_from_dict(doc, where="system"):
    """Parse a finite-system document into ``(FiniteWts, goal, start)``."""
    states = [str(s) for s in _get(doc, "states", where)]
    inputs = [str(u) for u in _get(doc, "inputs", where)]
    si = {s: i for i, s in enumerate(states)}
    ui = {u: i for i, u in enumerate(inputs)}
    labels_doc = _get(doc, "labels", where)
    try:
        labels = [labels_doc[s] for s in states]
    except KeyError as exc:
        raise ProblemParseError(f"{where}.labels: no label for state {exc.args[0]!r}") from None
    trs = []
    for k, t in enumerate(_get(doc, "transitions", where)):
        try:
            s, u, s2, w = t
            trs.append((si[str(s)], ui[str(u)], si[str(s2)], INF if w is None else float(w)))
        except (ValueError, KeyError, TypeError):
            raise ProblemParseError(f"{where}.transitions[{k}]: bad transition {t!r}") from None
    start = doc.get("start")
    start_i = si[str(start)] if start is not None else None
    wts = FiniteWts.from_transitions(len(states), len(inputs), trs, labels,
                                     init_states={start_i} if start_i is not None else set(),
                                     state_names=tuple(states), input_names=tuple(inputs))
    return wts, doc.get("goal"), start_i


# --------------------------------------------------------------------------
# reports and trajectories


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def _unnum(v):
    return INF if v is None else float(v)


def trajectory_to_dict(tr):
    return {
        "states": tr.states.tolist(),
        "inputs": tr.inputs.tolist(),
        "stage_costs": tr.stage_costs.tolist(),
        "pieces": list(tr.pieces),
        "total_cost": tr.total_cost,
    }


def trajectory_from_dict(doc):
    states = np.array(doc["states"], dtype=float)
    inputs = np.array(doc["inputs"], dtype=float).reshape(len(doc["inputs"]), -1)
    return Trajectory(states, inputs, np.array(doc["stage_costs"], dtype=float),
                      tuple(doc.get("pieces", ())))


def report_to_dict(r):
    """Serializable view of a report; wall times are kept out for determinism."""
    tr = r.trajectory
    return {
        "iteration": r.iteration,
        "epsilon": [str(e) for e in r.epsilon],
        "input_epsilon": [str(e) for e in r.input_epsilon],
        "abstract_cost": _num(r.abstract_cost),
        "winning": r.winning,
        "concrete_cost": None if tr is None else tr.total_cost,
        "steps": None if tr is None else tr.steps,
        "final_point": None if tr is None else tr.final_point.tolist(),
        "abstract_state_count": r.abstract_state_count,
        "transition_count": r.transition_count,
        "trajectory": None if tr is None else trajectory_to_dict(tr),
    }


def report_from_dict(doc):
    tr = doc.get("trajectory")
    return RefinementReport(
        iteration=int(doc["iteration"]),
        epsilon=tuple(Fraction(e) for e in doc["epsilon"]),
        input_epsilon=tuple(Fraction(e) for e in doc["input_epsilon"]),
        abstract_cost=_unnum(doc["abstract_cost"]),
        winning=bool(doc["winning"]),
        trajectory=None if tr is None else trajectory_from_dict(tr),
        abstract_state_count=int(doc["abstract_state_count"]),
        transition_count=int(doc["transition_count"]),
    )


def dumps_reports(reports):
    return json.dumps([report_to_dict(r) for r in reports], indent=2) + "\n"


def loads_reports(text):
    return [report_from_dict(d) for d in json.loads(text)]


def trajectory_to_csv(tr):
    """Table with header ``step,x1..xn,u1..up,stage_cost``; the last row has no input."""
    n = tr.states.shape[1]
    p = tr.inputs.shape[1] if tr.inputs.size else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(p)]
               + ["stage_cost"])
    fmt = "%.17g"
    for t, x in enumerate(tr.states):
        row = [str(t)] + [fmt % v for v in x]
        if t < tr.steps:
            row += [fmt % v for v in tr.inputs[t]] + [fmt % tr.stage_costs[t]]
        else:
            row += [""] * p + [""]
        w.writerow(row)
    return buf.getvalue()


def trajectory_from_csv(text):
    """Inverse of :func:`trajectory_to_csv` (piece indices are not stored)."""
    rows = list(csv.reader(io.StringIO(text)))
    header = rows[0]
    n = sum(1 for h in header if h.startswith("x"))
    p = sum(1 for h in header if h.startswith("u"))
    states, inputs, costs = [], [], []
    for row in rows[1:]:
        states.append([float(v) for v in row[1:1 + n]])
        if row[1 + n] != "":
            inputs.append([float(v) for v in row[1 + n:1 + n + p]])
            costs.append(float(row[-1]))
    return Trajectory(np.array(states), np.array(inputs).reshape(len(inputs), p),
                      np.array(costs, dtype=float))


def parse_inputs(text, p):
    """Input sequence from ``zeros(N)``, a JSON list, or a CSV/JSON file path."""
    text = text.strip()
    if text.startswith("zeros(") and text.endswith(")"):
        return np.zeros((int(text[6:-1]), p))
    if text.startswith("["):
        return np.array(json.loads(text), dtype=float).reshape(-1, p)
    path = Path(text)
    if path.suffix == ".csv":
        return trajectory_from_csv(path.read_text()).inputs
    return np.array(json.loads(path.read_text()), dtype=float).reshape(-1, p)
